//! Guided velocity composition and the two-phase schedule.
//!
//! Three composition rules are supported, each summed in the fixed order
//! written below so results are bit-reproducible:
//!
//! * vanilla CFG: `v(∅,∅) + w·(v(c_vid,c_tar) − v(∅,∅))`
//! * decomposed: `v(∅,∅) + w_vid·(v(c_vid,∅) − v(∅,∅)) + w_txt·(v(∅,c_tar) − v(∅,c_src))`
//! * negative text: `v(∅,∅) + w_cfg·(v(∅,c_tar) − v(∅,c_src))`
//!
//! A null source text turns both text contrasts into plain text CFG against
//! `v(∅,∅)`. Ablations are expressed purely through [`GuidanceSpec`] values;
//! see [`Variant`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{evaluate_shared, VelocityField};
use crate::condition::{ConditionId, ConditionPair};
use crate::error::{Error, Result};
use crate::latent::Latent;

/// Default weights: `w_vid = 3.0`, `w_txt = 5.0`, `w_cfg = 4.5`. The vanilla
/// weight has no published value for this method and follows `w_cfg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceWeights {
    pub w_vid: f64,
    pub w_txt: f64,
    pub w_cfg: f64,
    pub w_vanilla: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self { w_vid: 3.0, w_txt: 5.0, w_cfg: 4.5, w_vanilla: 4.5 }
    }
}

impl GuidanceWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in
            [("w_vid", self.w_vid), ("w_txt", self.w_txt), ("w_cfg", self.w_cfg), ("w_vanilla", self.w_vanilla)]
        {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuidanceForm {
    Unguided,
    VanillaCfg,
    Decomposed,
    NegativeText,
}

impl GuidanceForm {
    pub fn tag(self) -> &'static str {
        match self {
            GuidanceForm::Unguided => "unguided",
            GuidanceForm::VanillaCfg => "vanilla_cfg",
            GuidanceForm::Decomposed => "decomposed",
            GuidanceForm::NegativeText => "negative_text",
        }
    }
}

impl fmt::Display for GuidanceForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    pub form: GuidanceForm,
    pub weights: GuidanceWeights,
    pub video: ConditionId,
    pub target_text: ConditionId,
    pub source_text: ConditionId,
}

impl GuidanceSpec {
    /// Single conditional evaluation of `(video, target_text)`.
    pub fn unguided(video: ConditionId, text: ConditionId) -> Self {
        Self {
            form: GuidanceForm::Unguided,
            weights: GuidanceWeights::default(),
            video,
            target_text: text,
            source_text: ConditionId::null_text(),
        }
    }

    pub fn vanilla(weights: GuidanceWeights, video: ConditionId, target: ConditionId) -> Self {
        Self {
            form: GuidanceForm::VanillaCfg,
            weights,
            video,
            target_text: target,
            source_text: ConditionId::null_text(),
        }
    }

    pub fn decomposed(weights: GuidanceWeights, video: ConditionId, target: ConditionId, source: ConditionId) -> Self {
        Self { form: GuidanceForm::Decomposed, weights, video, target_text: target, source_text: source }
    }

    pub fn negative(weights: GuidanceWeights, target: ConditionId, source: ConditionId) -> Self {
        Self {
            form: GuidanceForm::NegativeText,
            weights,
            video: ConditionId::null_video(),
            target_text: target,
            source_text: source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        // Slot kinds.
        ConditionPair::new(self.video.clone(), self.target_text.clone()).map_err(|e| Error::Spec(e.to_string()))?;
        ConditionPair::new(self.video.clone(), self.source_text.clone()).map_err(|e| Error::Spec(e.to_string()))?;
        match self.form {
            GuidanceForm::Unguided | GuidanceForm::VanillaCfg => Ok(()),
            GuidanceForm::Decomposed if self.target_text.is_null() => {
                Err(Error::Spec("decomposed guidance needs a target text".into()))
            }
            GuidanceForm::NegativeText if self.target_text.is_null() => {
                Err(Error::Spec("negative-text guidance needs a target text".into()))
            }
            GuidanceForm::NegativeText if !self.video.is_null() => {
                Err(Error::Spec("negative-text guidance must not carry a video condition".into()))
            }
            _ => Ok(()),
        }
    }

    /// Condition pairs in the order the compose step consumes them, before
    /// deduplication.
    pub fn condition_pairs(&self) -> Vec<ConditionPair> {
        let null = ConditionPair::null();
        let pair = |v: &ConditionId, x: &ConditionId| ConditionPair::from_ids(v.id(), x.id());
        let nv = ConditionId::null_video();
        match self.form {
            GuidanceForm::Unguided => vec![pair(&self.video, &self.target_text)],
            GuidanceForm::VanillaCfg => vec![null, pair(&self.video, &self.target_text)],
            GuidanceForm::Decomposed => vec![
                null,
                pair(&self.video, &ConditionId::null_text()),
                pair(&nv, &self.target_text),
                pair(&nv, &self.source_text),
            ],
            GuidanceForm::NegativeText => vec![null, pair(&nv, &self.target_text), pair(&nv, &self.source_text)],
        }
    }

    /// Weight actually multiplying the text contrast of this spec, if any.
    pub fn weight_summary(&self) -> String {
        let w = &self.weights;
        match self.form {
            GuidanceForm::Unguided => String::new(),
            GuidanceForm::VanillaCfg => format!("w={}", w.w_vanilla),
            GuidanceForm::Decomposed => format!("w_vid={} w_txt={}", w.w_vid, w.w_txt),
            GuidanceForm::NegativeText => format!("w_cfg={}", w.w_cfg),
        }
    }
}

fn check_shapes(first: &Latent, rest: &[&Latent]) -> Result<()> {
    rest.iter().try_for_each(|l| first.ensure_same_shape(l))
}

/// `v_null + w·(v_joint − v_null)`.
pub fn compose_vanilla(v_joint: &Latent, v_null: &Latent, w: f64) -> Result<Latent> {
    check_shapes(v_null, &[v_joint])?;
    let data = v_null.as_slice().iter().zip(v_joint.as_slice()).map(|(&n, &j)| n + w * (j - n)).collect();
    Latent::from_vec(v_null.frames(), v_null.dims(), data)
}

/// `v_null + w_vid·(v_vid − v_null) + w_txt·(v_tar − v_src)`.
pub fn compose_decomposed(
    v_null: &Latent,
    v_vid: &Latent,
    v_tar: &Latent,
    v_src: &Latent,
    w_vid: f64,
    w_txt: f64,
) -> Result<Latent> {
    check_shapes(v_null, &[v_vid, v_tar, v_src])?;
    if !w_vid.is_finite() || !w_txt.is_finite() {
        return Err(Error::Parameter("guidance weights must be finite".into()));
    }
    let data = (0..v_null.as_slice().len())
        .map(|i| {
            let n = v_null.as_slice()[i];
            n + w_vid * (v_vid.as_slice()[i] - n) + w_txt * (v_tar.as_slice()[i] - v_src.as_slice()[i])
        })
        .collect();
    Latent::from_vec(v_null.frames(), v_null.dims(), data)
}

/// `v_null + w_cfg·(v_tar − v_src)`.
pub fn compose_negative(v_null: &Latent, v_tar: &Latent, v_src: &Latent, w_cfg: f64) -> Result<Latent> {
    check_shapes(v_null, &[v_tar, v_src])?;
    let data = v_null
        .as_slice()
        .iter()
        .zip(v_tar.as_slice().iter().zip(v_src.as_slice()))
        .map(|(&n, (&a, &b))| n + w_cfg * (a - b))
        .collect();
    Latent::from_vec(v_null.frames(), v_null.dims(), data)
}

/// Evaluates the conditionals `spec` needs at `(latent, t)` in a single
/// deduplicated batch and composes them.
pub fn guided_velocity<B: VelocityField + ?Sized>(
    backend: &B,
    latent: &Latent,
    t: f64,
    spec: &GuidanceSpec,
) -> Result<Latent> {
    spec.validate()?;
    let v = evaluate_shared(backend, latent, t, &spec.condition_pairs())?;
    let w = &spec.weights;
    match spec.form {
        GuidanceForm::Unguided => Ok(v.into_iter().next().expect("one velocity")),
        GuidanceForm::VanillaCfg => compose_vanilla(&v[1], &v[0], w.w_vanilla),
        GuidanceForm::Decomposed => compose_decomposed(&v[0], &v[1], &v[2], &v[3], w.w_vid, w.w_txt),
        GuidanceForm::NegativeText => compose_negative(&v[0], &v[1], &v[2], w.w_cfg),
    }
}

/// Phase 1 runs for step indices `[0, n_trans)`, phase 2 for `[n_trans, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    pub n_trans: usize,
    pub phase1: GuidanceSpec,
    pub phase2: GuidanceSpec,
}

impl PhaseSchedule {
    /// Same spec at every step.
    pub fn constant(spec: GuidanceSpec) -> Self {
        Self { n_trans: 0, phase1: spec.clone(), phase2: spec }
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if self.n_trans > n_steps {
            return Err(Error::Parameter(format!("transition step {} exceeds grid length {n_steps}", self.n_trans)));
        }
        self.phase1.validate()?;
        self.phase2.validate()
    }

    pub fn swapped(&self) -> Self {
        Self { n_trans: self.n_trans, phase1: self.phase2.clone(), phase2: self.phase1.clone() }
    }

    pub fn select(&self, step: usize, n_steps: usize) -> Result<&GuidanceSpec> {
        if step >= n_steps {
            return Err(Error::Parameter(format!("step {step} out of range for {n_steps} steps")));
        }
        Ok(if step < self.n_trans { &self.phase1 } else { &self.phase2 })
    }
}

pub fn select_spec(schedule: &PhaseSchedule, step: usize, n_steps: usize) -> Result<&GuidanceSpec> {
    schedule.select(step, n_steps)
}

/// Named sampling configurations: the full method and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Decomposed guidance, then negative-text guidance.
    Counterflow,
    /// Phase 2 contrasts against `v(∅,∅)` instead of the source prompt.
    NoP2Neg,
    /// Phase 1 uses vanilla CFG on the joint (video, target) pair.
    NoP1Decomp,
    /// Phase 1 text contrast against `v(∅,∅)` instead of the source prompt.
    NoP1Neg,
    /// Phase 1 and phase 2 specs exchanged.
    PhaseSwap,
    /// Vanilla joint CFG at every step.
    VanillaOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Counterflow,
        Variant::NoP2Neg,
        Variant::NoP1Decomp,
        Variant::NoP1Neg,
        Variant::PhaseSwap,
        Variant::VanillaOnly,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Counterflow => "counterflow",
            Variant::NoP2Neg => "no_p2_neg",
            Variant::NoP1Decomp => "no_p1_decomp",
            Variant::NoP1Neg => "no_p1_neg",
            Variant::PhaseSwap => "phase_swap",
            Variant::VanillaOnly => "vanilla_only",
        }
    }

    pub fn schedule(
        self,
        video: &str,
        target: &str,
        source: &str,
        weights: GuidanceWeights,
        n_trans: usize,
    ) -> PhaseSchedule {
        let (v, tar, src) = (ConditionId::video(video), ConditionId::text(target), ConditionId::text(source));
        let nt = ConditionId::null_text();
        let decomposed = GuidanceSpec::decomposed(weights, v.clone(), tar.clone(), src.clone());
        let negative = GuidanceSpec::negative(weights, tar.clone(), src);
        let vanilla = GuidanceSpec::vanilla(weights, v.clone(), tar.clone());
        let base = PhaseSchedule { n_trans, phase1: decomposed.clone(), phase2: negative.clone() };
        match self {
            Variant::Counterflow => base,
            Variant::NoP2Neg => PhaseSchedule { phase2: GuidanceSpec::negative(weights, tar, nt), ..base },
            Variant::NoP1Decomp => PhaseSchedule { phase1: vanilla, ..base },
            Variant::NoP1Neg => PhaseSchedule { phase1: GuidanceSpec::decomposed(weights, v, tar, nt), ..base },
            Variant::PhaseSwap => base.swapped(),
            Variant::VanillaOnly => PhaseSchedule { n_trans, phase1: vanilla.clone(), phase2: vanilla },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == s).ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}
