//! Analytic Gaussian-mixture world with closed-form rectified-flow velocities.
//!
//! Every latent has `frames × (1 + K)` entries: dim 0 of each frame is the
//! event energy, dims `1..=K` carry the sound identity. A scene pairs each
//! video (an activity envelope) with the text it implies; a component for
//! `(video, text)` has energy mean `e[f]` and identity mean `e[f]·μ_text`, so
//! identity only exists where the envelope is active.
//!
//! Along the path `z_t = (1−t)·x_0 + t·x_1` with `x_0 ~ N(0, I)`, each diagonal
//! component with data variance `s` gives `z_t | k ~ N(t·μ_k, (1−t)² + t²·s)`
//! and the conditional velocity
//! `E[x_1 − x_0 | z, k] = μ_k + (t·s − (1−t)) / ((1−t)² + t²·s) · (z − t·μ_k)`.
//! The marginal velocity mixes these with log-space responsibilities.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{VelocityBatch, VelocityField};
use crate::condition::{ConditionKind, ConditionPair};
use crate::error::{Error, Result};
use crate::latent::{Latent, NormalStream, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoScene {
    pub envelope: Vec<f64>,
    /// The text id this video visually implies.
    pub implies: String,
}

fn default_dominance() -> f64 {
    0.9
}
fn default_threshold() -> f64 {
    0.2
}
fn default_gate_floor() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRegistry {
    pub frames: usize,
    pub identity_dims: usize,
    pub noise_std: f64,
    /// Weight the joint conditional of a conflicting pair keeps on the
    /// video's implied text.
    #[serde(default = "default_dominance")]
    pub dominance: f64,
    /// Frames whose |energy| falls below this are treated as silent.
    #[serde(default = "default_threshold")]
    pub activity_threshold: f64,
    /// Silent frames score `gate_floor / texts` for every text.
    #[serde(default = "default_gate_floor")]
    pub gate_floor: f64,
    /// Spread of the identity detector; defaults to `noise_std`.
    #[serde(default)]
    pub detector_std: Option<f64>,
    pub videos: BTreeMap<String, VideoScene>,
    pub texts: BTreeMap<String, Vec<f64>>,
}

impl SceneRegistry {
    /// Three videos with disjoint four-frame bursts over 16 frames, three
    /// identities of norm 0.5 in 4 dims, `σ = 0.15`, `λ = 0.9`.
    ///
    /// Identities are kept at half the event energy so detector posteriors
    /// stay graded instead of saturating at 0 or 1.
    pub fn desk() -> Self {
        let env = |active: &[usize]| {
            let mut e = vec![0.0; 16];
            for &f in active {
                e[f] = 1.0;
            }
            e
        };
        let videos = BTreeMap::from([
            ("dog_video".to_owned(), VideoScene { envelope: env(&[1, 2, 3, 4]), implies: "dog_bark".into() }),
            ("hammer_video".to_owned(), VideoScene { envelope: env(&[6, 7, 8, 9]), implies: "hammering".into() }),
            ("engine_video".to_owned(), VideoScene { envelope: env(&[11, 12, 13, 14]), implies: "engine".into() }),
        ]);
        let texts = BTreeMap::from([
            ("dog_bark".to_owned(), vec![0.5, 0.0, 0.0, 0.0]),
            ("hammering".to_owned(), vec![0.0, 0.5, 0.0, 0.0]),
            ("engine".to_owned(), vec![0.0, 0.0, 0.5, 0.0]),
        ]);
        Self {
            frames: 16,
            identity_dims: 4,
            noise_std: 0.15,
            dominance: default_dominance(),
            activity_threshold: default_threshold(),
            gate_floor: default_gate_floor(),
            detector_std: None,
            videos,
            texts,
        }
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let reg: SceneRegistry = toml::from_str(src).map_err(|e| Error::Config(format!("scene: {e}")))?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scene {}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.identity_dims == 0 {
            return bad("scene needs frames >= 1 and identity_dims >= 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return bad(format!("noise_std must be positive, got {}", self.noise_std));
        }
        if let Some(s) = self.detector_std {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("detector_std must be positive, got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.dominance) {
            return bad(format!("dominance must lie in [0, 1], got {}", self.dominance));
        }
        if !(self.activity_threshold.is_finite() && self.activity_threshold >= 0.0) {
            return bad("activity_threshold must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.gate_floor) {
            return bad("gate_floor must lie in [0, 1]".into());
        }
        if self.videos.is_empty() || self.texts.is_empty() {
            return bad("scene needs at least one video and one text".into());
        }
        let bad_id = |id: &str| id.is_empty() || id.len() > 256 || id.contains([',', '\n', '\r', '"']);
        for (id, mu) in &self.texts {
            if bad_id(id) {
                return bad(format!("invalid text id {id:?}"));
            }
            if mu.len() != self.identity_dims || mu.iter().any(|x| !x.is_finite()) {
                return bad(format!("text `{id}` needs {} finite identity values", self.identity_dims));
            }
        }
        for (id, v) in &self.videos {
            if bad_id(id) {
                return bad(format!("invalid video id {id:?}"));
            }
            if v.envelope.len() != self.frames || v.envelope.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return bad(format!("video `{id}` needs {} envelope values in [0, 1]", self.frames));
            }
            if !self.texts.contains_key(&v.implies) {
                return bad(format!("video `{id}` implies unknown text `{}`", v.implies));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        1 + self.identity_dims
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dims())
    }

    pub fn detector_std(&self) -> f64 {
        self.detector_std.unwrap_or(self.noise_std)
    }

    pub fn video(&self, id: &str) -> Result<&VideoScene> {
        self.videos.get(id).ok_or_else(|| Error::UnknownCondition { kind: ConditionKind::Video, id: id.to_owned() })
    }

    pub fn text(&self, id: &str) -> Result<&[f64]> {
        self.texts
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownCondition { kind: ConditionKind::Text, id: id.to_owned() })
    }

    pub fn text_ids(&self) -> impl Iterator<Item = &str> {
        self.texts.keys().map(String::as_str)
    }

    /// Mean of the data generated by `video` with the identity of `text`.
    pub fn component_mean(&self, video: &str, text: &str) -> Result<Vec<f64>> {
        let env = &self.video(video)?.envelope;
        let mu = self.text(text)?;
        let d = self.dims();
        let mut mean = vec![0.0; self.frames * d];
        for (f, &e) in env.iter().enumerate() {
            mean[f * d] = e;
            for (k, &m) in mu.iter().enumerate() {
                mean[f * d + 1 + k] = e * m;
            }
        }
        Ok(mean)
    }

    fn component(&self, weight: f64, video: &str, text: &str) -> Result<MixtureComponent> {
        let mean = self.component_mean(video, text)?;
        let var = vec![self.noise_std * self.noise_std; mean.len()];
        Ok(MixtureComponent { weight, mean, var })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Data distribution the scene associates with `cond`.
///
/// Conflicting pairs blend the video's implied component (weight `λ`) with
/// the requested one, modelling a joint conditional trained only on
/// congruent data.
pub fn conditional_mixture(reg: &SceneRegistry, cond: &ConditionPair) -> Result<Vec<MixtureComponent>> {
    match (cond.video().id(), cond.text().id()) {
        (Some(v), Some(x)) => {
            let implied = reg.video(v)?.implies.as_str();
            reg.text(x)?;
            let lambda = reg.dominance;
            if x == implied || lambda >= 1.0 {
                Ok(vec![reg.component(1.0, v, implied)?])
            } else if lambda <= 0.0 {
                Ok(vec![reg.component(1.0, v, x)?])
            } else {
                Ok(vec![reg.component(lambda, v, implied)?, reg.component(1.0 - lambda, v, x)?])
            }
        }
        (Some(v), None) => {
            reg.video(v)?;
            let w = 1.0 / reg.texts.len() as f64;
            reg.text_ids().map(|x| reg.component(w, v, x)).collect()
        }
        (None, Some(x)) => {
            reg.text(x)?;
            let w = 1.0 / reg.videos.len() as f64;
            reg.videos.keys().map(|v| reg.component(w, v, x)).collect()
        }
        (None, None) => {
            let w = 1.0 / reg.videos.len() as f64;
            reg.videos.iter().map(|(v, s)| reg.component(w, v, &s.implies)).collect()
        }
    }
}

fn check_mixture(mixture: &[MixtureComponent], len: usize) -> Result<()> {
    if mixture.is_empty() {
        return Err(Error::Parameter("empty mixture".into()));
    }
    for c in mixture {
        if c.mean.len() != len || c.var.len() != len {
            return Err(Error::Shape(format!("component has {} dims, latent has {len}", c.mean.len())));
        }
        if !(c.weight >= 0.0 && c.weight.is_finite()) || c.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("mixture weights must be >= 0 and variances > 0".into()));
        }
    }
    if mixture.iter().all(|c| c.weight == 0.0) {
        return Err(Error::Parameter("mixture has no positive weight".into()));
    }
    Ok(())
}

/// Posterior component probabilities of `z` at time `t`.
pub fn responsibilities(mixture: &[MixtureComponent], z: &[f64], t: f64) -> Vec<f64> {
    if let [only] = mixture {
        return vec![if only.weight > 0.0 { 1.0 } else { 0.0 }];
    }
    let u = 1.0 - t;
    let logs: Vec<f64> = mixture
        .iter()
        .map(|c| {
            if c.weight == 0.0 {
                return f64::NEG_INFINITY;
            }
            // Variances are usually shared across dims; take each log once.
            let mut last = (f64::NAN, 0.0);
            let ll: f64 = z
                .iter()
                .zip(c.mean.iter().zip(&c.var))
                .map(|(&x, (&m, &s))| {
                    let var = u * u + t * t * s;
                    if s != last.0 {
                        last = (s, var.ln());
                    }
                    let d = x - t * m;
                    d * d / var + last.1
                })
                .sum();
            c.weight.ln() - 0.5 * ll
        })
        .collect();
    softmax(&logs)
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Closed-form rectified-flow velocity of the mixture at `(z, t)`.
pub fn marginal_velocity(mixture: &[MixtureComponent], z: &Latent, t: f64) -> Result<Latent> {
    let x = z.as_slice();
    check_mixture(mixture, x.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("time {t} outside [0, 1]")));
    }
    let r = responsibilities(mixture, x, t);
    let u = 1.0 - t;
    let mut v = vec![0.0; x.len()];
    for (c, &rk) in mixture.iter().zip(&r) {
        if rk == 0.0 {
            continue;
        }
        for (i, out) in v.iter_mut().enumerate() {
            let s = c.var[i];
            let coef = (t * s - u) / (u * u + t * t * s);
            *out += rk * (c.mean[i] + coef * (x[i] - t * c.mean[i]));
        }
    }
    Latent::from_vec(z.frames(), z.dims(), v)
}

/// Draws `n` i.i.d. samples from the mixture.
pub fn sample_data(mixture: &[MixtureComponent], shape: (usize, usize), n: usize, seed: Seed) -> Result<Vec<Latent>> {
    check_mixture(mixture, shape.0 * shape.1)?;
    if n == 0 {
        return Err(Error::Parameter("sample count must be >= 1".into()));
    }
    let total: f64 = mixture.iter().map(|c| c.weight).sum();
    let mut rng = NormalStream::new(seed);
    (0..n)
        .map(|_| {
            let pick = rng.uniform() * total;
            let mut acc = 0.0;
            let comp = mixture
                .iter()
                .find(|c| {
                    acc += c.weight;
                    c.weight > 0.0 && pick < acc
                })
                .or_else(|| mixture.iter().rev().find(|c| c.weight > 0.0))
                .expect("positive weight exists");
            let data = comp.mean.iter().zip(&comp.var).map(|(m, s)| m + s.sqrt() * rng.next_normal()).collect();
            Latent::from_vec(shape.0, shape.1, data)
        })
        .collect()
}

/// Frame-level identity detector: posterior over texts for one frame.
///
/// The identity dims of an active frame are scored against `a·μ_text`, where
/// `a` is the frame's observed |energy|, with an isotropic Gaussian of spread
/// `detector_std` and a uniform prior. Frames below the activity threshold
/// score `gate_floor / texts` for every text.
pub fn classify_identity(reg: &SceneRegistry, z: &Latent, frame: usize) -> Result<BTreeMap<String, f64>> {
    if z.shape() != reg.shape() {
        return Err(Error::Shape(format!("latent {:?} does not match scene {:?}", z.shape(), reg.shape())));
    }
    if frame >= reg.frames {
        return Err(Error::Parameter(format!("frame {frame} out of range for {} frames", reg.frames)));
    }
    let row = z.row(frame);
    let energy = row[0].abs();
    let n = reg.texts.len() as f64;
    if energy < reg.activity_threshold {
        return Ok(reg.text_ids().map(|x| (x.to_owned(), reg.gate_floor / n)).collect());
    }
    let var = reg.detector_std().powi(2);
    let logs: Vec<f64> = reg
        .texts
        .values()
        .map(|mu| -0.5 * row[1..].iter().zip(mu).map(|(y, m)| (y - energy * m).powi(2)).sum::<f64>() / var)
        .collect();
    Ok(reg.text_ids().map(str::to_owned).zip(softmax(&logs)).collect())
}

/// The analytic backend: every conditional is an exact mixture velocity.
#[derive(Debug, Clone)]
pub struct GmmBackend {
    registry: Arc<SceneRegistry>,
}

impl GmmBackend {
    pub fn new(registry: SceneRegistry) -> Self {
        Self { registry: Arc::new(registry) }
    }

    pub fn from_arc(registry: Arc<SceneRegistry>) -> Self {
        Self { registry }
    }

    pub fn registry(&self) -> &SceneRegistry {
        &self.registry
    }

    pub fn velocity(&self, z: &Latent, t: f64, cond: &ConditionPair) -> Result<Latent> {
        if z.shape() != self.registry.shape() {
            return Err(Error::Shape(format!(
                "latent {:?} does not match scene {:?}",
                z.shape(),
                self.registry.shape()
            )));
        }
        let mixture = conditional_mixture(&self.registry, cond)?;
        marginal_velocity(&mixture, z, t)
    }
}

impl VelocityField for GmmBackend {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        batch.requests().iter().map(|r| self.velocity(&r.latent, r.t, &r.cond)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::init_latent;

    fn single(mean: Vec<f64>, var: f64) -> Vec<MixtureComponent> {
        let n = mean.len();
        vec![MixtureComponent { weight: 1.0, mean, var: vec![var; n] }]
    }

    #[test]
    fn desk_scene_is_valid() {
        let reg = SceneRegistry::desk();
        reg.validate().unwrap();
        assert_eq!(reg.shape(), (16, 5));
        let back = SceneRegistry::from_toml(&reg.to_toml()).unwrap();
        assert_eq!(back, reg);
    }

    #[test]
    fn scene_validation_errors() {
        let mut reg = SceneRegistry::desk();
        reg.videos.get_mut("dog_video").unwrap().implies = "cat".into();
        assert!(reg.validate().is_err());
        let mut reg = SceneRegistry::desk();
        reg.noise_std = 0.0;
        assert!(reg.validate().is_err());
        let mut reg = SceneRegistry::desk();
        reg.texts.insert("short".into(), vec![1.0]);
        assert!(reg.validate().is_err());
        assert!(SceneRegistry::from_toml("frames = 3\nbogus = 1").is_err());
    }

    #[test]
    fn mixture_shapes() {
        let reg = SceneRegistry::desk();
        let congruent =
            conditional_mixture(&reg, &ConditionPair::from_ids(Some("dog_video"), Some("dog_bark"))).unwrap();
        assert_eq!(congruent.len(), 1);
        assert_eq!(congruent[0].weight, 1.0);

        let null = conditional_mixture(&reg, &ConditionPair::null()).unwrap();
        assert_eq!(null.len(), 3);
        assert!(null.iter().all(|c| (c.weight - 1.0 / 3.0).abs() < 1e-15));

        let conflict = conditional_mixture(&reg, &ConditionPair::from_ids(Some("dog_video"), Some("engine"))).unwrap();
        assert_eq!(conflict.len(), 2);
        assert_eq!(conflict[0].weight, 0.9);
        assert_eq!(conflict[0].mean, reg.component_mean("dog_video", "dog_bark").unwrap());
        assert_eq!(conflict[1].mean, reg.component_mean("dog_video", "engine").unwrap());

        assert!(conditional_mixture(&reg, &ConditionPair::from_ids(Some("cat"), None)).is_err());
        assert!(matches!(
            conditional_mixture(&reg, &ConditionPair::from_ids(None, Some("cat"))),
            Err(Error::UnknownCondition { kind: ConditionKind::Text, .. })
        ));
    }

    #[test]
    fn two_videos_null_mixture() {
        let mut reg = SceneRegistry::desk();
        reg.videos.remove("engine_video");
        let null = conditional_mixture(&reg, &ConditionPair::null()).unwrap();
        assert_eq!(null.iter().map(|c| c.weight).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn dominance_limits() {
        let mut reg = SceneRegistry::desk();
        let pair = ConditionPair::from_ids(Some("dog_video"), Some("engine"));
        reg.dominance = 1.0;
        let full = conditional_mixture(&reg, &pair).unwrap();
        let congruent =
            conditional_mixture(&reg, &ConditionPair::from_ids(Some("dog_video"), Some("dog_bark"))).unwrap();
        assert_eq!(full, congruent);
        reg.dominance = 0.0;
        let none = conditional_mixture(&reg, &pair).unwrap();
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].mean, reg.component_mean("dog_video", "engine").unwrap());
    }

    #[test]
    fn null_mixture_is_union_of_congruent() {
        let reg = SceneRegistry::desk();
        let null = conditional_mixture(&reg, &ConditionPair::null()).unwrap();
        let w = 1.0 / reg.videos.len() as f64;
        let union: Vec<_> = reg
            .videos
            .iter()
            .flat_map(|(v, s)| {
                conditional_mixture(&reg, &ConditionPair::from_ids(Some(v), Some(&s.implies)))
                    .unwrap()
                    .into_iter()
                    .map(|c| MixtureComponent { weight: w * c.weight, ..c })
            })
            .collect();
        assert_eq!(null, union);
    }

    #[test]
    fn velocity_at_t0_is_mean_minus_z() {
        let mu = vec![0.5, -1.0, 2.0, 0.25];
        let z = Latent::from_vec(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let v = marginal_velocity(&single(mu.clone(), 1.0), &z, 0.0).unwrap();
        for ((v, m), x) in v.as_slice().iter().zip(&mu).zip(z.as_slice()) {
            assert!((v - (m - x)).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_cases() {
        let zero = Latent::zeros(2, 2).unwrap();
        for t in [0.0, 0.3, 0.9, 1.0] {
            let v = marginal_velocity(&single(vec![0.0; 4], 1.0), &zero, t).unwrap();
            assert!(v.as_slice().iter().all(|x| *x == 0.0));
        }
        let mu = vec![1.0, -0.5, 0.25, 2.0];
        let mixture = vec![
            MixtureComponent { weight: 0.5, mean: mu.clone(), var: vec![0.04; 4] },
            MixtureComponent { weight: 0.5, mean: mu.iter().map(|m| -m).collect(), var: vec![0.04; 4] },
        ];
        for t in [0.1, 0.5, 0.95] {
            let v = marginal_velocity(&mixture, &zero, t).unwrap();
            let along: f64 = v.as_slice().iter().zip(&mu).map(|(a, b)| a * b).sum();
            assert!(along.abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_finite_everywhere() {
        let reg = SceneRegistry::desk();
        let mix = conditional_mixture(&reg, &ConditionPair::null()).unwrap();
        let z = init_latent(reg.shape(), Seed(3)).unwrap().map(|x| 40.0 * x);
        let mut prev: Option<Latent> = None;
        for i in 0..=2000 {
            let t = i as f64 / 2000.0;
            let v = marginal_velocity(&mix, &z, t).unwrap();
            assert!(v.is_finite(), "t={t}");
            if let Some(p) = prev {
                let jump = v.as_slice().iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(jump < 50.0, "jump {jump} at t={t}");
            }
            prev = Some(v);
        }
    }

    #[test]
    fn empty_mixture_rejected() {
        let z = Latent::zeros(1, 2).unwrap();
        assert!(marginal_velocity(&[], &z, 0.5).is_err());
        assert!(marginal_velocity(&single(vec![0.0; 2], 1.0), &z, 1.5).is_err());
    }

    #[test]
    fn sample_data_examples() {
        let mean = vec![0.3, -0.2, 1.0, 2.0];
        let tight = single(mean.clone(), 1e-12);
        for s in sample_data(&tight, (2, 2), 50, Seed(1)).unwrap() {
            assert!(s.as_slice().iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-4));
        }
        let two = vec![
            MixtureComponent { weight: 1.0, mean: vec![1.0; 4], var: vec![1e-6; 4] },
            MixtureComponent { weight: 0.0, mean: vec![-1.0; 4], var: vec![1e-6; 4] },
        ];
        assert!(sample_data(&two, (2, 2), 500, Seed(2)).unwrap().iter().all(|s| s.as_slice()[0] > 0.0));
        assert!(sample_data(&two, (2, 2), 0, Seed(2)).is_err());
        let a = sample_data(&two, (2, 2), 5, Seed(9)).unwrap();
        assert_eq!(a, sample_data(&two, (2, 2), 5, Seed(9)).unwrap());
    }

    #[test]
    fn sample_frequencies_follow_weights() {
        // sd of a frequency over 5000 draws at p = 0.3 is 0.0065; ±0.03 is > 4 sd.
        let mix = vec![
            MixtureComponent { weight: 0.3, mean: vec![5.0; 4], var: vec![0.01; 4] },
            MixtureComponent { weight: 0.7, mean: vec![-5.0; 4], var: vec![0.01; 4] },
        ];
        let draws = sample_data(&mix, (2, 2), 5000, Seed(77)).unwrap();
        let first = draws.iter().filter(|s| s.as_slice()[0] > 0.0).count() as f64 / 5000.0;
        assert!((first - 0.3).abs() < 0.03, "{first}");
    }

    #[test]
    fn classifier_examples() {
        let reg = SceneRegistry::desk();
        let mean = reg.component_mean("engine_video", "hammering").unwrap();
        let z = Latent::from_vec(16, 5, mean).unwrap();
        let p = classify_identity(&reg, &z, 12).unwrap();
        let best = p.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, "hammering");
        assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-12);

        // Identity halfway between two means scores them equally.
        let mut z = Latent::zeros(16, 5).unwrap();
        z[(0, 0)] = 1.0;
        z[(0, 1)] = 0.5;
        z[(0, 2)] = 0.5;
        let p = classify_identity(&reg, &z, 0).unwrap();
        assert!((p["dog_bark"] - p["hammering"]).abs() < 1e-15);

        // Silent frames are gated.
        let p = classify_identity(&reg, &z, 3).unwrap();
        assert!(p.values().all(|&s| s <= reg.gate_floor));
        assert!(classify_identity(&reg, &z, 16).is_err());
    }

    #[test]
    fn backend_checks_shape() {
        let b = GmmBackend::new(SceneRegistry::desk());
        let z = Latent::zeros(4, 5).unwrap();
        assert!(matches!(b.velocity(&z, 0.5, &ConditionPair::null()), Err(Error::Shape(_))));
    }
}
