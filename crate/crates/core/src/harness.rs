//! Experiment runs over the analytic world: variants × triplets × seeds,
//! transition-step sweeps, and their CSV outputs.
//!
//! Config files are TOML:
//!
//! ```toml
//! scene = "scenes/desk.toml"     # relative to the config file; built-in desk scene if omitted
//! variants = ["counterflow", "no_p1_decomp"]
//! steps = 25
//! n_trans = 17
//! seeds = { start = 1, count = 50 }   # or an explicit list: [1, 2, 3]
//! triplets = "all"                    # or [{ video = "...", target = "...", source = "..." }]
//! output_dir = "out/table2"
//!
//! [weights]
//! w_vid = 3.0
//! w_txt = 5.0
//! w_cfg = 4.5
//! w_vanilla = 4.5
//!
//! [sweep]
//! n_trans = [1, 5, 9, 13, 17, 21, 25]
//! ```
//!
//! Outputs: `clips.csv`, `summary.csv` and (for sweeps) `sweep.csv`; all
//! floats are written with 6 decimals.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::backend::{Access, VelocityField};
use crate::error::{Error, Result};
use crate::gmm::SceneRegistry;
use crate::grid::TimestepGrid;
use crate::guidance::{GuidanceWeights, Variant};
use crate::latent::{NormalStream, Seed};
use crate::metrics::{score_clip, summarize, ClipScore, Summary};
use crate::sampler::{euler_sample, SampleOptions};

pub const DEFAULT_STEPS: usize = 25;
pub const DEFAULT_N_TRANS: usize = 17;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triplet {
    pub video: String,
    pub target: String,
    pub source: String,
}

/// Every video paired with every text it does not imply, in id order.
pub fn expand_triplets(reg: &SceneRegistry) -> Result<Vec<Triplet>> {
    if reg.texts.len() < 2 {
        return Err(Error::Parameter("need at least two texts to form conflicting triplets".into()));
    }
    let mut out = Vec::new();
    for (video, scene) in &reg.videos {
        for target in reg.text_ids().filter(|x| *x != scene.implies) {
            out.push(Triplet { video: video.clone(), target: target.to_owned(), source: scene.implies.clone() });
        }
    }
    Ok(out)
}

// ---- config ----

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletEntry {
    video: String,
    target: String,
    source: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TripletSpec {
    Keyword(String),
    List(Vec<TripletEntry>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    n_trans: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scene: Option<PathBuf>,
    variants: Option<Vec<Variant>>,
    steps: Option<usize>,
    n_trans: Option<usize>,
    #[serde(default)]
    weights: GuidanceWeights,
    seeds: Option<SeedSpec>,
    triplets: Option<TripletSpec>,
    output_dir: Option<PathBuf>,
    /// Overrides the scene's visual dominance.
    dominance: Option<f64>,
    sweep: Option<SweepSection>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub registry: SceneRegistry,
    pub variants: Vec<Variant>,
    pub steps: usize,
    pub n_trans: usize,
    pub weights: GuidanceWeights,
    pub seeds: Vec<u64>,
    pub triplets: Vec<Triplet>,
    pub output_dir: PathBuf,
    pub sweep: Vec<usize>,
}

impl ExperimentConfig {
    /// Desk scene, counterflow, reference defaults, seeds 1..=50, all triplets.
    pub fn desk() -> Self {
        let registry = SceneRegistry::desk();
        let triplets = expand_triplets(&registry).expect("desk scene has texts");
        Self {
            registry,
            variants: vec![Variant::Counterflow],
            steps: DEFAULT_STEPS,
            n_trans: DEFAULT_N_TRANS,
            weights: GuidanceWeights::default(),
            seeds: (1..=50).collect(),
            triplets,
            output_dir: PathBuf::from("out"),
            sweep: vec![1, 5, 9, 13, 17, 21, 25],
        }
    }

    /// Parses a config; relative paths resolve against `base_dir`.
    pub fn from_toml(src: &str, base_dir: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let mut registry = match &file.scene {
            Some(p) => SceneRegistry::load(&base_dir.join(p))?,
            None => SceneRegistry::desk(),
        };
        if let Some(l) = file.dominance {
            registry.dominance = l;
            registry.validate()?;
        }
        let seeds = match file.seeds {
            None => (1..=50).collect(),
            Some(SeedSpec::List(v)) => v,
            Some(SeedSpec::Range { start, count }) => {
                let end = start.checked_add(count).ok_or_else(|| Error::Config("seed range overflows".into()))?;
                (start..end).collect()
            }
        };
        let triplets = match file.triplets {
            None => expand_triplets(&registry)?,
            Some(TripletSpec::Keyword(k)) if k == "all" => expand_triplets(&registry)?,
            Some(TripletSpec::Keyword(k)) => {
                return Err(Error::Config(format!("triplets must be \"all\" or a list, got \"{k}\"")))
            }
            Some(TripletSpec::List(v)) => {
                v.into_iter().map(|t| Triplet { video: t.video, target: t.target, source: t.source }).collect()
            }
        };
        let cfg = Self {
            registry,
            variants: file.variants.unwrap_or_else(|| vec![Variant::Counterflow]),
            steps: file.steps.unwrap_or(DEFAULT_STEPS),
            n_trans: file.n_trans.unwrap_or(DEFAULT_N_TRANS),
            weights: file.weights,
            seeds,
            triplets,
            output_dir: base_dir.join(file.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            sweep: file.sweep.map(|s| s.n_trans).unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&src, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return cfg("steps must be >= 1".into());
        }
        if self.n_trans > self.steps {
            return cfg(format!("n_trans {} exceeds steps {}", self.n_trans, self.steps));
        }
        if let Some(bad) = self.sweep.iter().find(|&&n| n > self.steps) {
            return cfg(format!("sweep value {bad} exceeds steps {}", self.steps));
        }
        if self.variants.is_empty() || self.seeds.is_empty() || self.triplets.is_empty() {
            return cfg("variants, seeds and triplets must be non-empty".into());
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        for t in &self.triplets {
            self.registry.video(&t.video).map_err(|e| Error::Config(e.to_string()))?;
            self.registry.text(&t.target).map_err(|e| Error::Config(e.to_string()))?;
            self.registry.text(&t.source).map_err(|e| Error::Config(e.to_string()))?;
            if t.target == t.source {
                return cfg(format!("triplet for {} has identical target and source", t.video));
            }
        }
        Ok(())
    }
}

// ---- runs ----

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: Variant,
    pub n_trans: usize,
    pub triplet: Triplet,
    pub seed: u64,
    pub outcome: std::result::Result<ClipScore, String>,
}

impl RunRecord {
    pub fn clip_id(&self) -> String {
        format!("{}__{}__s{}", self.triplet.video, self.triplet.target, self.seed)
    }

    pub fn score(&self) -> Option<&ClipScore> {
        self.outcome.as_ref().ok()
    }
}

#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub variant: Variant,
    pub summary: Summary,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<VariantSummary>,
}

impl ExperimentResult {
    pub fn summary(&self, v: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == v)
    }

    pub fn runs_of(&self, v: Variant) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.variant == v)
    }
}

/// One sampling run, scored. Sampling happens through `backend`; scoring
/// always uses the scene.
pub fn run_one<B: VelocityField + ?Sized>(
    backend: &B,
    cfg: &ExperimentConfig,
    variant: Variant,
    n_trans: usize,
    triplet: &Triplet,
    seed: u64,
) -> Result<ClipScore> {
    let grid = TimestepGrid::uniform(cfg.steps)?;
    let schedule = variant.schedule(&triplet.video, &triplet.target, &triplet.source, cfg.weights, n_trans);
    let opts = SampleOptions { endpoint_only: true, trace: None };
    let traj = euler_sample(backend, &schedule, &grid, cfg.registry.shape(), Seed(seed), opts)?;
    let clip = format!("{}__{}__s{seed}", triplet.video, triplet.target);
    score_clip(&cfg.registry, traj.endpoint(), &clip, &triplet.target, &triplet.source, &triplet.video)
}

fn run_jobs<B: VelocityField + ?Sized>(
    backend: &B,
    cfg: &ExperimentConfig,
    jobs: Vec<(Variant, usize, &Triplet, u64)>,
) -> Vec<RunRecord> {
    let run = |(variant, n_trans, triplet, seed): (Variant, usize, &Triplet, u64)| RunRecord {
        variant,
        n_trans,
        triplet: triplet.clone(),
        seed,
        outcome: run_one(backend, cfg, variant, n_trans, triplet, seed).map_err(|e| e.to_string()),
    };
    match backend.access() {
        Access::Concurrent => jobs.into_par_iter().map(run).collect(),
        Access::SingleThreaded => jobs.into_iter().map(run).collect(),
    }
}

fn summarize_runs<'a>(runs: impl Iterator<Item = &'a RunRecord>) -> (Option<Summary>, usize, usize) {
    let mut ok = Vec::new();
    let mut failed = 0;
    for r in runs {
        match &r.outcome {
            Ok(s) => ok.push(s.clone()),
            Err(_) => failed += 1,
        }
    }
    let n = ok.len();
    (summarize(&ok).ok(), failed, n)
}

/// Runs every variant × triplet × seed. Row order is variant, triplet, seed.
pub fn run_experiment<B: VelocityField + ?Sized>(backend: &B, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.triplets.iter().flat_map(move |t| cfg.seeds.iter().map(move |&s| (v, cfg.n_trans, t, s))))
        .collect();
    let runs = run_jobs(backend, cfg, jobs);
    let summaries = cfg
        .variants
        .iter()
        .filter_map(|&v| {
            let (summary, failed, _) = summarize_runs(runs.iter().filter(|r| r.variant == v));
            summary.map(|summary| VariantSummary { variant: v, summary, failed })
        })
        .collect();
    Ok(ExperimentResult { runs, summaries })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_trans: usize,
    pub summary: Summary,
    pub failed: usize,
    /// Per-run values in (triplet, seed) order; `None` for failed runs.
    pub deltas: Vec<Option<f64>>,
    pub alignments: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub variant: Variant,
    pub rows: Vec<SweepRow>,
}

/// Repeats the first configured variant at each transition step, reusing
/// the same triplets and seeds so rows are paired.
pub fn sweep_transition<B: VelocityField + ?Sized>(
    backend: &B,
    cfg: &ExperimentConfig,
    n_trans_list: &[usize],
) -> Result<SweepResult> {
    cfg.validate()?;
    if n_trans_list.is_empty() {
        return Err(Error::Config("empty transition list".into()));
    }
    if let Some(bad) = n_trans_list.iter().find(|&&n| n > cfg.steps) {
        return Err(Error::Config(format!("transition step {bad} exceeds steps {}", cfg.steps)));
    }
    let variant = cfg.variants[0];
    let jobs = n_trans_list
        .iter()
        .flat_map(|&n| cfg.triplets.iter().flat_map(move |t| cfg.seeds.iter().map(move |&s| (variant, n, t, s))))
        .collect();
    let runs = run_jobs(backend, cfg, jobs);
    let per = cfg.triplets.len() * cfg.seeds.len();
    let rows = n_trans_list
        .iter()
        .zip(runs.chunks(per))
        .map(|(&n_trans, chunk)| {
            let (summary, failed, _) = summarize_runs(chunk.iter());
            let summary =
                summary.ok_or_else(|| Error::Parameter(format!("every run failed at n_trans = {n_trans}")))?;
            Ok(SweepRow {
                n_trans,
                summary,
                failed,
                deltas: chunk.iter().map(|r| r.score().map(|s| s.record.delta)).collect(),
                alignments: chunk.iter().map(|r| r.score().and_then(|s| s.alignment)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { variant, rows })
}

/// Bootstrap standard error of `mean(b − a)` over pairs where both are present.
pub fn paired_bootstrap_se(a: &[Option<f64>], b: &[Option<f64>], resamples: usize, seed: Seed) -> Option<f64> {
    let diffs: Vec<f64> = a.iter().zip(b).filter_map(|(x, y)| Some((*y)? - (*x)?)).collect();
    if diffs.len() < 2 || resamples < 2 {
        return None;
    }
    let n = diffs.len();
    let mut rng = NormalStream::new(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[((rng.uniform() * n as f64) as usize).min(n - 1)]).sum::<f64>() / n as f64)
        .collect();
    let m = means.iter().sum::<f64>() / resamples as f64;
    Some((means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt())
}

/// Paired mean of `b − a`.
pub fn paired_mean_diff(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let diffs: Vec<f64> = a.iter().zip(b).filter_map(|(x, y)| Some((*y)? - (*x)?)).collect();
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}

// ---- CSV ----

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub const CLIPS_HEADER: &str =
    "variant,n_trans,clip_id,video_id,target_id,source_id,seed,p_target,p_source,delta,alignment,status";

pub fn clips_csv(runs: &[RunRecord]) -> String {
    let mut out = format!("{CLIPS_HEADER}\n");
    for r in runs {
        let t = &r.triplet;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},",
            r.variant,
            r.n_trans,
            r.clip_id(),
            t.video,
            t.target,
            t.source,
            r.seed
        );
        match &r.outcome {
            Ok(s) => {
                let rec = &s.record;
                let _ =
                    writeln!(out, "{:.6},{:.6},{:.6},{},ok", rec.p_target, rec.p_source, rec.delta, opt(s.alignment));
            }
            Err(e) => {
                let tag = e.replace([',', '\n', '\r', '"'], " ");
                let _ = writeln!(out, ",,,,error: {tag}");
            }
        }
    }
    out
}

pub const SUMMARY_HEADER: &str = "variant,mean_delta,positive_ratio,mean_alignment,M,excluded_count,failed_count";

pub fn summary_csv(summaries: &[VariantSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summaries {
        let m = &s.summary;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{}",
            s.variant,
            m.mean_delta,
            m.positive_ratio,
            opt(m.mean_alignment),
            m.count,
            m.excluded,
            s.failed
        );
    }
    out
}

pub const SWEEP_HEADER: &str = "n_trans,mean_delta,positive_ratio,mean_alignment,runs,excluded_count,failed_count";

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in &result.rows {
        let m = &r.summary;
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{},{}",
            r.n_trans,
            m.mean_delta,
            m.positive_ratio,
            opt(m.mean_alignment),
            m.count,
            m.excluded,
            r.failed
        );
    }
    out
}

pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("clips.csv"), clips_csv(&result.runs))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&result.summaries))?;
    Ok(())
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(result))?;
    Ok(())
}
