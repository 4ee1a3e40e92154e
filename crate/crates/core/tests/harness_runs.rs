use counterflow_core::harness::{
    clips_csv, run_experiment, summary_csv, sweep_transition, write_experiment, ExperimentConfig, CLIPS_HEADER,
};
use counterflow_core::sampler::StepTrace;
use counterflow_core::{
    euler_sample, init_latent, uniform_grid, Access, Error, GmmBackend, GuidanceForm, Latent, SampleOptions,
    SceneRegistry, Seed, Variant, VelocityBatch, VelocityField,
};

fn small(variants: &[Variant], dominance: f64, n_trans: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.registry.dominance = dominance;
    cfg.variants = variants.to_vec();
    cfg.seeds = (1..=20).collect();
    cfg.n_trans = n_trans;
    cfg
}

#[test]
fn decomposed_guidance_edits_when_video_carries_no_identity() {
    let cfg = small(&[Variant::Counterflow], 0.0, 25);
    let res = run_experiment(&GmmBackend::new(cfg.registry.clone()), &cfg).unwrap();
    let s = &res.summary(Variant::Counterflow).unwrap().summary;
    assert!(s.mean_delta > 0.0, "{s:?}");
}

#[test]
fn joint_guidance_never_edits_when_video_dominates_fully() {
    let cfg = small(&[Variant::VanillaOnly], 1.0, 17);
    let res = run_experiment(&GmmBackend::new(cfg.registry.clone()), &cfg).unwrap();
    let s = &res.summary(Variant::VanillaOnly).unwrap().summary;
    assert!(s.positive_ratio <= 0.05, "{s:?}");
    assert!(s.mean_delta < 0.0, "{s:?}");
}

fn forms(variant: Variant, n_trans: usize) -> Vec<GuidanceForm> {
    let reg = SceneRegistry::desk();
    let schedule = variant.schedule("dog_video", "engine", "dog_bark", Default::default(), n_trans);
    let mut seen = Vec::new();
    let mut record = |s: &StepTrace<'_>| seen.push(s.spec.form);
    let opts = SampleOptions { endpoint_only: true, trace: Some(&mut record) };
    euler_sample(&GmmBackend::new(reg.clone()), &schedule, &uniform_grid(25).unwrap(), reg.shape(), Seed(1), opts)
        .unwrap();
    seen
}

#[test]
fn transition_extremes_are_single_phase() {
    assert!(forms(Variant::Counterflow, 0).iter().all(|&f| f == GuidanceForm::NegativeText));
    assert!(forms(Variant::Counterflow, 25).iter().all(|&f| f == GuidanceForm::Decomposed));
    let mixed = forms(Variant::Counterflow, 17);
    assert!(mixed[..17].iter().all(|&f| f == GuidanceForm::Decomposed));
    assert!(mixed[17..].iter().all(|&f| f == GuidanceForm::NegativeText));
    let swapped = forms(Variant::PhaseSwap, 17);
    assert!(swapped[..17].iter().all(|&f| f == GuidanceForm::NegativeText));
    assert!(swapped[17..].iter().all(|&f| f == GuidanceForm::Decomposed));
}

#[test]
fn sweep_has_one_paired_row_per_transition() {
    let mut cfg = small(&[Variant::Counterflow], 0.9, 17);
    cfg.seeds = (1..=5).collect();
    let gmm = GmmBackend::new(cfg.registry.clone());
    let sweep = sweep_transition(&gmm, &cfg, &[0, 12, 25]).unwrap();
    assert_eq!(sweep.rows.iter().map(|r| r.n_trans).collect::<Vec<_>>(), [0, 12, 25]);
    for row in &sweep.rows {
        assert_eq!(row.deltas.len(), 30);
        assert_eq!(row.summary.count, 30);
    }
    // The n_trans = 17 row of a sweep is the plain experiment.
    let at17 = sweep_transition(&gmm, &cfg, &[17]).unwrap();
    let plain = run_experiment(&gmm, &cfg).unwrap();
    assert_eq!(at17.rows[0].summary, plain.summaries[0].summary);
    assert!(matches!(sweep_transition(&gmm, &cfg, &[26]), Err(Error::Config(_))));
    assert!(matches!(sweep_transition(&gmm, &cfg, &[]), Err(Error::Config(_))));
}

#[test]
fn summary_agrees_with_written_rows() {
    let cfg = small(&[Variant::Counterflow, Variant::NoP2Neg], 0.9, 17);
    let res = run_experiment(&GmmBackend::new(cfg.registry.clone()), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_experiment(dir.path(), &res).unwrap();
    let clips = std::fs::read_to_string(dir.path().join("clips.csv")).unwrap();
    assert_eq!(clips, clips_csv(&res.runs));
    assert_eq!(std::fs::read_to_string(dir.path().join("summary.csv")).unwrap(), summary_csv(&res.summaries));
    let mut lines = clips.lines();
    assert_eq!(lines.next(), Some(CLIPS_HEADER));
    for vs in &res.summaries {
        let deltas: Vec<f64> = clips
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[0] == vs.variant.tag())
            .map(|c| c[9].parse().unwrap())
            .collect();
        assert_eq!(deltas.len(), 120);
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!((mean - vs.summary.mean_delta).abs() < 1e-6);
        let positive = deltas.iter().filter(|&&d| d > 0.0).count() as f64 / 120.0;
        assert_eq!(positive, vs.summary.positive_ratio);
    }
}

/// Fails the first evaluation of any run whose initial latent starts high.
struct Flaky(GmmBackend);

impl VelocityField for Flaky {
    fn evaluate(&self, batch: &VelocityBatch) -> counterflow_core::Result<Vec<Latent>> {
        if batch.t() == 0.0 && batch.requests()[0].latent.as_slice()[0] > 1.0 {
            return Err(Error::Transport("link dropped".into()));
        }
        self.0.evaluate(batch)
    }

    fn access(&self) -> Access {
        Access::SingleThreaded
    }
}

#[test]
fn failed_runs_are_recorded_and_excluded() {
    let cfg = small(&[Variant::Counterflow], 0.9, 17);
    let doomed =
        cfg.seeds.iter().filter(|&&s| init_latent(cfg.registry.shape(), Seed(s)).unwrap().as_slice()[0] > 1.0).count();
    assert!(doomed > 0 && doomed < cfg.seeds.len());
    let res = run_experiment(&Flaky(GmmBackend::new(cfg.registry.clone())), &cfg).unwrap();
    let vs = res.summary(Variant::Counterflow).unwrap();
    assert_eq!(vs.failed, doomed * 6);
    assert_eq!(vs.summary.count, (20 - doomed) * 6);
    let clips = clips_csv(&res.runs);
    let errors: Vec<&str> = clips
        .lines()
        .filter(|l| l.ends_with(",error: sampling failed at step 0: transport error: link dropped"))
        .collect();
    assert_eq!(errors.len(), doomed * 6, "{clips}");

    // Successful runs match an unwrapped backend, so sequential and
    // parallel dispatch agree.
    let clean = run_experiment(&GmmBackend::new(cfg.registry.clone()), &cfg).unwrap();
    for (a, b) in res.runs.iter().zip(&clean.runs) {
        if let Some(s) = a.score() {
            assert_eq!(Some(s), b.score());
        }
    }
}
