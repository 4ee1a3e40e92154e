//! Prints every variant's summary and the transition sweep on the desk scene.

use counterflow_core::harness::{paired_bootstrap_se, run_experiment, sweep_transition, ExperimentConfig};
use counterflow_core::{GmmBackend, Seed, Variant};

fn main() -> counterflow_core::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.variants = Variant::ALL.to_vec();
    let backend = GmmBackend::new(cfg.registry.clone());
    let res = run_experiment(&backend, &cfg)?;
    for s in &res.summaries {
        let m = &s.summary;
        println!(
            "{:<14} delta {:+.4}  ratio {:.3}  align {:?}  excluded {}  failed {}",
            s.variant.tag(),
            m.mean_delta,
            m.positive_ratio,
            m.mean_alignment,
            m.excluded,
            s.failed
        );
    }
    cfg.variants = vec![Variant::Counterflow];
    let sweep = sweep_transition(&backend, &cfg, &cfg.sweep.clone())?;
    for w in sweep.rows.windows(2) {
        let se_d = paired_bootstrap_se(&w[0].deltas, &w[1].deltas, 1000, Seed(7)).unwrap_or(f64::NAN);
        let se_a = paired_bootstrap_se(&w[0].alignments, &w[1].alignments, 1000, Seed(7)).unwrap_or(f64::NAN);
        println!(
            "n_trans {:>2}->{:>2}  delta {:+.4}->{:+.4} (se {:.4})  align {:?}->{:?} (se {:.4})",
            w[0].n_trans,
            w[1].n_trans,
            w[0].summary.mean_delta,
            w[1].summary.mean_delta,
            se_d,
            w[0].summary.mean_alignment,
            w[1].summary.mean_alignment,
            se_a
        );
    }
    Ok(())
}
