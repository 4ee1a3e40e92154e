use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use counterflow_core::harness::{self, ExperimentConfig};
use counterflow_core::metrics::{self, DeltaRecord};
use counterflow_core::sampler::StepTrace;
use counterflow_core::wire::conformance::{self, NegatedEcho};
use counterflow_core::wire::{self, Endpoint, RemoteBackend, RemoteOptions};
use counterflow_core::{
    euler_sample, Error, GmmBackend, GuidanceWeights, SampleOptions, SceneRegistry, Seed, TimestepGrid, Variant,
    VelocityField, ZeroField,
};

#[derive(Parser)]
#[command(
    name = "counterflow",
    version,
    about = "Two-phase guided flow sampling for counterfactual audio conditioning"
)]
struct Cli {
    /// Worker threads for batch runs (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one clip and score it.
    Sample(SampleArgs),
    /// Run every variant × triplet × seed of a config.
    Experiment(ExperimentArgs),
    /// Repeat a config's first variant across transition steps.
    Sweep(SweepArgs),
    /// Compute deltas from frame-score files produced by an external detector.
    Score(ScoreArgs),
    /// Serve a velocity model over the wire protocol.
    Serve(ServeArgs),
    /// Write the canonical wire fixtures.
    Fixtures(FixturesArgs),
    /// Check another server implementation against the protocol.
    Conformance(ConformanceArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Scene file (built-in desk scene if omitted).
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value = "dog_video")]
    video: String,
    #[arg(long, default_value = "engine")]
    target: String,
    /// Source prompt; defaults to the text the video implies.
    #[arg(long)]
    source: Option<String>,
    /// Euler steps (reference setting: 25).
    #[arg(long, default_value_t = 25)]
    n: usize,
    /// First phase-2 step (reference setting: 17).
    #[arg(long, default_value_t = 17)]
    n_trans: usize,
    /// Video weight in phase 1 (reference setting: 3.0).
    #[arg(long, default_value_t = 3.0)]
    w_vid: f64,
    /// Text-contrast weight in phase 1 (reference setting: 5.0).
    #[arg(long, default_value_t = 5.0)]
    w_txt: f64,
    /// Text-contrast weight in phase 2 (reference setting: 4.5).
    #[arg(long, default_value_t = 4.5)]
    w_cfg: f64,
    /// Weight of plain joint guidance in ablations (defaults to --w-cfg).
    #[arg(long)]
    w_vanilla: Option<f64>,
    #[arg(long, env = "COUNTERFLOW_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "counterflow")]
    variant: Variant,
    /// `gmm`, or `remote:<endpoint>` with endpoint `tcp:host:port` or `exec:command args`.
    #[arg(long, default_value = "gmm")]
    backend: String,
    #[arg(long, default_value = "out/sample")]
    out: PathBuf,
    /// Log every step and write trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "gmm")]
    backend: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated transition steps (overrides the config's sweep list).
    #[arg(long, value_delimiter = ',')]
    n_trans_list: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "gmm")]
    backend: String,
}

#[derive(Args)]
struct ScoreArgs {
    /// Directory holding one `<clip_id>.csv` score file per clip.
    #[arg(long)]
    scores_dir: PathBuf,
    /// CSV of `clip_id,target,source` rows (header optional).
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value = "out/score")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878", conflicts_with = "stdio")]
    listen: String,
    /// Serve a single connection on stdin/stdout.
    #[arg(long)]
    stdio: bool,
    #[arg(long, value_enum, default_value_t = Model::Gmm)]
    model: Model,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Model {
    /// The analytic mixture backend for the scene.
    Gmm,
    /// Always zero.
    Zero,
    /// Returns the negated latent; the conformance mock.
    NegEcho,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value = "out/fixtures")]
    out: PathBuf,
}

#[derive(Args)]
struct ConformanceArgs {
    /// Server hosting the negating mock model (`tcp:host:port` or `exec:cmd args`).
    #[arg(long)]
    endpoint: String,
    /// Fixture directory written by the other implementation.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_backend() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Experiment(a) => experiment(a),
        Command::Sweep(a) => sweep(a),
        Command::Score(a) => score(a),
        Command::Serve(a) => serve(a),
        Command::Fixtures(a) => {
            conformance::write_fixtures(&a.out).map_err(Into::into).map(|()| println!("{}", a.out.display()))
        }
        Command::Conformance(a) => conform(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_scene(path: Option<&Path>) -> Result<SceneRegistry, Error> {
    match path {
        Some(p) => SceneRegistry::load(p),
        None => Ok(SceneRegistry::desk()),
    }
}

fn open_backend(spec: &str, scene: &SceneRegistry) -> anyhow::Result<Box<dyn VelocityField>> {
    if spec == "gmm" {
        return Ok(Box::new(GmmBackend::new(scene.clone())));
    }
    let Some(endpoint) = spec.strip_prefix("remote:") else {
        return Err(Error::Config(format!("backend must be `gmm` or `remote:<endpoint>`, got `{spec}`")).into());
    };
    let endpoint = Endpoint::parse(endpoint)?;
    Ok(Box::new(RemoteBackend::connect(endpoint, RemoteOptions::default())?))
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let scene = load_scene(a.scene.as_deref())?;
    let source = match a.source {
        Some(s) => s,
        None => scene.video(&a.video)?.implies.clone(),
    };
    scene.text(&a.target)?;
    scene.text(&source)?;
    if a.target == source {
        return Err(Error::Config("target and source prompts must differ".into()).into());
    }
    let weights =
        GuidanceWeights { w_vid: a.w_vid, w_txt: a.w_txt, w_cfg: a.w_cfg, w_vanilla: a.w_vanilla.unwrap_or(a.w_cfg) };
    weights.validate()?;
    let grid = TimestepGrid::uniform(a.n)?;
    let schedule = a.variant.schedule(&a.video, &a.target, &source, weights, a.n_trans);
    schedule.validate(a.n)?;
    let backend = open_backend(&a.backend, &scene)?;

    let mut trace_csv = String::from("step,t,form,weights,velocity_norm\n");
    let mut on_step = |s: &StepTrace<'_>| {
        let line =
            format!("{},{:.6},{},{},{:.6}", s.step, s.t, s.spec.form.tag(), s.spec.weight_summary(), s.velocity_norm);
        eprintln!("{line}");
        trace_csv.push_str(&line);
        trace_csv.push('\n');
    };
    let opts = SampleOptions { endpoint_only: true, trace: if a.trace { Some(&mut on_step) } else { None } };
    let traj = euler_sample(&*backend, &schedule, &grid, scene.shape(), Seed(a.seed), opts)?;
    let z = traj.endpoint();

    let clip_id = format!("{}__{}__s{}", a.video, a.target, a.seed);
    let scored = metrics::score_clip(&scene, z, &clip_id, &a.target, &source, &a.video)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut latent = String::from("frame");
    for d in 0..z.dims() {
        let _ = write!(latent, ",d{d}");
    }
    latent.push('\n');
    for f in 0..z.frames() {
        let _ = write!(latent, "{f}");
        for x in z.row(f) {
            let _ = write!(latent, ",{x:.6}");
        }
        latent.push('\n');
    }
    write(&a.out.join("latent.csv"), &latent)?;

    let r = &scored.record;
    let align = scored.alignment.map(|x| format!("{x:.6}")).unwrap_or_default();
    let clip = format!(
        "clip_id,variant,seed,target_id,source_id,p_target,p_source,delta,alignment\n{},{},{},{},{},{:.6},{:.6},{:.6},{align}\n",
        r.clip_id, a.variant, a.seed, r.target_id, r.source_id, r.p_target, r.p_source, r.delta
    );
    write(&a.out.join("clip.csv"), &clip)?;
    if a.trace {
        write(&a.out.join("trace.csv"), &trace_csv)?;
    }
    println!("{clip_id}: delta {:.6} alignment {}", r.delta, if align.is_empty() { "undefined" } else { &align });
    Ok(())
}

fn load_config(path: &Path, out: Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, a.out)?;
    let backend = open_backend(&a.backend, &cfg.registry)?;
    let result = harness::run_experiment(&*backend, &cfg)?;
    harness::write_experiment(&cfg.output_dir, &result)?;
    for s in &result.summaries {
        if s.failed > 0 {
            log::warn!("{}: {} runs failed", s.variant, s.failed);
        }
    }
    print!("{}", harness::summary_csv(&result.summaries));
    if result.summaries.len() < cfg.variants.len() {
        let first = result.runs.iter().find_map(|r| r.outcome.as_ref().err()).cloned().unwrap_or_default();
        return Err(Error::Transport(format!("every run of some variant failed; first error: {first}")).into());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a.config, a.out)?;
    let list = a.n_trans_list.unwrap_or_else(|| cfg.sweep.clone());
    if list.is_empty() {
        return Err(Error::Config("no transition steps given (use --n-trans-list or a [sweep] table)".into()).into());
    }
    let backend = open_backend(&a.backend, &cfg.registry)?;
    let result = harness::sweep_transition(&*backend, &cfg, &list)?;
    harness::write_sweep(&cfg.output_dir, &result)?;
    print!("{}", harness::sweep_csv(&result));
    Ok(())
}

fn read_pairs(path: &Path) -> anyhow::Result<Vec<(String, String, String)>> {
    let src = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("clip_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [clip, target, source] = f[..] else {
            return Err(Error::Parse { line: i + 1, message: "expected clip_id,target,source".into() }.into());
        };
        pairs.push((clip.to_owned(), target.to_owned(), source.to_owned()));
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!("{}: no pairs", path.display())).into());
    }
    Ok(pairs)
}

fn score(a: ScoreArgs) -> anyhow::Result<()> {
    let pairs = read_pairs(&a.pairs)?;
    let mut records: Vec<DeltaRecord> = Vec::new();
    let mut failed = 0;
    for (clip, target, source) in &pairs {
        let path = a.scores_dir.join(format!("{clip}.csv"));
        let scored = metrics::read_score_file(&path).and_then(|f| metrics::delta_flam(&f.matrix, clip, target, source));
        match scored {
            Ok(r) => records.push(r),
            Err(e) => {
                failed += 1;
                eprintln!("skipping {clip}: {}: {e}", path.display());
            }
        }
    }
    if records.is_empty() {
        bail!(Error::Config(format!("none of the {} pairs could be scored", pairs.len())));
    }
    let mean = records.iter().map(|r| r.delta).sum::<f64>() / records.len() as f64;
    let ratio = metrics::positive_ratio(&records)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("deltas.csv"), &metrics::format_records(&records))?;
    let summary = metrics::format_summary(mean, ratio, records.len(), failed);
    write(&a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    if failed > 0 {
        eprintln!("{failed} of {} pairs skipped", pairs.len());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let backend: Arc<dyn VelocityField> = match a.model {
        Model::Gmm => Arc::new(GmmBackend::new(load_scene(a.scene.as_deref())?)),
        Model::Zero => Arc::new(ZeroField),
        Model::NegEcho => Arc::new(NegatedEcho),
    };
    if a.stdio {
        wire::serve_connection(&*backend, std::io::stdin().lock(), std::io::stdout().lock())?;
        return Ok(());
    }
    let listener = std::net::TcpListener::bind(&a.listen)
        .map_err(|e| anyhow!(Error::Transport(format!("cannot listen on {}: {e}", a.listen))))?;
    eprintln!("serving on {}", listener.local_addr()?);
    wire::serve_tcp(listener, backend)?;
    Ok(())
}

fn conform(a: ConformanceArgs) -> anyhow::Result<()> {
    if let Some(dir) = &a.fixtures {
        conformance::check_fixtures(dir)?;
        println!("fixtures: ok");
    }
    let remote = RemoteBackend::connect(Endpoint::parse(&a.endpoint)?, RemoteOptions::default())?;
    conformance::echo_equivalence(&remote, a.runs, Seed(a.seed))?;
    println!("echo equivalence: ok ({} batches, {} trajectories)", a.runs, a.runs);
    Ok(())
}
