//! `dmd`: demos, augmentation, training and evaluation for the pushing
//! simulator, driven by one TOML run config.

mod config;
mod store;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmd_core::augment::dataset::{read_dataset, write_dataset, AugHeader, FORMAT_VERSION};
use dmd_core::augment::{overshoot_fraction, AugmentError, AugmentOptions};
use dmd_core::harness::experiment::{
    augment_demos, augment_options, augmented_examples, examples_with, held_out_demos, synthesizer, task_examples,
    with_standard_augment, ExperimentError,
};
use dmd_core::harness::{offline_eval, run_ab, ABTrialPlan, HarnessError, OfflineRow, OnlineReport, PolicyController, TrialOptions};
use dmd_core::policy::{train, Head, Mlp, PolicyError};
use dmd_core::raster::RasterError;
use dmd_core::rng;
use dmd_core::sim::datagen::{generate_demos, generate_play, Controller, Episode, Expert, SimError};
use dmd_core::synthesis::remote::RemoteSynth;
use dmd_core::synthesis::{BackendKind, Synthesizer};
use dmd_core::trajectory::triples::{export_finetune_triples, write_triples};
use dmd_core::trajectory::{native, TrajectoryError};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    MissingInput(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::MissingInput(_) => "MissingInput",
            CliError::Augment(AugmentError::Synth(_)) => "SynthError",
            CliError::Experiment(_) | CliError::Augment(_) => "PipelineError",
            CliError::Sim(_) => "SimError",
            CliError::Policy(_) => "PolicyError",
            CliError::Harness(_) => "HarnessError",
            CliError::Trajectory(_) => "TrajectoryError",
            CliError::Raster(_) | CliError::Json(_) | CliError::Csv(_) | CliError::Io(_) => "IoError",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dmd", version, about = "Perturbed-view augmentation pipeline for the pushing simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug)]
struct Global {
    /// Run config (TOML). Defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (relative to the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Synthesizer: oracle, homography, identity or remote.
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Lookahead k for labels.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Number of expert demos.
    #[arg(long, global = true)]
    demos: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate expert demonstrations.
    GenDemos {
        /// Number of demos (same as --demos).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate task-agnostic random-walk play trajectories.
    GenPlay {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Export (I_a, I_b, a_T_b) synthesizer training triples.
    ExportTriples {
        /// Source stage: play or demos.
        #[arg(long, default_value = "play")]
        from: String,
    },
    /// Synthesize perturbed views of the demos and label them.
    Augment,
    /// Train a policy on the demos, optionally with the augmented set.
    Train {
        /// bc (demos only) or dmd (demos + augmented set).
        #[arg(long, default_value = "dmd")]
        method: String,
    },
    /// Median angle error of every trained policy on held-out demos.
    EvalOffline,
    /// Randomized A/B trials of every trained policy in the simulator.
    EvalOnline,
    /// Offline error as a function of the lookahead k.
    KSweep,
    /// Collect the evaluation reports into one summary.
    Report,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "oracle" => Ok(BackendKind::Oracle),
        "homography" => Ok(BackendKind::Homography),
        "identity" => Ok(BackendKind::Identity),
        "remote" => Ok(BackendKind::Remote),
        _ => Err(format!("unknown backend `{s}` (oracle, homography, identity, remote)")),
    }
}

/// Every report carries the resolved config and its hash.
#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    config_hash: String,
    config: RunConfig,
    report: T,
}

impl<T> Envelope<T> {
    fn new(cfg: &RunConfig, report: T) -> Self {
        Envelope {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            report,
        }
    }
}

fn resolve(g: &Global, cmd: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(b) = g.backend {
        cfg.backend.kind = b;
    }
    if let Some(k) = g.k {
        cfg.perturbation.lookahead_k = k;
    }
    if let Some(d) = g.demos {
        cfg.demos = d;
    }
    match cmd {
        Command::GenDemos { n: Some(n) } => cfg.demos = *n,
        Command::GenPlay { n, steps } => {
            cfg.play.n = n.unwrap_or(cfg.play.n);
            cfg.play.steps = steps.unwrap_or(cfg.play.steps);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn backend(cfg: &RunConfig, demos: &[Episode]) -> Result<Box<dyn Synthesizer>, CliError> {
    Ok(match cfg.backend.kind {
        BackendKind::Remote => Box::new(RemoteSynth::new(cfg.remote())),
        kind => synthesizer(kind, &cfg.sim, demos)?,
    })
}

fn augment_opts(cfg: &RunConfig) -> AugmentOptions {
    AugmentOptions {
        failure_policy: cfg.augment.failure_policy,
        filter_overshoot: cfg.augment.filter_overshoot,
        force_identity: cfg.augment.force_identity,
        ..augment_options(&cfg.experiment())
    }
}

fn gen_demos(cfg: &RunConfig) -> Result<(), CliError> {
    let demos = generate_demos(&cfg.sim, cfg.demos, cfg.seed)?;
    let dir = store::fresh_stage(cfg, store::DEMOS)?;
    store::write_episodes(&dir, &demos)?;
    info!("{} demos written to {}", demos.len(), dir.display());
    Ok(())
}

fn gen_play(cfg: &RunConfig) -> Result<(), CliError> {
    let play = generate_play(&cfg.sim, cfg.play.n, cfg.seed, cfg.play.steps)?;
    let dir = store::fresh_stage(cfg, store::PLAY)?;
    store::write_episodes(&dir, &play)?;
    info!("{} play trajectories written to {}", play.len(), dir.display());
    Ok(())
}

fn export_triples(cfg: &RunConfig, from: &str) -> Result<(), CliError> {
    let (stage, producer) = match from {
        "play" => (store::PLAY, "gen-play"),
        "demos" => (store::DEMOS, "gen-demos"),
        _ => return Err(CliError::Config(format!("--from must be play or demos, got `{from}`"))),
    };
    let src = store::existing_stage(cfg, stage, producer)?;
    let mut trajs: Vec<PathBuf> = fs::read_dir(&src)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".traj.jsonl"))
        .collect();
    trajs.sort();
    if trajs.is_empty() {
        return Err(CliError::MissingInput(format!("no trajectories in {}", src.display())));
    }
    let dir = store::fresh_stage(cfg, store::TRIPLES)?;
    let seed = rng::child_seed(cfg.seed, &["triples".into()]);
    let mut total = 0;
    for p in &trajs {
        let t = native::load(p)?;
        let triples = export_finetune_triples(&t, cfg.triples.per_trajectory, seed)?;
        total += triples.len();
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(format!("{}.triples.jsonl", t.id())))?);
        write_triples(t.id(), &triples, &mut w)?;
        w.flush()?;
    }
    // Image references are relative to the source stage.
    store::write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({ "images_root": format!("../{stage}"), "triples": total }),
    )?;
    info!("{total} triples written to {}", dir.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AugmentSummary {
    samples: usize,
    per_trajectory: Vec<(String, usize)>,
    overshoot_fraction: f64,
}

fn augment(cfg: &RunConfig) -> Result<(), CliError> {
    let demos = store::read_episodes(&store::existing_stage(cfg, store::DEMOS, "gen-demos")?)?;
    let synth = backend(cfg, &demos)?;
    let opts = augment_opts(cfg);
    let samples = augment_demos(&demos, &cfg.perturbation, &opts, synth.as_ref())?;
    let dir = store::fresh_stage(cfg, store::AUGMENT)?;
    let header = AugHeader {
        v: FORMAT_VERSION,
        seed: cfg.seed,
        synthesizer: synth.id(),
        spec: cfg.perturbation,
        options: opts,
    };
    write_dataset(&dir.join(store::AUG_INDEX), &header, &samples)?;
    let mut per_trajectory = Vec::new();
    let mut overshooting = 0.0;
    for ep in &demos {
        let Some(t) = &ep.trajectory else { continue };
        let mine: Vec<_> = samples.iter().filter(|s| s.perturbation.traj_id == t.id()).cloned().collect();
        if !mine.is_empty() {
            overshooting += overshoot_fraction(&mine, t)? * mine.len() as f64;
        }
        per_trajectory.push((t.id().to_string(), mine.len()));
    }
    let summary = AugmentSummary {
        samples: samples.len(),
        per_trajectory,
        overshoot_fraction: if samples.is_empty() { 0.0 } else { overshooting / samples.len() as f64 },
    };
    store::write_json(&dir.join("augment.json"), &Envelope::new(cfg, summary))?;
    info!("{} augmented samples written to {}", samples.len(), dir.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    method: String,
    examples: usize,
    initial_loss: f64,
    epoch_losses: Vec<f64>,
}

fn train_cmd(cfg: &RunConfig, method: &str) -> Result<(), CliError> {
    let exp = cfg.experiment();
    let demos = store::read_episodes(&store::existing_stage(cfg, store::DEMOS, "gen-demos")?)?;
    let (name, examples) = match method {
        "bc" => ("bc".to_string(), examples_with(&exp, &demos, None, &augment_opts(cfg))?),
        "dmd" => {
            let aug = store::existing_stage(cfg, store::AUGMENT, "augment")?;
            let (header, samples) = read_dataset(&aug.join(store::AUG_INDEX))?;
            let mut ex = task_examples(&demos)?;
            ex.extend(augmented_examples(&samples));
            (format!("dmd-{}", header.synthesizer.kind), with_standard_augment(&exp, ex))
        }
        _ => return Err(CliError::Config(format!("--method must be bc or dmd, got `{method}`"))),
    };
    let out = train::<f64>(&examples, &exp.sizes(), Head::PLANAR, &cfg.train)?;
    let dir = store::fresh_stage(cfg, &store::train_dir(&name))?;
    out.net.save(&dir.join(store::POLICY), Some(&cfg.train))?;
    let summary = TrainSummary {
        method: name,
        examples: examples.len(),
        initial_loss: out.initial_loss,
        epoch_losses: out.epoch_losses,
    };
    store::write_json(&dir.join("train.json"), &Envelope::new(cfg, summary))?;
    info!("policy written to {}", dir.display());
    Ok(())
}

fn load_policies(cfg: &RunConfig) -> Result<Vec<(String, Mlp<f64>, usize)>, CliError> {
    store::trained_policies(cfg)?
        .into_iter()
        .map(|(name, path)| {
            let (net, _) = Mlp::<f64>::load(&path)?;
            let summary: Envelope<TrainSummary> =
                serde_json::from_slice(&fs::read(path.with_file_name("train.json"))?)?;
            Ok((name, net, summary.report.examples))
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn eval_offline(cfg: &RunConfig) -> Result<(), CliError> {
    let policies = load_policies(cfg)?;
    let test = task_examples(&held_out_demos(&cfg.experiment(), cfg.test_demos)?)?;
    let rows = policies
        .iter()
        .map(|(name, net, train_size)| {
            Ok(OfflineRow {
                method: name.clone(),
                median_angle: offline_eval(net, &test)?,
                train_size: *train_size,
                test_size: test.len(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let dir = store::fresh_stage(cfg, "eval-offline")?;
    write_csv(&dir.join("report.csv"), &rows)?;
    store::write_json(&dir.join("report.json"), &Envelope::new(cfg, rows))?;
    Ok(())
}

fn eval_online(cfg: &RunConfig) -> Result<(), CliError> {
    let policies = load_policies(cfg)?;
    let ctls: Vec<PolicyController> = policies.iter().map(|(_, n, _)| PolicyController(n)).collect();
    let mut names: Vec<&str> = policies.iter().map(|(n, _, _)| n.as_str()).collect();
    let mut refs: Vec<&dyn Controller> = ctls.iter().map(|c| c as &dyn Controller).collect();
    let expert = Expert(&cfg.sim);
    if cfg.harness.with_expert {
        names.push("expert");
        refs.push(&expert);
    }
    let plan = ABTrialPlan::new(
        &cfg.sim,
        &names,
        cfg.harness.trials_per_method,
        rng::child_seed(cfg.seed, &["ab".into()]),
    );
    let opts = TrialOptions {
        max_steps: cfg.harness.max_steps,
        action_noise: cfg.harness.action_noise,
    };
    let report: OnlineReport = run_ab(&plan, &refs, &cfg.sim, opts, &cfg.hash())?;
    let dir = store::fresh_stage(cfg, "eval-online")?;
    write_csv(&dir.join("report.csv"), &report.methods)?;
    write_csv(&dir.join("trials.csv"), &report.trials)?;
    store::write_json(&dir.join("plan.json"), &plan)?;
    let mut logs = std::io::BufWriter::new(fs::File::create(dir.join("logs.jsonl"))?);
    for l in &report.logs {
        serde_json::to_writer(&mut logs, l)?;
        writeln!(logs)?;
    }
    logs.flush()?;
    store::write_json(&dir.join("report.json"), &Envelope::new(cfg, &report))?;
    for m in &report.methods {
        info!("{:>16}: {}/{} ({:.2})", m.method, m.successes, m.trials, m.success_rate);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct KRow {
    k: usize,
    seed: u64,
    median_angle: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct KSweepReport {
    backend: BackendKind,
    rows: Vec<KRow>,
    /// `(k, mean over seeds)`.
    mean: Vec<(usize, f64)>,
}

fn k_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in 0..cfg.k_sweep.seeds as u64 {
        let mut exp = cfg.experiment();
        exp.seed = cfg.seed + s;
        let demos = generate_demos(&exp.sim, exp.demos, exp.seed)?;
        let test = task_examples(&held_out_demos(&exp, cfg.test_demos)?)?;
        let sub = RunConfig { seed: exp.seed, ..cfg.clone() };
        let synth = backend(&sub, &demos)?;
        for &k in &cfg.k_sweep.ks {
            exp.spec.lookahead_k = k;
            let ex = examples_with(&exp, &demos, Some(synth.as_ref()), &augment_opts(&sub))?;
            let net = train::<f64>(&ex, &exp.sizes(), Head::PLANAR, &exp.train)?.net;
            let median_angle = offline_eval(&net, &test)?;
            info!("seed {} k {k}: {median_angle:.4}", exp.seed);
            rows.push(KRow {
                k,
                seed: exp.seed,
                median_angle,
            });
        }
    }
    let mean = cfg
        .k_sweep
        .ks
        .iter()
        .map(|&k| {
            let v: Vec<f64> = rows.iter().filter(|r| r.k == k).map(|r| r.median_angle).collect();
            (k, v.iter().sum::<f64>() / v.len().max(1) as f64)
        })
        .collect();
    let dir = store::fresh_stage(cfg, "k-sweep")?;
    write_csv(&dir.join("k-sweep.csv"), &rows)?;
    store::write_json(
        &dir.join("report.json"),
        &Envelope::new(
            cfg,
            KSweepReport {
                backend: cfg.backend.kind,
                rows,
                mean,
            },
        ),
    )?;
    Ok(())
}

fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let read = |stage: &str| -> Result<Option<serde_json::Value>, CliError> {
        let p = cfg.out.join(stage).join("report.json");
        Ok(if p.exists() { Some(serde_json::from_slice(&fs::read(p)?)?) } else { None })
    };
    let offline = read("eval-offline")?;
    let online = read("eval-online")?;
    let sweep = read("k-sweep")?;
    if offline.is_none() && online.is_none() && sweep.is_none() {
        return Err(CliError::MissingInput(format!(
            "no evaluation reports under {} (run eval-offline, eval-online or k-sweep first)",
            cfg.out.display()
        )));
    }
    let mut md = String::from("# Run summary\n\n");
    md += &format!("config hash: `{}`\n", cfg.hash());
    if let Some(v) = &offline {
        md += "\n## Offline (median angle error, rad)\n\n| method | error | train | test |\n|---|---|---|---|\n";
        for r in v["report"].as_array().into_iter().flatten() {
            md += &format!(
                "| {} | {:.4} | {} | {} |\n",
                r["method"].as_str().unwrap_or("?"),
                r["median_angle"].as_f64().unwrap_or(f64::NAN),
                r["train_size"],
                r["test_size"]
            );
        }
    }
    if let Some(v) = &online {
        md += "\n## Online (A/B success)\n\n| method | successes | trials | rate |\n|---|---|---|---|\n";
        for m in v["report"]["methods"].as_array().into_iter().flatten() {
            md += &format!(
                "| {} | {} | {} | {:.2} |\n",
                m["method"].as_str().unwrap_or("?"),
                m["successes"],
                m["trials"],
                m["success_rate"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
    if let Some(v) = &sweep {
        md += "\n## k-sweep (mean median angle error, rad)\n\n| k | error |\n|---|---|\n";
        for p in v["report"]["mean"].as_array().into_iter().flatten() {
            md += &format!("| {} | {:.4} |\n", p[0], p[1].as_f64().unwrap_or(f64::NAN));
        }
    }
    let dir = store::fresh_stage(cfg, "report")?;
    fs::write(dir.join("summary.md"), md)?;
    store::write_json(
        &dir.join("summary.json"),
        &Envelope::new(
            cfg,
            serde_json::json!({ "offline": offline, "online": online, "k_sweep": sweep }),
        ),
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.global, &cli.command)?;
    match &cli.command {
        Command::GenDemos { .. } => gen_demos(&cfg),
        Command::GenPlay { .. } => gen_play(&cfg),
        Command::ExportTriples { from } => export_triples(&cfg, from),
        Command::Augment => augment(&cfg),
        Command::Train { method } => train_cmd(&cfg, method),
        Command::EvalOffline => eval_offline(&cfg),
        Command::EvalOnline => eval_online(&cfg),
        Command::KSweep => k_sweep(&cfg),
        Command::Report => report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
