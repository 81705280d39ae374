//! The `youla` command-line tool.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use youla_core::lincontrol::{care_residual, check_stabilizable, is_hurwitz, lqr_with, LinearPair, LqrSolution};
use youla_core::linalg::{norm, Mat};
use youla_core::necessity::necessity_report;
use youla_core::plant::ObstacleTask;
use youla_core::policy::{Checkpoint, GenericCController, Policy, PolicyKind};
use youla_core::training::{envelope, envelope_csv, simulate_policy, steps_for, train_with};
use youla_core::verify::{les_report, sphere_point};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<youla_core::Error> for CliError {
    fn from(e: youla_core::Error) -> Self {
        use youla_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::Dim { .. } | E::Json(_) | E::Io(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "youla", version, about = "Stable-by-construction policy learning on the cart-pendulum")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Design the LQR gain and print K, P and the Hurwitz verdict as JSON.
    Lqr(Common),
    /// Train a policy; writes one run directory per seed.
    Train(TrainArgs),
    /// Roll out a checkpoint from one initial state.
    Eval(EvalArgs),
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Summarize finished run directories side by side.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; also writes the envelope across them.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output root; overrides `RUN_DIR` and the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Initial state `p,pdot,theta,thetadot`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Trajectory CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum VerifyCommand {
    /// Structural Hurwitz rate, decay fits and tail-bound checks of a checkpoint.
    Les(LesArgs),
    /// Transform linear controllers into Youla form and compare the loops.
    Necessity(NecessityArgs),
}

#[derive(Args, Debug)]
pub struct LesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SourceController {
    Static,
    Dynamic,
    Both,
}

#[derive(Args, Debug)]
pub struct NecessityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = SourceController::Both)]
    pub controller: SourceController,
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Merged curve CSV destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` and runs the command, writing results to stdout.
pub fn main_with(args: impl IntoIterator<Item = String>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Lqr(c) => cmd_lqr(&ExperimentConfig::load(c.config.as_deref())?),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Verify(VerifyCommand::Les(a)) => cmd_verify_les(&a),
        Command::Verify(VerifyCommand::Necessity(a)) => cmd_verify_necessity(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Output root: explicit flag, then `RUN_DIR`, then the config.
pub fn output_root(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("RUN_DIR").map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone())
}

fn lqr_gain(cfg: &ExperimentConfig) -> Result<(LqrSolution, LinearPair), CliError> {
    let pair = cfg.linear_pair()?;
    if !check_stabilizable(&pair) {
        return Err(CliError::Numerical("(A, B) is not stabilizable".into()));
    }
    let (q, r) = cfg.weights();
    Ok((lqr_with(&pair, &q, &r, &cfg.lqr.riccati)?, pair))
}

pub fn cmd_lqr(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let (sol, pair) = lqr_gain(cfg)?;
    let (q, r) = cfg.weights();
    let acl = pair.closed_loop(&sol.k)?;
    Ok(pretty(&json!({
        "K": sol.k.to_rows(),
        "P": sol.p.to_rows(),
        "hurwitz": is_hurwitz(&acl),
        "iterations": sol.iterations,
        "care_residual": care_residual(&pair, &q, &r, &sol.p)?,
    })))
}

/// Per-run summary stored next to the curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: PolicyKind,
    pub seed: u64,
    pub num_params: usize,
    pub epochs: usize,
    pub final_cost: f64,
    pub best_cost: f64,
    /// `None` for classes without the structural guarantee.
    pub hurwitz: Option<bool>,
    pub spot_checks: Vec<youla_core::training::HurwitzSpot>,
    pub flagged_epochs: Vec<usize>,
    /// Grid points of the nominal trajectory inside an obstacle; `None` when
    /// that rollout diverged.
    pub penetrations: Option<usize>,
    pub min_clearance: Option<f64>,
    pub wall_secs: f64,
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = ExperimentConfig::load(args.common.config.as_deref())?;
    if let Some(p) = args.policy {
        cfg.train.policy = p;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let seeds = match (&args.seeds, args.seed) {
        (Some(s), _) if !s.is_empty() => s.clone(),
        (_, Some(s)) => vec![s],
        _ => vec![cfg.train.seed],
    };
    cfg.validate()?;
    let root = output_root(args.out.as_deref(), &cfg);
    let kind = cfg.train.policy;
    let task = cfg.task();
    let k = lqr_gain(&cfg)?.0.k;
    let mut curves = Vec::new();
    let mut dirs = Vec::new();
    for &seed in &seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = seed;
        let dir = root.join(kind.name()).join(format!("seed{seed}"));
        let quiet = args.quiet;
        let result = train_with(&run_cfg.train, &run_cfg.policy, &task, &k, |e| {
            if !quiet {
                eprintln!(
                    "[{kind} seed {seed}] epoch {:>4} mean {:.6} min {:.6} max {:.6}{}",
                    e.epoch,
                    e.mean_cost,
                    e.min_cost,
                    e.max_cost,
                    if e.flagged { " flagged" } else { "" }
                );
            }
        })?;
        write(&dir.join("config.resolved.toml"), &run_cfg.to_toml())?;
        write(&dir.join("curve.csv"), &result.curve.to_csv())?;
        let ck = result.policy.checkpoint(&result.params, &run_cfg.policy)?;
        write(&dir.join("checkpoint.json"), &ck.to_json()?)?;
        let summary = write_trajectories(&dir, &run_cfg, &task, &result.policy, &result.params)?;
        let means: Vec<f64> = result.curve.epochs.iter().map(|e| e.mean_cost).collect();
        let summary = RunSummary {
            kind,
            seed,
            num_params: result.policy.num_params(),
            epochs: result.curve.len(),
            final_cost: means.last().copied().unwrap_or(f64::NAN),
            best_cost: means.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min),
            hurwitz: result.final_hurwitz,
            spot_checks: result.spot_checks,
            flagged_epochs: result.curve.flagged_epochs(),
            penetrations: summary.0,
            min_clearance: summary.1,
            wall_secs: result.curve.wall_secs.iter().sum(),
        };
        write(&dir.join("summary.json"), &pretty(&summary))?;
        curves.push(result.curve);
        dirs.push(dir.display().to_string());
    }
    let mut out = json!({ "runs": dirs });
    if seeds.len() > 1 {
        let refs: Vec<_> = curves.iter().collect();
        let path = root.join(kind.name()).join("envelope.csv");
        write(&path, &envelope_csv(&envelope(&refs)?))?;
        out["envelope"] = json!(path.display().to_string());
    }
    Ok(pretty(&out))
}

/// Nominal trajectory CSV; returns (penetrations, min clearance).
fn write_trajectories(
    dir: &Path,
    cfg: &ExperimentConfig,
    task: &ObstacleTask,
    policy: &Policy,
    params: &[f64],
) -> Result<(Option<usize>, Option<f64>), CliError> {
    let steps = cfg.train.steps()?;
    match simulate_policy(policy, params, &task.plant, task, &cfg.verify.x0, cfg.train.step, steps) {
        Ok(r) => {
            write(&dir.join("trajectories").join("nominal.csv"), &task.trajectory_csv(&r))?;
            Ok((Some(task.penetrations(&r)), Some(task.min_clearance(&r))))
        }
        // A diverging baseline still completes the run; the failure shows in the summary.
        Err(_) => Ok((None, None)),
    }
}

fn load_checkpoint(path: &Path) -> Result<(Policy, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(ck.restore()?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let cfg = ExperimentConfig::load(args.common.config.as_deref())?;
    let (policy, params) = load_checkpoint(&args.checkpoint)?;
    let x0 = args.x0.clone().unwrap_or_else(|| cfg.verify.x0.clone());
    if x0.len() != policy.state_dim() {
        return Err(CliError::Usage(format!("x0 needs {} entries, got {}", policy.state_dim(), x0.len())));
    }
    let horizon = args.horizon.unwrap_or(cfg.train.horizon);
    let task = cfg.task();
    let steps = steps_for(horizon, cfg.train.step)?;
    let r = simulate_policy(&policy, &params, &task.plant, &task, &x0, cfg.train.step, steps)?;
    if let Some(out) = &args.out {
        write(out, &task.trajectory_csv(&r))?;
    }
    Ok(pretty(&json!({
        "kind": policy.kind(),
        "x0": x0,
        "horizon": horizon,
        "cost": r.cost(),
        "final_norm": norm(&r.final_state()[..policy.state_dim()]),
        "penetrations": task.penetrations(&r),
        "min_clearance": task.min_clearance(&r),
    })))
}

pub fn cmd_verify_les(args: &LesArgs) -> Result<String, CliError> {
    let mut cfg = ExperimentConfig::load(args.common.config.as_deref())?;
    if let Some(d) = args.draws {
        cfg.verify.draws = d;
    }
    let (policy, params) = load_checkpoint(&args.checkpoint)?;
    let task = cfg.task();
    // Tail bound with p = 2 needs a cost of the form gamma1 |x|^2.
    let mut quad = task.clone();
    quad.field.gamma2 = 0.0;
    let report = les_report(&policy, &params, &task.plant, &quad, &cfg.les_options())?;
    Ok(pretty(&report))
}

/// Stable two-state linear controller wrapped around the LQR gain.
pub fn dynamic_source<'a>(k: &Mat) -> Result<GenericCController<'a>, CliError> {
    Ok(GenericCController::linear(
        Mat::diag(&[-1.0, -2.0]),
        Mat::from_rows(&[vec![0.1, 0.0, 0.2, 0.0], vec![0.0, 0.05, 0.0, 0.1]])?,
        Mat::from_rows(&[vec![0.3, -0.2]])?,
        k.clone(),
        vec![0.01, -0.02],
    )?)
}

pub fn cmd_verify_necessity(args: &NecessityArgs) -> Result<String, CliError> {
    let cfg = ExperimentConfig::load(args.common.config.as_deref())?;
    let draws = args.draws.unwrap_or(cfg.verify.necessity_draws);
    let task = cfg.task();
    let pair = cfg.linear_pair()?;
    let k = lqr_gain(&cfg)?.0.k;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
    let x0s: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let r = cfg.verify.radius * rng.gen::<f64>();
            sphere_point(&mut rng, pair.n(), r)
        })
        .collect();
    let mut out = serde_json::Map::new();
    let (h, horizon) = (cfg.verify.step, cfg.verify.necessity_horizon);
    let mut worst: f64 = 0.0;
    if matches!(args.controller, SourceController::Static | SourceController::Both) {
        let rep = necessity_report(&GenericCController::static_gain(k.clone()), &task.plant, &pair, k.clone(), &x0s, horizon, h)?;
        worst = worst.max(rep.equivalence.iter().map(|e| e.max_input_deviation).fold(0.0, f64::max));
        out.insert("static".into(), serde_json::to_value(rep).expect("serializable"));
    }
    if matches!(args.controller, SourceController::Dynamic | SourceController::Both) {
        let rep = necessity_report(&dynamic_source(&k)?, &task.plant, &pair, k.clone(), &x0s, horizon, h)?;
        worst = worst.max(rep.equivalence.iter().map(|e| e.max_input_deviation).fold(0.0, f64::max));
        out.insert("dynamic".into(), serde_json::to_value(rep).expect("serializable"));
    }
    out.insert("max_input_deviation".into(), json!(worst));
    Ok(pretty(&out))
}

/// One row of `compare`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub run: String,
    pub kind: PolicyKind,
    pub seed: u64,
    pub final_cost: f64,
    pub best_cost: f64,
    pub hurwitz: String,
    pub violations: Option<usize>,
}

fn read_curve(path: &Path) -> Result<Vec<[f64; 3]>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("missing {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(youla_core::training::LearningCurve::CSV_HEADER) {
        return Err(CliError::Usage(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line.split(',').skip(1).map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(
                |e| CliError::Usage(format!("{} line {}: {e}", path.display(), i + 2)),
            )?;
            match v[..] {
                [a, b, c] => Ok([a, b, c]),
                _ => Err(CliError::Usage(format!("{} line {}: expected 4 columns", path.display(), i + 2))),
            }
        })
        .collect()
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for dir in &args.dirs {
        let sp = dir.join("summary.json");
        let text = fs::read_to_string(&sp).map_err(|e| CliError::Usage(format!("missing {}: {e}", sp.display())))?;
        let s: RunSummary = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", sp.display())))?;
        let curve = read_curve(&dir.join("curve.csv"))?;
        let means: Vec<f64> = curve.iter().map(|c| c[0]).collect();
        rows.push(CompareRow {
            run: dir.display().to_string(),
            kind: s.kind,
            seed: s.seed,
            final_cost: means.last().copied().unwrap_or(f64::NAN),
            best_cost: means.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min),
            hurwitz: s.hurwitz.map_or("n/a".to_string(), |h| h.to_string()),
            violations: s.penetrations,
        });
        curves.push(curve);
    }
    if let Some(csv) = &args.csv {
        let mut out = String::from("epoch");
        for i in 0..rows.len() {
            out.push_str(&format!(",run{i}_mean,run{i}_min,run{i}_max"));
        }
        out.push('\n');
        let len = curves.iter().map(Vec::len).max().unwrap_or(0);
        for e in 0..len {
            out.push_str(&(e + 1).to_string());
            for c in &curves {
                match c.get(e) {
                    Some([a, b, d]) => out.push_str(&format!(",{a},{b},{d}")),
                    None => out.push_str(",,,"),
                }
            }
            out.push('\n');
        }
        write(csv, &out)?;
    }
    let mut table = format!(
        "{:<5} {:<40} {:<14} {:>5} {:>14} {:>14} {:>8} {:>10}\n",
        "run", "dir", "kind", "seed", "final_cost", "best_cost", "hurwitz", "violations"
    );
    for (i, r) in rows.iter().enumerate() {
        let violations = r.violations.map_or("diverged".to_string(), |v| v.to_string());
        table.push_str(&format!(
            "{:<5} {:<40} {:<14} {:>5} {:>14.6e} {:>14.6e} {:>8} {:>10}\n",
            format!("run{i}"),
            r.run,
            r.kind.name(),
            r.seed,
            r.final_cost,
            r.best_cost,
            r.hurwitz,
            violations
        ));
    }
    Ok(table.trim_end().to_string())
}
