use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use subgoal_servo::error::{Error, Result};
use subgoal_servo::executor::{DepthSource, FlowSource, RunConfig};
use subgoal_servo::experiment::{
    ablate_n, aggregate_results_csv, emit_curves, run_experiment, AggregateMetrics,
    ExperimentSpec, Method, AGGREGATE_CSV_HEADER,
};
use subgoal_servo::foresight::GoalNoise;
use subgoal_servo::scenario::{make_scenario, TaskKind};

#[derive(Parser)]
#[command(
    name = "subgoal-servo",
    version,
    about = "Sub-goal-driven visual servoing experiments in an analytic planar-scene simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario JSON files.
    GenScenarios(GenScenariosArgs),
    /// Run a batch of trials for one method and write logs + CSV.
    Run(RunArgs),
    /// Paired-seed sweep over the sub-goal sampling frequency n.
    AblateN(AblateArgs),
    /// Export per-step CSV curves from a trial log.
    Curves(CurvesArgs),
    /// Aggregate a per-trial results CSV into summary metrics.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct GenScenariosArgs {
    /// door | reach
    #[arg(long, default_value = "door")]
    task: TaskKind,
    /// Number of scenarios (seeds seed..seed+count).
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for scenario_<seed>.json files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunOverrides {
    /// door | reach
    #[arg(long, default_value = "door")]
    task: TaskKind,
    /// imagine2servo | rtvs-final | cam-axis
    #[arg(long, default_value = "imagine2servo")]
    method: Method,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (logs, results.csv, aggregate.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// estimated | ground-truth
    #[arg(long)]
    flow: Option<FlowSource>,
    /// flowdepth | ground-truth
    #[arg(long)]
    depth: Option<DepthSource>,
    /// Sub-goal sampling frequency (keyframes per trajectory).
    #[arg(long)]
    n: Option<usize>,
    /// Goal pose jitter, meters.
    #[arg(long)]
    noise_trans: Option<f64>,
    /// Goal pose jitter, degrees.
    #[arg(long)]
    noise_rot_deg: Option<f64>,
    /// Goal pixel noise, 0-255 units.
    #[arg(long)]
    noise_px: Option<f64>,
    /// Outer-loop goal convergence threshold, 0-255 units.
    #[arg(long)]
    eps_p: Option<f64>,
    /// Inner-loop photometric threshold, 0-255 units.
    #[arg(long)]
    eps_phi: Option<f64>,
    /// Simulated seconds per control step.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_total: Option<usize>,
    /// JSON config file; values present in it override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: RunOverrides,
    /// Drive the sub-goal generator over HTTP instead of in-process
    /// (e.g. http://127.0.0.1:8700/subgoal). Implies sequential trials.
    #[arg(long)]
    foresight_url: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    overrides: RunOverrides,
    /// Comma-separated sampling frequencies, each >= 2.
    #[arg(long, default_value = "2,4,9", value_delimiter = ',')]
    n_values: Vec<usize>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Trial log (.jsonl) produced by `run`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// Per-trial results.csv produced by `run`.
    #[arg(long)]
    results: PathBuf,
    /// Optional output CSV; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn spec_from_overrides(o: &RunOverrides) -> Result<ExperimentSpec> {
    let mut run = RunConfig::default();
    if let Some(f) = o.flow {
        run.flow_source = f;
    }
    if let Some(d) = o.depth {
        run.depth_source = d;
    }
    if let Some(n) = o.n {
        run.oracle.n = n;
    }
    run.oracle.noise = GoalNoise {
        sigma_trans: o.noise_trans.unwrap_or(0.0),
        sigma_rot: o.noise_rot_deg.unwrap_or(0.0).to_radians(),
        sigma_pixel: o.noise_px.unwrap_or(0.0),
    };
    if let Some(v) = o.eps_p {
        run.eps_p = v;
    }
    if let Some(v) = o.eps_phi {
        run.eps_phi = v;
    }
    if let Some(v) = o.dt {
        run.dt = v;
    }
    if let Some(v) = o.max_inner {
        run.max_inner_steps = v;
    }
    if let Some(v) = o.max_total {
        run.max_total_steps = v;
    }
    let spec = ExperimentSpec {
        task: o.task,
        method: o.method,
        trials: o.trials,
        seed: o.seed,
        run,
        out_dir: o.out.clone(),
    };
    match &o.config {
        None => Ok(spec),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let overlay: serde_json::Value = serde_json::from_str(&text)?;
            let mut base = serde_json::to_value(&spec)?;
            merge_json(&mut base, overlay);
            Ok(serde_json::from_value(base)?)
        }
    }
}

/// Recursively overlays `patch` onto `base`: config values win over flags.
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn print_metrics(m: &AggregateMetrics) {
    println!("{AGGREGATE_CSV_HEADER}");
    println!("{}", m.csv_row());
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScenarios(args) => {
            std::fs::create_dir_all(&args.out)?;
            for i in 0..args.count {
                let seed = args.seed + i as u64;
                let scenario = make_scenario(args.task, seed);
                let path = args.out.join(format!("scenario_{seed:05}.json"));
                std::fs::write(&path, scenario.to_json()?)?;
            }
            println!("wrote {} {} scenarios to {}", args.count, args.task, args.out.display());
            Ok(())
        }
        Command::Run(args) => {
            let spec = spec_from_overrides(&args.overrides)?;
            let metrics = match &args.foresight_url {
                None => run_experiment(&spec)?.0,
                Some(url) => run_remote_experiment(&spec, url)?,
            };
            print_metrics(&metrics);
            Ok(())
        }
        Command::AblateN(args) => {
            let spec = spec_from_overrides(&args.overrides)?;
            let table = ablate_n(&spec, &args.n_values)?;
            println!("n,trials,success_rate,mean_steps");
            for (n, m) in &table {
                println!("{n},{},{},{}", m.trials, m.success_rate, m.mean_steps);
            }
            Ok(())
        }
        Command::Curves(args) => {
            let paths = emit_curves(&args.log, &args.out)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Aggregate(args) => {
            let metrics = aggregate_results_csv(&args.results)?;
            let mut text = String::from(AGGREGATE_CSV_HEADER);
            text.push('\n');
            for m in &metrics {
                text.push_str(&m.csv_row());
                text.push('\n');
            }
            match args.out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

/// Sequentially runs trials against a remote sub-goal service.
fn run_remote_experiment(spec: &ExperimentSpec, url: &str) -> Result<AggregateMetrics> {
    use subgoal_servo::executor::{run_trial, Controller};
    use subgoal_servo::remote::RemoteForesight;

    if spec.method != Method::Imagine2Servo {
        return Err(Error::InvalidConfig(
            "remote foresight applies to the imagine2servo method only".into(),
        ));
    }
    if spec.run.flow_source == FlowSource::GroundTruth {
        return Err(Error::InvalidConfig(
            "ground-truth flow needs a pose-aware generator; remote services carry no pose".into(),
        ));
    }
    let controller = Controller::from_config(&spec.run);
    let mut results = Vec::with_capacity(spec.trials);
    for i in 0..spec.trials as u64 {
        let scenario = make_scenario(spec.task, spec.seed + i);
        let mut foresight = RemoteForesight::new(url, scenario.intrinsics)?;
        results.push(run_trial(&scenario, &spec.run, &mut foresight, &controller)?);
    }
    Ok(AggregateMetrics::from_results(spec.task, spec.method, &results))
}
