//! Batch experiment harness: run a method over seeded scenarios, write
//! per-trial trajectory logs and per-trial CSV rows, aggregate metrics,
//! sweep the sub-goal sampling frequency, and export per-step curves.
//!
//! Output layout under the experiment directory:
//! - `results.csv` — one row per trial, header
//!   `seed,method,outcome,trans_err_m,rot_err,steps,collisions`
//! - `aggregate.csv` — one row per experiment, header
//!   `task,method,trials,success_rate,mean_trans_err_m,mean_rot_err,mean_steps,collision_rate`
//! - `trials/<method>_<seed>.jsonl` — one step record per line plus a
//!   trailing result summary line.

use crate::error::{Error, Result};
use crate::executor::{
    run_trial, Controller, Outcome, RunConfig, StepRecord, TrialResult,
};
use crate::flow::photometric_error;
use crate::foresight::{KeyframeOracle, OracleConfig};
use crate::geometry::{integrate_twist, pose_error, Twist};
use crate::scenario::{make_scenario, Scenario, TaskKind};
use crate::scene::{check_collision, render};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const RESULTS_CSV_HEADER: &str = "seed,method,outcome,trans_err_m,rot_err,steps,collisions";
pub const AGGREGATE_CSV_HEADER: &str =
    "task,method,trials,success_rate,mean_trans_err_m,mean_rot_err,mean_steps,collision_rate";
pub const ABLATION_CSV_HEADER: &str = "n,trials,success_rate,mean_steps";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "imagine2servo")]
    Imagine2Servo,
    #[serde(rename = "rtvs-final")]
    RtvsFinal,
    #[serde(rename = "cam-axis")]
    CamAxis,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Imagine2Servo => "imagine2servo",
            Method::RtvsFinal => "rtvs-final",
            Method::CamAxis => "cam-axis",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "imagine2servo" => Ok(Method::Imagine2Servo),
            "rtvs-final" => Ok(Method::RtvsFinal),
            "cam-axis" => Ok(Method::CamAxis),
            other => Err(format!(
                "unknown method '{other}' (imagine2servo|rtvs-final|cam-axis)"
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub task: TaskKind,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    pub run: RunConfig,
    /// Output directory; no files are written when absent.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            task: TaskKind::Door,
            method: Method::Imagine2Servo,
            trials: 20,
            seed: 0,
            run: RunConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        self.run.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub task: TaskKind,
    pub method: Method,
    pub trials: usize,
    pub success_rate: f64,
    /// Mean over non-collision trials (timeouts contribute their final pose).
    pub mean_trans_err: f64,
    pub mean_rot_err: f64,
    pub mean_steps: f64,
    pub collision_rate: f64,
}

impl AggregateMetrics {
    pub fn from_results(task: TaskKind, method: Method, results: &[TrialResult]) -> Self {
        let trials = results.len();
        let successes = results.iter().filter(|r| r.is_success()).count();
        let collisions = results.iter().filter(|r| r.outcome == Outcome::Collision).count();
        let scored: Vec<&TrialResult> = results
            .iter()
            .filter(|r| r.outcome != Outcome::Collision)
            .collect();
        let mean = |f: &dyn Fn(&TrialResult) -> f64| -> f64 {
            if scored.is_empty() {
                f64::NAN
            } else {
                scored.iter().map(|r| f(r)).sum::<f64>() / scored.len() as f64
            }
        };
        AggregateMetrics {
            task,
            method,
            trials,
            success_rate: successes as f64 / trials as f64,
            mean_trans_err: mean(&|r| r.trans_err),
            mean_rot_err: mean(&|r| r.rot_err),
            mean_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / trials as f64,
            collision_rate: collisions as f64 / trials as f64,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.task,
            self.method,
            self.trials,
            self.success_rate,
            self.mean_trans_err,
            self.mean_rot_err,
            self.mean_steps,
            self.collision_rate
        )
    }
}

/// Servos directly at the render of the final trajectory pose — the
/// privileged-final-image arm. Equivalent to the oracle with `n = 2` and
/// noise disabled.
pub fn rtvs_final_baseline(scenario: &Scenario, cfg: &RunConfig) -> Result<TrialResult> {
    let mut run = *cfg;
    run.oracle = OracleConfig { n: 2, ..OracleConfig::default() };
    let controller = Controller::from_config(&run);
    let mut oracle = KeyframeOracle::new(scenario, &run.oracle)?;
    run_trial(scenario, &run, &mut oracle, &controller)
}

/// Blind constant-velocity push along the camera's initial optical axis,
/// driven for the straight-line distance to the goal pose (plus a small
/// overshoot margin), stopping early on collision.
pub fn cam_axis_baseline(scenario: &Scenario, cfg: &RunConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let target = scenario.target_pose();
    let reach = (target.translation - scenario.start_pose.translation).norm() + 0.25;
    let speed = cfg.solver.max_linear_speed;
    let twist = Twist::new(Vector3::new(0.0, 0.0, speed), Vector3::zeros());
    let (goal_image, _) = render(&scenario.scene, &target, &scenario.intrinsics);

    let mut state = crate::executor::SimState::at_start(scenario);
    let mut records = Vec::new();
    let mut collided = false;
    let mut traveled = 0.0;
    while traveled < reach && state.total_steps < cfg.max_total_steps {
        let prev = state.pose;
        state.pose = integrate_twist(&state.pose, &twist, cfg.dt);
        traveled += speed * cfg.dt;
        track_crossing_public(scenario, &prev, &state.pose, &mut state.crossed);
        let (obs, depth) = render(&scenario.scene, &state.pose, &scenario.intrinsics);
        state.obs = obs;
        state.obs_depth = depth;
        state.total_steps += 1;
        let collision = check_collision(&scenario.scene, &cfg.body, &state.pose);
        records.push(StepRecord {
            step: state.total_steps - 1,
            pose: state.pose,
            twist,
            photometric_error: photometric_error(&state.obs, &goal_image)?,
            subgoal: 0,
            collision,
        });
        if collision {
            collided = true;
            break;
        }
    }

    let (trans_err, rot_err) = pose_error(&state.pose, &target);
    let outcome = if collided {
        Outcome::Collision
    } else {
        let success = match scenario.task {
            TaskKind::Door => state.crossed,
            TaskKind::Reach => trans_err < 0.03 && rot_err < 0.03,
        };
        if success {
            Outcome::Success
        } else {
            Outcome::Timeout
        }
    };
    Ok(TrialResult { outcome, trans_err, rot_err, steps: state.total_steps, records })
}

fn track_crossing_public(scenario: &Scenario, prev: &crate::geometry::Pose, next: &crate::geometry::Pose, crossed: &mut bool) {
    if *crossed {
        return;
    }
    let Some(door) = &scenario.door else { return };
    let (y0, y1) = (prev.translation.y, next.translation.y);
    if y0 < door.plane_y && y1 >= door.plane_y {
        let t = (door.plane_y - y0) / (y1 - y0);
        let x = prev.translation.x + t * (next.translation.x - prev.translation.x);
        let z = prev.translation.z + t * (next.translation.z - prev.translation.z);
        if door.contains(x, z) {
            *crossed = true;
        }
    }
}

/// Runs one trial of `method` on the scenario generated from `seed`.
pub fn run_one(task: TaskKind, method: Method, seed: u64, cfg: &RunConfig) -> Result<TrialResult> {
    let scenario = make_scenario(task, seed);
    match method {
        Method::Imagine2Servo => {
            let controller = Controller::from_config(cfg);
            let mut oracle = KeyframeOracle::new(&scenario, &cfg.oracle)?;
            run_trial(&scenario, cfg, &mut oracle, &controller)
        }
        Method::RtvsFinal => rtvs_final_baseline(&scenario, cfg),
        Method::CamAxis => cam_axis_baseline(&scenario, cfg),
    }
}

/// Runs `trials` seeded trials of the spec's method, writes logs and CSV
/// when an output directory is configured, and aggregates.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(AggregateMetrics, Vec<(u64, TrialResult)>)> {
    spec.validate()?;
    let seeds: Vec<u64> = (0..spec.trials as u64).map(|i| spec.seed + i).collect();
    let results: Vec<(u64, Result<TrialResult>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_one(spec.task, spec.method, seed, &spec.run)))
        .collect();
    let mut ordered = Vec::with_capacity(results.len());
    for (seed, r) in results {
        ordered.push((seed, r?));
    }

    let metrics = AggregateMetrics::from_results(
        spec.task,
        spec.method,
        &ordered.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(),
    );

    if let Some(dir) = &spec.out_dir {
        write_experiment_outputs(dir, spec.method, &metrics, &ordered)?;
    }
    Ok((metrics, ordered))
}

fn write_experiment_outputs(
    dir: &Path,
    method: Method,
    metrics: &AggregateMetrics,
    results: &[(u64, TrialResult)],
) -> Result<()> {
    std::fs::create_dir_all(dir.join("trials"))?;
    let mut csv = String::from(RESULTS_CSV_HEADER);
    csv.push('\n');
    for (seed, r) in results {
        writeln!(
            csv,
            "{seed},{method},{},{},{},{},{}",
            r.outcome,
            r.trans_err,
            r.rot_err,
            r.steps,
            r.collision_count()
        )
        .expect("write to string");
        write_trial_log(&dir.join("trials").join(format!("{method}_{seed:05}.jsonl")), r)?;
    }
    append_or_create(&dir.join("results.csv"), &csv, RESULTS_CSV_HEADER)?;
    let agg = format!("{}\n{}\n", AGGREGATE_CSV_HEADER, metrics.csv_row());
    append_or_create(&dir.join("aggregate.csv"), &agg, AGGREGATE_CSV_HEADER)?;
    Ok(())
}

/// Appends rows to an existing CSV (skipping the duplicate header) or
/// creates it.
fn append_or_create(path: &Path, content: &str, header: &str) -> Result<()> {
    if path.exists() {
        let existing = std::fs::read_to_string(path)?;
        let body = content.strip_prefix(header).map(|s| s.trim_start_matches('\n')).unwrap_or(content);
        std::fs::write(path, format!("{existing}{body}"))?;
    } else {
        std::fs::write(path, content)?;
    }
    Ok(())
}

/// Writes the JSON-lines trajectory log: one step per line plus a trailing
/// summary line.
pub fn write_trial_log(path: &Path, result: &TrialResult) -> Result<()> {
    let mut out = String::new();
    for record in &result.records {
        writeln!(out, "{}", serde_json::to_string(record)?).expect("write to string");
    }
    writeln!(out, "{}", serde_json::to_string(result)?).expect("write to string");
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a trajectory log back into step records and the summary.
pub fn read_trial_log(path: &Path) -> Result<(Vec<StepRecord>, TrialResult)> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut summary: Option<TrialResult> = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(rec) = serde_json::from_str::<StepRecord>(line) {
            records.push(rec);
        } else if let Ok(res) = serde_json::from_str::<TrialResult>(line) {
            summary = Some(res);
        } else {
            return Err(Error::MalformedLog(format!("unparseable line: {line}")));
        }
    }
    let mut summary = summary.ok_or_else(|| Error::MalformedLog("missing summary line".into()))?;
    summary.records = records.clone();
    Ok((records, summary))
}

/// Emits the per-step analysis curves from a trajectory log: photometric
/// error, linear speed, and angular speed, each with the sub-goal index as
/// a boundary marker. Returns the three paths written.
pub fn emit_curves(log_path: &Path, out_dir: &Path) -> Result<[PathBuf; 3]> {
    let (records, _) = read_trial_log(log_path)?;
    std::fs::create_dir_all(out_dir)?;
    let stem = log_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trial");

    let mut photometric = String::from("step,photometric_error,subgoal\n");
    let mut linear = String::from("step,v_mag,subgoal\n");
    let mut angular = String::from("step,omega_mag,subgoal\n");
    for r in &records {
        writeln!(photometric, "{},{},{}", r.step, r.photometric_error, r.subgoal).expect("write");
        writeln!(linear, "{},{},{}", r.step, r.twist.linear_speed(), r.subgoal).expect("write");
        writeln!(angular, "{},{},{}", r.step, r.twist.angular_speed(), r.subgoal).expect("write");
    }
    let paths = [
        out_dir.join(format!("{stem}_photometric.csv")),
        out_dir.join(format!("{stem}_linear_speed.csv")),
        out_dir.join(format!("{stem}_angular_speed.csv")),
    ];
    std::fs::write(&paths[0], photometric)?;
    std::fs::write(&paths[1], linear)?;
    std::fs::write(&paths[2], angular)?;
    Ok(paths)
}

/// Paired-seed ablation over the sub-goal sampling frequency: every arm
/// re-runs the same scenario seeds with a different `n`.
pub fn ablate_n(
    spec: &ExperimentSpec,
    n_values: &[usize],
) -> Result<Vec<(usize, AggregateMetrics)>> {
    let mut table = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("ablation n must be >= 2, got {n}")));
        }
        let mut arm = spec.clone();
        arm.method = Method::Imagine2Servo;
        arm.run.oracle.n = n;
        arm.out_dir = spec.out_dir.as_ref().map(|d| d.join(format!("n{n}")));
        let (metrics, _) = run_experiment(&arm)?;
        table.push((n, metrics));
    }
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from(ABLATION_CSV_HEADER);
        csv.push('\n');
        for (n, m) in &table {
            writeln!(csv, "{n},{},{},{}", m.trials, m.success_rate, m.mean_steps).expect("write");
        }
        std::fs::write(dir.join("ablation.csv"), csv)?;
    }
    Ok(table)
}

/// Recomputes aggregate metrics from a per-trial results CSV.
pub fn aggregate_results_csv(path: &Path) -> Result<Vec<AggregateMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != RESULTS_CSV_HEADER {
        return Err(Error::MalformedLog(format!("unexpected header: {header}")));
    }
    // Group rows by method, preserving first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<TrialResult>> = Default::default();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::MalformedLog(format!("bad row: {line}")));
        }
        let outcome = match fields[2] {
            "success" => Outcome::Success,
            "collision" => Outcome::Collision,
            "timeout" => Outcome::Timeout,
            "degenerate-flow" => Outcome::DegenerateFlow,
            other => return Err(Error::MalformedLog(format!("bad outcome: {other}"))),
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::MalformedLog(format!("bad number '{s}': {e}")))
        };
        let result = TrialResult {
            outcome,
            trans_err: parse(fields[3])?,
            rot_err: parse(fields[4])?,
            steps: fields[5]
                .parse()
                .map_err(|e| Error::MalformedLog(format!("bad steps: {e}")))?,
            records: Vec::new(),
        };
        if !groups.contains_key(fields[1]) {
            order.push(fields[1].to_string());
        }
        groups.entry(fields[1].to_string()).or_default().push(result);
    }
    let mut out = Vec::new();
    for name in order {
        let method: Method = name
            .parse()
            .map_err(|e: String| Error::MalformedLog(e))?;
        // Task is not recorded per row; aggregation is task-agnostic here.
        out.push(AggregateMetrics::from_results(TaskKind::Door, method, &groups[&name]));
    }
    Ok(out)
}
