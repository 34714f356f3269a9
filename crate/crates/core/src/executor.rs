//! End-to-end trial execution: alternate sub-goal generation with inner-loop
//! servoing, integrating solved twists in simulation, logging every step,
//! and scoring the trial.
//!
//! The outer loop terminates when a freshly sampled goal photometrically
//! matches the previous one (the generator has reached its fixed point); the
//! inner loop runs while the photometric error to the current sub-goal is at
//! or above its threshold and budgets remain. Collisions and degenerate flow
//! end the trial immediately with their own outcomes.

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, photometric_error, FlowEstimatorConfig};
use crate::foresight::{goal_converged, Foresight, ForesightRequest, OracleConfig, Subgoal};
use crate::geometry::{integrate_twist, pose_error, Pose, Twist};
use crate::ibvs::{clamp_twist, solve_velocity, solve_velocity_flow_depth, SolverConfig};
use crate::image::{DepthMap, ImageBuffer};
use crate::scenario::{Scenario, TaskKind};
use crate::scene::{check_collision, ground_truth_flow, render, CollisionBody};
use serde::{Deserialize, Serialize};

/// Where the controller's target flow comes from: the dense estimator on
/// rendered images, or exact simulator correspondence (requires a
/// pose-aware sub-goal generator).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowSource {
    Estimated,
    GroundTruth,
}

/// Depth fed to the interaction matrix: the flow-magnitude proxy, or the
/// simulator's exact depth of the current view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthSource {
    FlowDepth,
    GroundTruth,
}

impl std::str::FromStr for FlowSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "estimated" => Ok(FlowSource::Estimated),
            "ground-truth" => Ok(FlowSource::GroundTruth),
            other => Err(format!("unknown flow source '{other}' (estimated|ground-truth)")),
        }
    }
}

impl std::str::FromStr for DepthSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "flowdepth" => Ok(DepthSource::FlowDepth),
            "ground-truth" => Ok(DepthSource::GroundTruth),
            other => Err(format!("unknown depth source '{other}' (flowdepth|ground-truth)")),
        }
    }
}

/// Full configuration of one trial.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Outer-loop convergence threshold on the photometric distance between
    /// consecutive sampled goals, 0-255 mean-abs units.
    pub eps_p: f64,
    /// Inner-loop convergence threshold on the photometric error between the
    /// observation and the current sub-goal, 0-255 mean-abs units.
    pub eps_phi: f64,
    /// Seconds of simulated motion per control step.
    pub dt: f64,
    pub max_inner_steps: usize,
    pub max_total_steps: usize,
    pub flow_source: FlowSource,
    pub depth_source: DepthSource,
    pub estimator: FlowEstimatorConfig,
    pub solver: SolverConfig,
    pub oracle: OracleConfig,
    pub body: CollisionBody,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eps_p: 1.0,
            eps_phi: 2.0,
            dt: 0.05,
            max_inner_steps: 150,
            max_total_steps: 2000,
            flow_source: FlowSource::Estimated,
            depth_source: DepthSource::FlowDepth,
            estimator: FlowEstimatorConfig::default(),
            solver: SolverConfig::default(),
            oracle: OracleConfig::default(),
            body: CollisionBody::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_p <= 0.0 || self.eps_phi <= 0.0 {
            return Err(Error::InvalidConfig("photometric thresholds must be > 0".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidConfig("dt must be > 0".into()));
        }
        if self.max_inner_steps == 0 || self.max_total_steps == 0 {
            return Err(Error::InvalidConfig("step budgets must be > 0".into()));
        }
        self.solver.validate()?;
        self.estimator.validate()?;
        self.oracle.validate()
    }
}

/// One executed control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pose: Pose,
    pub twist: Twist,
    /// Photometric error to the current sub-goal after executing the twist.
    pub photometric_error: f64,
    /// Outer-loop sub-goal index this step served.
    pub subgoal: usize,
    pub collision: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    DegenerateFlow,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
            Outcome::DegenerateFlow => "degenerate-flow",
        };
        write!(f, "{s}")
    }
}

/// Result of one trial. `trans_err` / `rot_err` compare the final pose to
/// the reference trajectory's final pose. Step records are written to the
/// trajectory log separately and skipped when serializing the summary line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    pub trans_err: f64,
    pub rot_err: f64,
    pub steps: usize,
    #[serde(skip)]
    pub records: Vec<StepRecord>,
}

impl TrialResult {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn collision_count(&self) -> usize {
        self.records.iter().filter(|r| r.collision).count()
    }
}

/// The inner-loop controller: turns (observation, sub-goal) into a clamped
/// camera twist through the configured flow and depth sources.
#[derive(Clone, Copy, Debug)]
pub struct Controller {
    pub flow_source: FlowSource,
    pub depth_source: DepthSource,
    pub estimator: FlowEstimatorConfig,
    pub solver: SolverConfig,
}

impl Controller {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Controller {
            flow_source: cfg.flow_source,
            depth_source: cfg.depth_source,
            estimator: cfg.estimator,
            solver: cfg.solver,
        }
    }

    /// Computes the velocity command for the current state. Errors with
    /// [`Error::DegenerateFlow`] when the perceptual signal is too weak.
    pub fn twist_toward(
        &self,
        scenario: &Scenario,
        pose: &Pose,
        obs: &ImageBuffer,
        obs_depth: &DepthMap,
        subgoal: &Subgoal,
    ) -> Result<Twist> {
        let intr = &scenario.intrinsics;
        let flow = match self.flow_source {
            FlowSource::Estimated => estimate_flow(obs, &subgoal.image, &self.estimator)?,
            FlowSource::GroundTruth => {
                let goal_pose = subgoal.render_pose.ok_or_else(|| {
                    Error::InvalidConfig(
                        "ground-truth flow requires a pose-aware sub-goal generator".into(),
                    )
                })?;
                ground_truth_flow(&scenario.scene, pose, &goal_pose, intr)
            }
        };
        let total = flow.width() * flow.height();
        if (flow.valid_count() as f64) < 0.05 * total as f64 {
            return Err(Error::DegenerateFlow { valid: flow.valid_count(), total });
        }
        match self.depth_source {
            DepthSource::FlowDepth => solve_velocity_flow_depth(&flow, intr, &self.solver),
            DepthSource::GroundTruth => solve_velocity(&flow, obs_depth, intr, &self.solver),
        }
    }
}

/// Mutable simulation state threaded through the servo loops.
pub struct SimState {
    pub pose: Pose,
    pub obs: ImageBuffer,
    pub obs_depth: DepthMap,
    pub total_steps: usize,
    /// Whether the camera center has crossed the door plane inside the
    /// aperture (door tasks).
    pub crossed: bool,
}

impl SimState {
    pub fn at_start(scenario: &Scenario) -> Self {
        let (obs, obs_depth) = render(&scenario.scene, &scenario.start_pose, &scenario.intrinsics);
        SimState {
            pose: scenario.start_pose,
            obs,
            obs_depth,
            total_steps: 0,
            crossed: false,
        }
    }
}

/// Why the inner loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerStatus {
    /// Photometric error dropped below the threshold.
    Converged,
    /// Per-sub-goal step budget exhausted.
    InnerBudget,
    /// Photometric error kept rising; stopped early so the outer loop can
    /// resample from the drifted state.
    Diverged,
    /// Total step budget exhausted.
    TotalBudget,
    Collision,
    DegenerateFlow,
}

/// Consecutive steps the error must sit far above its best-so-far before
/// the inner loop is declared divergent.
const DIVERGENCE_PATIENCE: usize = 30;

/// Runs the servo loop against one sub-goal until convergence, budget
/// exhaustion, collision, or degenerate flow, appending one record per
/// executed twist.
pub fn inner_servo(
    scenario: &Scenario,
    subgoal: &Subgoal,
    subgoal_idx: usize,
    state: &mut SimState,
    cfg: &RunConfig,
    controller: &Controller,
    records: &mut Vec<StepRecord>,
) -> Result<InnerStatus> {
    let mut inner = 0;
    let mut best_err = f64::INFINITY;
    let mut rising = 0usize;
    loop {
        let err = photometric_error(&state.obs, &subgoal.image)?;
        if err < cfg.eps_phi {
            return Ok(InnerStatus::Converged);
        }
        // Transients legitimately raise the error while the camera
        // re-orients, so divergence needs both a large margin and patience.
        if err < best_err {
            best_err = err;
            rising = 0;
        } else if err > 1.5 * best_err + cfg.eps_phi {
            rising += 1;
            if rising >= DIVERGENCE_PATIENCE {
                return Ok(InnerStatus::Diverged);
            }
        } else {
            rising = 0;
        }
        if inner >= cfg.max_inner_steps {
            return Ok(InnerStatus::InnerBudget);
        }
        if state.total_steps >= cfg.max_total_steps {
            return Ok(InnerStatus::TotalBudget);
        }
        let twist = match controller.twist_toward(scenario, &state.pose, &state.obs, &state.obs_depth, subgoal) {
            Ok(t) => t,
            Err(Error::DegenerateFlow { .. }) => return Ok(InnerStatus::DegenerateFlow),
            Err(e) => return Err(e),
        };
        // The solver already clamps; re-check at the executor boundary.
        let twist = clamp_twist(&twist, &cfg.solver);
        let prev = state.pose;
        state.pose = integrate_twist(&state.pose, &twist, cfg.dt);
        track_door_crossing(scenario, &prev, &state.pose, &mut state.crossed);
        let (obs, obs_depth) = render(&scenario.scene, &state.pose, &scenario.intrinsics);
        state.obs = obs;
        state.obs_depth = obs_depth;
        state.total_steps += 1;
        inner += 1;
        let collision = check_collision(&scenario.scene, &cfg.body, &state.pose);
        records.push(StepRecord {
            step: state.total_steps - 1,
            pose: state.pose,
            twist,
            photometric_error: photometric_error(&state.obs, &subgoal.image)?,
            subgoal: subgoal_idx,
            collision,
        });
        if collision {
            return Ok(InnerStatus::Collision);
        }
    }
}

/// Detects the camera center crossing the door plane in the forward
/// direction, with the crossing point interpolated between poses and tested
/// against the aperture rectangle.
fn track_door_crossing(scenario: &Scenario, prev: &Pose, next: &Pose, crossed: &mut bool) {
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

/// Executes a full trial: alternate sub-goal sampling and inner servoing
/// until the generator's goals stop changing or budgets exhaust, then score.
///
/// Degenerate flow is a trial outcome, not an error; errors from this
/// function are infrastructure failures (e.g. foresight transport).
pub fn run_trial(
    scenario: &Scenario,
    cfg: &RunConfig,
    foresight: &mut dyn Foresight,
    controller: &Controller,
) -> Result<TrialResult> {
    cfg.validate()?;
    let mut state = SimState::at_start(scenario);
    // A start pose already beyond the plane counts as crossed when inside
    // the aperture's footprint.
    if let Some(door) = &scenario.door {
        let t = &scenario.start_pose.translation;
        state.crossed = t.y >= door.plane_y && door.contains(t.x, t.z);
    }
    let mut records = Vec::new();
    let mut subgoal_idx = 0usize;
    let mut goal = foresight.next_subgoal(&request_for(scenario, &state))?;
    let mut failure: Option<Outcome> = None;
    // Consecutive unconverged inner loops that were re-issued the same goal:
    // the generator is stuck and no further progress is possible.
    let mut stalled = 0usize;

    loop {
        let last_goal = goal.image.clone();
        let status = inner_servo(scenario, &goal, subgoal_idx, &mut state, cfg, controller, &mut records)?;
        match status {
            InnerStatus::Collision => {
                failure = Some(Outcome::Collision);
                break;
            }
            InnerStatus::DegenerateFlow => {
                failure = Some(Outcome::DegenerateFlow);
                break;
            }
            InnerStatus::TotalBudget => break,
            InnerStatus::Converged | InnerStatus::InnerBudget | InnerStatus::Diverged => {}
        }
        if state.total_steps >= cfg.max_total_steps {
            break;
        }
        let new_goal = foresight.next_subgoal(&request_for(scenario, &state))?;
        let same_goal = goal_converged(&last_goal, &new_goal.image, cfg.eps_p)?;
        subgoal_idx += 1;
        if status == InnerStatus::Converged {
            // The generator's fixed point after convergence: task complete.
            if same_goal {
                break;
            }
            stalled = 0;
        } else if same_goal {
            // Unconverged and re-issued the same goal: retry from the
            // drifted state a few times before giving up.
            stalled += 1;
            if stalled >= 4 {
                break;
            }
        } else {
            stalled = 0;
        }
        goal = new_goal;
    }

    let target = scenario.target_pose();
    let (trans_err, rot_err) = pose_error(&state.pose, &target);
    let outcome = failure.unwrap_or_else(|| {
        let success = match scenario.task {
            TaskKind::Door => state.crossed,
            TaskKind::Reach => trans_err < 0.03 && rot_err < 0.03,
        };
        if success {
            Outcome::Success
        } else {
            Outcome::Timeout
        }
    });
    Ok(TrialResult {
        outcome,
        trans_err,
        rot_err,
        steps: state.total_steps,
        records,
    })
}

fn request_for(scenario: &Scenario, state: &SimState) -> ForesightRequest {
    ForesightRequest::new(state.obs.clone(), scenario.prompt.clone())
}
