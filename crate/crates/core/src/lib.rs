//! Sub-goal-driven image-based visual servoing in an analytic simulator.
//!
//! The crate implements a complete control stack: a planar-scene renderer
//! with exact depth and ground-truth optical flow, a pyramidal dense flow
//! estimator, an interaction-matrix velocity solver, a keyframe foresight
//! oracle (in-process or behind a loopback HTTP protocol), and an executor
//! that alternates sub-goal generation with inner-loop servoing. An
//! experiment harness reproduces convergence analyses, baselines, and the
//! sub-goal sampling-frequency ablation from the command line.

pub mod error;
pub mod executor;
pub mod experiment;
pub mod geometry;
pub mod ibvs;
pub mod image;
pub mod flow;
pub mod foresight;
pub mod remote;
pub mod scenario;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{integrate_twist, pose_error, Pose, Twist};
pub use image::{DepthMap, FlowField, ImageBuffer, Intrinsics};
pub use scenario::{make_door_scenario, make_reach_scenario, make_scenario, Scenario, TaskKind};
pub use scene::{check_collision, ground_truth_flow, render, CollisionBody, Scene, TexturedQuad};
