//! Sub-goal generation: given the current observation and a task prompt,
//! produce the next intermediate goal image for the servo loop to chase.
//!
//! The trait is implemented by a keyframe oracle that renders poses sampled
//! from the scenario's reference trajectory (optionally corrupted by
//! configurable goal noise), and by a remote client speaking the HTTP
//! protocol in [`crate::remote`]. The oracle localizes itself purely from
//! the request image, by photometric match against its keyframe renders, so
//! the in-process and remote paths behave identically.

use crate::error::{Error, Result};
use crate::flow::photometric_error;
use crate::geometry::Pose;
use crate::image::{quantize_intensity, ImageBuffer, Intrinsics};
use crate::scenario::Scenario;
use crate::scene::{render, Scene};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Input to the sub-goal generator: the live camera image, the task prompt,
/// and an optional auxiliary view (for example an overhead camera). The
/// keyframe oracle ignores the auxiliary image; the field is carried so the
/// wire protocol supports multi-view foresight services.
#[derive(Clone, Debug)]
pub struct ForesightRequest {
    pub current: ImageBuffer,
    pub prompt: String,
    pub aux: Option<ImageBuffer>,
}

impl ForesightRequest {
    pub fn new(current: ImageBuffer, prompt: impl Into<String>) -> Self {
        ForesightRequest { current, prompt: prompt.into(), aux: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidConfig("foresight prompt must be nonempty".into()));
        }
        Ok(())
    }
}

/// A generated sub-goal. `render_pose` is the pose the image was rendered
/// from when the generator knows it (the oracle does; a remote service does
/// not) — required by the ground-truth flow path.
#[derive(Clone, Debug)]
pub struct Subgoal {
    pub image: ImageBuffer,
    pub render_pose: Option<Pose>,
}

/// Corruption applied to oracle sub-goals, modelling an imperfect generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalNoise {
    /// Pose jitter, meters (standard deviation per axis).
    pub sigma_trans: f64,
    /// Pose jitter, radians (standard deviation of the rotation angle).
    pub sigma_rot: f64,
    /// Pixel intensity noise, 0-255 units (standard deviation).
    pub sigma_pixel: f64,
}

impl Default for GoalNoise {
    fn default() -> Self {
        GoalNoise { sigma_trans: 0.0, sigma_rot: 0.0, sigma_pixel: 0.0 }
    }
}

impl GoalNoise {
    pub fn is_off(&self) -> bool {
        self.sigma_trans == 0.0 && self.sigma_rot == 0.0 && self.sigma_pixel == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Keyframes sampled per trajectory (the sampling frequency). With
    /// `n = 2` the oracle always emits the final goal image directly.
    pub n: usize,
    pub noise: GoalNoise,
    /// Seed for the goal-noise stream.
    pub noise_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n: 9, noise: GoalNoise::default(), noise_seed: 0 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("oracle n must be >= 2, got {}", self.n)));
        }
        if self.noise.sigma_trans < 0.0 || self.noise.sigma_rot < 0.0 || self.noise.sigma_pixel < 0.0 {
            return Err(Error::InvalidConfig("goal noise sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// The sub-goal generator interface: current image and prompt in, goal
/// image out.
pub trait Foresight {
    fn next_subgoal(&mut self, req: &ForesightRequest) -> Result<Subgoal>;
}

/// Index of the trajectory pose nearest to `current` under the weighted
/// distance `translation + 1.0 * rotation_angle` (meters + radians).
/// Ties resolve to the larger index.
pub fn oracle_progress(current: &Pose, trajectory: &[Pose]) -> usize {
    assert!(!trajectory.is_empty(), "trajectory must be nonempty");
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, pose) in trajectory.iter().enumerate() {
        let trans = (current.translation - pose.translation).norm();
        let rot = current.rotation.angle_to(&pose.rotation);
        let dist = trans + rot;
        if dist <= best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Whether a freshly sampled goal matches the previous one closely enough
/// for the outer loop to terminate: `photometric_error(last, new) < eps_p`
/// (strict, so `eps_p = 0` never converges).
pub fn goal_converged(last_goal: &ImageBuffer, new_goal: &ImageBuffer, eps_p: f64) -> Result<bool> {
    Ok(photometric_error(last_goal, new_goal)? < eps_p)
}

/// Desk-scale stand-in for a learned sub-goal generator: holds `n` poses
/// uniformly sampled from the reference trajectory, localizes the request
/// image against their renders, and returns the render of the next pose
/// (the final pose is a fixed point). Never errors on off-trajectory
/// inputs — it falls back to the nearest keyframe's successor.
pub struct KeyframeOracle {
    scene: Scene,
    intrinsics: Intrinsics,
    poses: Vec<Pose>,
    renders: Vec<ImageBuffer>,
    noise: GoalNoise,
    rng: ChaCha12Rng,
}

impl KeyframeOracle {
    pub fn new(scenario: &Scenario, cfg: &OracleConfig) -> Result<Self> {
        cfg.validate()?;
        let poses = subsample_poses(&scenario.keyframes, cfg.n);
        let renders = poses
            .iter()
            .map(|p| render(&scenario.scene, p, &scenario.intrinsics).0)
            .collect();
        Ok(KeyframeOracle {
            scene: scenario.scene.clone(),
            intrinsics: scenario.intrinsics,
            poses,
            renders,
            noise: cfg.noise,
            // Tie the noise stream to the scenario so trials are reproducible.
            rng: ChaCha12Rng::seed_from_u64(
                cfg.noise_seed ^ scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ),
        })
    }

    pub fn keyframe_poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn keyframe_renders(&self) -> &[ImageBuffer] {
        &self.renders
    }

    /// Nearest keyframe by photometric match; ties go to the larger index.
    pub fn progress_from_image(&self, img: &ImageBuffer) -> Result<usize> {
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for (i, r) in self.renders.iter().enumerate() {
            let err = photometric_error(img, r)?;
            if err <= best_err {
                best_err = err;
                best = i;
            }
        }
        Ok(best)
    }

    /// Sub-goal for a given progress index: the next keyframe's render,
    /// corrupted by the configured goal noise.
    pub fn subgoal_for_progress(&mut self, progress: usize) -> Subgoal {
        let target = (progress + 1).min(self.poses.len() - 1);
        if self.noise.is_off() {
            return Subgoal {
                image: self.renders[target].clone(),
                render_pose: Some(self.poses[target]),
            };
        }
        let base = self.poses[target];
        let pose = self.jitter_pose(&base);
        let (mut img, _) = render(&self.scene, &pose, &self.intrinsics);
        if self.noise.sigma_pixel > 0.0 {
            let sigma = self.noise.sigma_pixel / 255.0;
            for row in 0..img.height() {
                for col in 0..img.width() {
                    let v = img.get(col, row) + sigma * self.gauss();
                    img.set(col, row, quantize_intensity(v));
                }
            }
        }
        Subgoal { image: img, render_pose: Some(pose) }
    }

    fn jitter_pose(&mut self, pose: &Pose) -> Pose {
        let dt = Vector3::new(self.gauss(), self.gauss(), self.gauss()) * self.noise.sigma_trans;
        let axis = loop {
            let v = Vector3::new(
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
            );
            if v.norm_squared() > 1e-6 {
                break v.normalize();
            }
        };
        let dq = UnitQuaternion::from_scaled_axis(axis * (self.noise.sigma_rot * self.gauss()));
        Pose::new(pose.rotation * dq, pose.translation + dt)
    }

    fn gauss(&mut self) -> f64 {
        // Box-Muller on the oracle's private stream.
        let u1: f64 = self.rng.random::<f64>().max(1e-12);
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl Foresight for KeyframeOracle {
    fn next_subgoal(&mut self, req: &ForesightRequest) -> Result<Subgoal> {
        req.validate()?;
        let progress = self.progress_from_image(&req.current)?;
        Ok(self.subgoal_for_progress(progress))
    }
}

/// Uniformly subsamples `n` poses from a trajectory, always keeping the
/// first and last.
fn subsample_poses(keyframes: &[Pose], n: usize) -> Vec<Pose> {
    let k = keyframes.len();
    if n >= k {
        return keyframes.to_vec();
    }
    (0..n)
        .map(|i| {
            let idx = (i as f64 * (k - 1) as f64 / (n - 1) as f64).round() as usize;
            keyframes[idx.min(k - 1)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::make_door_scenario;

    fn oracle_with_n(seed: u64, n: usize) -> (crate::scenario::Scenario, KeyframeOracle) {
        let s = make_door_scenario(seed);
        let oracle = KeyframeOracle::new(&s, &OracleConfig { n, ..Default::default() }).unwrap();
        (s, oracle)
    }

    #[test]
    fn oracle_at_keyframe_returns_next_keyframe_render() {
        let (s, mut oracle) = oracle_with_n(1, 9);
        for k in 0..8 {
            let (img, _) = render(&s.scene, &s.keyframes[k], &s.intrinsics);
            let goal = oracle.next_subgoal(&ForesightRequest::new(img, &s.prompt)).unwrap();
            let expected = &oracle.keyframe_renders()[k + 1];
            assert_eq!(goal.image.pixels(), expected.pixels(), "keyframe {k}");
        }
    }

    #[test]
    fn final_keyframe_is_a_fixed_point() {
        let (s, mut oracle) = oracle_with_n(2, 9);
        let (img, _) = render(&s.scene, &s.keyframes[8], &s.intrinsics);
        let g1 = oracle.next_subgoal(&ForesightRequest::new(img.clone(), &s.prompt)).unwrap();
        let g2 = oracle.next_subgoal(&ForesightRequest::new(g1.image.clone(), &s.prompt)).unwrap();
        assert_eq!(g1.image.pixels(), g2.image.pixels());
        assert_eq!(photometric_error(&g1.image, &g2.image).unwrap(), 0.0);
    }

    #[test]
    fn n_two_always_emits_the_final_goal() {
        let (s, mut oracle) = oracle_with_n(3, 2);
        let final_render = oracle.keyframe_renders()[1].clone();
        for k in [0, 2, 5, 8] {
            let (img, _) = render(&s.scene, &s.keyframes[k], &s.intrinsics);
            let goal = oracle.next_subgoal(&ForesightRequest::new(img, &s.prompt)).unwrap();
            assert_eq!(goal.image.pixels(), final_render.pixels());
        }
    }

    #[test]
    fn progress_is_monotone_along_the_trajectory() {
        let (s, oracle) = oracle_with_n(4, 9);
        let mut last = 0;
        for kf in &s.keyframes {
            let (img, _) = render(&s.scene, kf, &s.intrinsics);
            let p = oracle.progress_from_image(&img).unwrap();
            assert!(p >= last, "progress regressed: {p} < {last}");
            last = p;
        }
        assert_eq!(last, 8);
    }

    #[test]
    fn pose_progress_exact_tie_and_perturbed() {
        let s = make_door_scenario(5);
        let traj = &s.keyframes;
        assert_eq!(oracle_progress(&traj[3], traj), 3);

        // Perturb keyframe 5 by 1 cm; exhaustive distance comparison picks 5.
        let mut nudged = traj[5];
        nudged.translation.x += 0.01;
        let expect: usize = (0..traj.len())
            .min_by(|&a, &b| {
                let d = |i: usize| {
                    (nudged.translation - traj[i].translation).norm()
                        + nudged.rotation.angle_to(&traj[i].rotation)
                };
                d(a).partial_cmp(&d(b)).unwrap()
            })
            .unwrap();
        assert_eq!(oracle_progress(&nudged, traj), expect);
        assert_eq!(expect, 5);

        // Exact midpoint between two identical-rotation keyframes: the tie
        // resolves to the larger index.
        let a = Pose::from_translation(0.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        let mid = Pose::from_translation(0.0, 1.0, 0.0);
        assert_eq!(oracle_progress(&mid, &[a, b]), 1);
    }

    #[test]
    fn goal_converged_boundary_semantics() {
        let (s, oracle) = oracle_with_n(6, 9);
        let same = &oracle.keyframe_renders()[0];
        assert!(goal_converged(same, same, 1e-9).unwrap());
        assert!(!goal_converged(same, same, 0.0).unwrap());
        // Goals one keyframe apart are far from converged at the default
        // threshold.
        let other = &oracle.keyframe_renders()[1];
        assert!(!goal_converged(same, other, 1.0).unwrap());
        let _ = s;
    }

    #[test]
    fn noise_perturbs_but_stays_reproducible() {
        let s = make_door_scenario(7);
        let cfg = OracleConfig {
            n: 9,
            noise: GoalNoise { sigma_trans: 0.02, sigma_rot: 2.0_f64.to_radians(), sigma_pixel: 1.0 },
            noise_seed: 5,
        };
        let mut a = KeyframeOracle::new(&s, &cfg).unwrap();
        let mut b = KeyframeOracle::new(&s, &cfg).unwrap();
        let (img, _) = render(&s.scene, &s.keyframes[0], &s.intrinsics);
        let req = ForesightRequest::new(img, &s.prompt);
        let ga = a.next_subgoal(&req).unwrap();
        let gb = b.next_subgoal(&req).unwrap();
        assert_eq!(ga.image.pixels(), gb.image.pixels());
        // And the noisy goal differs from the clean render.
        let clean = &a.keyframe_renders()[1];
        assert_ne!(ga.image.pixels(), clean.pixels());
        let jittered = ga.render_pose.unwrap();
        let (dt, _) = crate::geometry::pose_error(&jittered, &a.keyframe_poses()[1]);
        assert!(dt > 0.0 && dt < 0.2);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let (s, mut oracle) = oracle_with_n(8, 9);
        let (img, _) = render(&s.scene, &s.keyframes[0], &s.intrinsics);
        let req = ForesightRequest { current: img, prompt: String::new(), aux: None };
        assert!(oracle.next_subgoal(&req).is_err());
    }

    #[test]
    fn subsampling_keeps_endpoints() {
        let s = make_door_scenario(9);
        for n in [2usize, 4, 9] {
            let oracle = KeyframeOracle::new(&s, &OracleConfig { n, ..Default::default() }).unwrap();
            let poses = oracle.keyframe_poses();
            assert_eq!(poses.len(), n);
            let (t0, r0) = crate::geometry::pose_error(&poses[0], &s.keyframes[0]);
            let (tn, rn) = crate::geometry::pose_error(poses.last().unwrap(), &s.keyframes[8]);
            assert!(t0 < 1e-12 && r0 < 1e-12 && tn < 1e-12 && rn < 1e-12);
        }
        assert!(KeyframeOracle::new(&s, &OracleConfig { n: 1, ..Default::default() }).is_err());
    }
}
