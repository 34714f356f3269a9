//! Rigid-body geometry: camera poses in SE(3), body-frame twists, and the
//! exponential-map integration used to step the camera in simulation.
//!
//! Conventions:
//! - `Pose` is the camera-in-world transform: `x_world = R * x_cam + t`.
//! - The camera frame is x-right, y-down, z-forward (optical axis).
//! - `Twist` is expressed in the camera body frame; integration
//!   right-multiplies, so positive `linear.z` moves the camera forward.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform in SE(3), stored as unit quaternion + translation.
///
/// Serialized as a 7-tuple `[qw, qx, qy, qz, tx, ty, tz]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, renormalizing the quaternion.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Pose from `[qw, qx, qy, qz, tx, ty, tz]`; the quaternion is normalized.
    pub fn from_array(a: [f64; 7]) -> Self {
        let q = Quaternion::new(a[0], a[1], a[2], a[3]);
        Pose {
            rotation: renormalize(UnitQuaternion::new_unchecked(q)),
            translation: Vector3::new(a[4], a[5], a[6]),
        }
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    /// Rigid composition `self ∘ other` (apply `other` in `self`'s frame).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Camera-frame point to world.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World point to camera frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera from position and look-at target: the optical axis points at
    /// `target`, with image-right orthogonal to `up` (world vertical).
    /// Falls back to the world y axis as `up` when looking nearly vertical.
    pub fn look_at(position: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - position).normalize();
        let up = if forward.cross(&up).norm() < 1e-6 {
            Vector3::y()
        } else {
            up
        };
        // Camera axes in the world: x-right, y-down, z-forward.
        let x = forward.cross(&up).normalize();
        let y = forward.cross(&x);
        let m = Matrix3::from_columns(&[x, y, forward]);
        Pose {
            rotation: UnitQuaternion::from_matrix(&m),
            translation: position,
        }
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(deserializer)?;
        Ok(Pose::from_array(a))
    }
}

/// Instantaneous 6-DOF camera velocity in the body frame:
/// `linear` in m/s, `angular` in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Twist { linear, angular }
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }

    pub fn linear_speed(&self) -> f64 {
        self.linear.norm()
    }

    pub fn angular_speed(&self) -> f64 {
        self.angular.norm()
    }
}

/// Renormalizes only when drifted, so already-unit quaternions keep their
/// exact bit pattern (serialization round trips stay byte-stable).
fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let norm = q.quaternion().norm();
    if (norm - 1.0).abs() > 1e-12 {
        UnitQuaternion::new_normalize(*q.quaternion())
    } else {
        q
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): V(θ) = I + (1−cosθ)/θ² [θ]× + (θ−sinθ)/θ³ [θ]×².
fn so3_left_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle2 = theta.norm_squared();
    let hat = skew(theta);
    if angle2 < 1e-16 {
        // Series: I + [θ]×/2 + [θ]×²/6
        return Matrix3::identity() + hat * 0.5 + hat * hat * (1.0 / 6.0);
    }
    let angle = angle2.sqrt();
    Matrix3::identity()
        + hat * ((1.0 - angle.cos()) / angle2)
        + hat * hat * ((angle - angle.sin()) / (angle2 * angle))
}

/// SE(3) exponential of the tangent `[rho; theta]`.
fn se3_exp(rho: Vector3<f64>, theta: Vector3<f64>) -> Pose {
    let rotation = UnitQuaternion::from_scaled_axis(theta);
    let translation = so3_left_jacobian(&theta) * rho;
    Pose::new(rotation, translation)
}

/// Advances a pose by a body-frame twist over `dt` seconds:
/// `p ∘ exp(dt·[v; ω])`.
pub fn integrate_twist(p: &Pose, t: &Twist, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    p.compose(&se3_exp(t.linear * dt, t.angular * dt))
}

/// Translation error (meters) and rotation error as the double-cover-minimal
/// quaternion difference `min(‖q_a − q_b‖, ‖q_a + q_b‖)`.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let trans = (a.translation - b.translation).norm();
    let qa = a.rotation.quaternion().coords;
    let qb = b.rotation.quaternion().coords;
    let rot = (qa - qb).norm().min((qa + qb).norm());
    (trans, rot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const TOL: f64 = 1e-9;

    fn approx_pose(a: &Pose, b: &Pose, tol: f64) -> bool {
        let (t, r) = pose_error(a, b);
        t < tol && r < tol
    }

    /// Matrix-exponential oracle for se(3), by scaling-and-squaring series.
    fn matrix_exp_se3(rho: Vector3<f64>, theta: Vector3<f64>) -> Matrix4<f64> {
        let mut a = Matrix4::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&theta));
        a.fixed_view_mut::<3, 1>(0, 3).copy_from(&rho);
        // exp(A) = sum A^k / k!, scaled by 2^-s to keep the series accurate.
        let s = 10;
        let a = a / f64::powi(2.0, s);
        let mut term = Matrix4::identity();
        let mut out = Matrix4::identity();
        for k in 1..20 {
            term = term * a / k as f64;
            out += term;
        }
        for _ in 0..s {
            out = out * out;
        }
        out
    }

    #[test]
    fn compose_identity() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
            Vector3::new(1.0, -2.0, 0.5),
        );
        assert!(approx_pose(&Pose::identity().compose(&p), &p, TOL));
        assert!(approx_pose(&p.compose(&Pose::identity()), &p, TOL));
    }

    #[test]
    fn compose_inverse_is_identity() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.7, 0.3, -1.2),
            Vector3::new(0.3, 2.0, -1.0),
        );
        assert!(approx_pose(&p.compose(&p.inverse()), &Pose::identity(), TOL));
    }

    #[test]
    fn compose_pure_translations() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        assert!(approx_pose(&a.compose(&b), &Pose::from_translation(1.0, 2.0, 0.0), TOL));
    }

    #[test]
    fn integrate_zero_twist() {
        let p = integrate_twist(&Pose::identity(), &Twist::zero(), 0.1);
        assert!(approx_pose(&p, &Pose::identity(), TOL));
    }

    #[test]
    fn integrate_pure_translation() {
        let t = Twist::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros());
        let p = integrate_twist(&Pose::identity(), &t, 0.5);
        assert!(approx_pose(&p, &Pose::from_translation(0.0, 0.0, 0.5), TOL));
    }

    #[test]
    fn integrate_half_turn_yaw_matches_matrix_exponential() {
        let t = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI));
        let p = integrate_twist(&Pose::identity(), &t, 1.0);
        assert!(p.translation.norm() < TOL);
        let expected = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, PI));
        assert!(p.rotation.angle_to(&expected) < TOL);

        // Full-pose check against the series oracle on a screw motion.
        let rho = Vector3::new(0.3, -0.2, 0.5);
        let theta = Vector3::new(0.4, 0.1, -0.9);
        let ours = se3_exp(rho, theta);
        let m = matrix_exp_se3(rho, theta);
        let r_oracle = m.fixed_view::<3, 3>(0, 0).clone_owned();
        let t_oracle = m.fixed_view::<3, 1>(0, 3).clone_owned();
        assert!((ours.rotation_matrix() - r_oracle).norm() < 1e-12);
        assert!((ours.translation - t_oracle).norm() < 1e-12);
    }

    #[test]
    fn pose_error_zero_for_same_pose() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, 0.5, -0.3),
            Vector3::new(4.0, 5.0, 6.0),
        );
        assert_eq!(pose_error(&p, &p), (0.0, 0.0));
    }

    #[test]
    fn pose_error_translation_boundary() {
        let (t, r) = pose_error(&Pose::identity(), &Pose::from_translation(0.03, 0.0, 0.0));
        assert!((t - 0.03).abs() < 1e-12);
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn pose_error_five_degree_yaw() {
        // q = (cos 2.5°, 0, 0, sin 2.5°); ‖q − 1‖ = 2 sin 1.25° ≈ 0.043631
        let yaw5 = Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 5.0_f64.to_radians())),
            Vector3::zeros(),
        );
        let (t, r) = pose_error(&Pose::identity(), &yaw5);
        assert!(t.abs() < 1e-12);
        assert!((r - 2.0 * (1.25_f64.to_radians()).sin()).abs() < 1e-12);
        assert!((r - 0.0436).abs() < 1e-4);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let pos = Vector3::new(0.5, -1.0, 1.2);
        let target = Vector3::new(0.0, 2.0, 1.0);
        let p = Pose::look_at(pos, target, Vector3::z());
        let fwd = p.rotation * Vector3::z();
        assert!((fwd - (target - pos).normalize()).norm() < 1e-12);
        // Image-down has no world-up component pointing up.
        let down = p.rotation * Vector3::y();
        assert!(down.dot(&Vector3::z()) <= 1e-12);
    }

    #[test]
    fn serde_round_trips_as_seven_tuple() {
        let p = Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -0.2, 0.9),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let json = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert!(approx_pose(&p, &back, 1e-12));
        assert!(json.starts_with('['));
    }

    proptest! {
        #[test]
        fn quaternion_double_cover(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let q = UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z));
            let q_neg = UnitQuaternion::new_normalize(Quaternion::new(-w, -x, -y, -z));
            let a = Pose::new(q, Vector3::zeros());
            let b = Pose::new(q_neg, Vector3::zeros());
            let (t, r) = pose_error(&a, &b);
            prop_assert!(t == 0.0 && r < 1e-12);
        }

        #[test]
        fn twist_forward_backward_translation(vx in -1.0..1.0f64, vy in -1.0..1.0f64, vz in -1.0..1.0f64) {
            let t = Twist::new(Vector3::new(vx, vy, vz), Vector3::zeros());
            let neg = Twist::new(-t.linear, Vector3::zeros());
            let p = integrate_twist(&integrate_twist(&Pose::identity(), &t, 0.3), &neg, 0.3);
            let (trans, rot) = pose_error(&p, &Pose::identity());
            prop_assert!(trans < 1e-6 && rot < 1e-6);
        }

        #[test]
        fn twist_forward_backward_rotation(wx in -2.0..2.0f64, wy in -2.0..2.0f64, wz in -2.0..2.0f64) {
            let t = Twist::new(Vector3::zeros(), Vector3::new(wx, wy, wz));
            let neg = Twist::new(Vector3::zeros(), -t.angular);
            let p = integrate_twist(&integrate_twist(&Pose::identity(), &t, 0.4), &neg, 0.4);
            let (trans, rot) = pose_error(&p, &Pose::identity());
            prop_assert!(trans < 1e-6 && rot < 1e-6);
        }

        #[test]
        fn quaternion_normalized_after_compose(
            w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
        ) {
            prop_assume!(w * w + x * x + y * y + z * z > 1e-3);
            let q = UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z));
            let a = Pose::new(q, Vector3::new(1.0, 2.0, 3.0));
            let c = a.compose(&a).compose(&a.inverse());
            prop_assert!((c.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }
}
