//! Analytic world model: textured planar quads rendered through a pinhole
//! camera. Because every surface is an exact plane with a procedural texture,
//! the simulator provides exact depth, exact pixel correspondence between two
//! views (hence ground-truth optical flow), and exact collision tests.

use crate::geometry::Pose;
use crate::image::{quantize_intensity, DepthMap, FlowField, ImageBuffer, Intrinsics};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Minimum ray parameter accepted as a hit, to reject surfaces behind or
/// coincident with the camera center.
const MIN_HIT: f64 = 1e-9;

/// Depth-test tolerance when deciding occlusion during flow reprojection.
const OCCLUSION_TOL: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Procedural texture
// ---------------------------------------------------------------------------

/// Checkerboard modulated by smooth value noise. Units are meters on the
/// quad surface so texture scale is independent of quad size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub checker_period: f64,
    pub noise_scale: f64,
    pub noise_seed: u64,
    pub base: f64,
    pub contrast: f64,
}

/// Fraction of the checker period over which a cell transition ramps.
/// Hard steps are unresolvable at the render sampling rate and alias, which
/// poisons subpixel flow estimation; a ramp of ~12% of the period keeps the
/// texture effectively band-limited at the working resolutions.
pub const CHECKER_SOFTNESS: f64 = 0.12;

impl TextureParams {
    /// Intensity (unquantized) at physical surface coordinates in meters.
    pub fn intensity(&self, px: f64, py: f64) -> f64 {
        let sx = soft_square_wave(px / self.checker_period);
        let sy = soft_square_wave(py / self.checker_period);
        // Soft XOR keeps the checkerboard layout with smooth edges.
        let checker = sx + sy - 2.0 * sx * sy;
        let noise = fbm_value_noise(px / self.noise_scale, py / self.noise_scale, self.noise_seed);
        let pattern = noise * (0.55 + 0.45 * checker);
        self.base + self.contrast * pattern
    }

    /// True when `(px, py)` lies within `margin` meters of a checker-cell
    /// boundary; used by tests to exclude the discontinuity band.
    pub fn near_checker_edge(&self, px: f64, py: f64, margin: f64) -> bool {
        let frac = |p: f64| {
            let f = (p / self.checker_period).rem_euclid(1.0);
            f.min(1.0 - f) * self.checker_period
        };
        frac(px) < margin || frac(py) < margin
    }
}

/// Unit-period square wave in [0, 1] with Hermite-smoothed transitions.
fn soft_square_wave(p: f64) -> f64 {
    let f = p.rem_euclid(2.0);
    // Signed distance (in period units) to the nearest cell edge, positive
    // inside the high cell.
    let d = if f < 1.0 {
        f.min(1.0 - f)
    } else {
        -((f - 1.0).min(2.0 - f))
    };
    let t = (d / CHECKER_SOFTNESS).clamp(-1.0, 1.0);
    0.5 + 0.5 * t * (1.5 - 0.5 * t * t)
}

fn lattice_hash(i: i64, j: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let xi = x.floor();
    let yi = y.floor();
    let tx = smoothstep(x - xi);
    let ty = smoothstep(y - yi);
    let (i, j) = (xi as i64, yi as i64);
    let n00 = lattice_hash(i, j, seed);
    let n10 = lattice_hash(i + 1, j, seed);
    let n01 = lattice_hash(i, j + 1, seed);
    let n11 = lattice_hash(i + 1, j + 1, seed);
    n00 * (1.0 - tx) * (1.0 - ty) + n10 * tx * (1.0 - ty) + n01 * (1.0 - tx) * ty + n11 * tx * ty
}

fn fbm_value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let n0 = value_noise(x, y, seed);
    let n1 = value_noise(x * 2.0, y * 2.0, seed.wrapping_add(1));
    (n0 + 0.5 * n1) / 1.5
}

// ---------------------------------------------------------------------------
// Scene geometry
// ---------------------------------------------------------------------------

/// Rectangular opening in quad-local coordinates, contained in [0,1]².
/// Rays pass through it and collision treats it as empty space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aperture {
    pub a_min: f64,
    pub b_min: f64,
    pub a_max: f64,
    pub b_max: f64,
}

impl Aperture {
    pub fn contains(&self, a: f64, b: f64) -> bool {
        a >= self.a_min && a <= self.a_max && b >= self.b_min && b <= self.b_max
    }
}

/// Textured planar rectangle spanned by `edge_u` and `edge_v` from `origin`,
/// optionally pierced by a rectangular aperture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TexturedQuad {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub texture: TextureParams,
    pub hole: Option<Aperture>,
}

impl TexturedQuad {
    pub fn point_at(&self, a: f64, b: f64) -> Vector3<f64> {
        self.origin + self.edge_u * a + self.edge_v * b
    }

    fn prepared(&self) -> PreparedQuad {
        let normal = self.edge_u.cross(&self.edge_v);
        let guu = self.edge_u.norm_squared();
        let gvv = self.edge_v.norm_squared();
        let guv = self.edge_u.dot(&self.edge_v);
        let det = guu * gvv - guv * guv;
        PreparedQuad {
            normal,
            inv_gram: [gvv / det, -guv / det, guu / det],
            len_u: guu.sqrt(),
            len_v: gvv.sqrt(),
        }
    }
}

struct PreparedQuad {
    normal: Vector3<f64>,
    /// Inverse of the 2x2 Gram matrix of (edge_u, edge_v): [m00, m01, m11].
    inv_gram: [f64; 3],
    len_u: f64,
    len_v: f64,
}

/// A hit on a quad: ray parameter (equals camera-frame depth for rays with
/// unit z in the camera frame), quad index, and local surface coordinates.
#[derive(Clone, Copy, Debug)]
pub struct RayHit {
    pub t: f64,
    pub quad: usize,
    pub a: f64,
    pub b: f64,
    pub world: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub quads: Vec<TexturedQuad>,
    pub background: f64,
}

impl Scene {
    /// Nearest quad hit by `origin + t*dir` for `t > 0`, honoring apertures.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (idx, quad) in self.quads.iter().enumerate() {
            let prep = quad.prepared();
            let denom = dir.dot(&prep.normal);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (quad.origin - origin).dot(&prep.normal) / denom;
            if t < MIN_HIT {
                continue;
            }
            if let Some(b) = &best {
                if t >= b.t {
                    continue;
                }
            }
            let p = origin + dir * t;
            let d = p - quad.origin;
            let du = d.dot(&quad.edge_u);
            let dv = d.dot(&quad.edge_v);
            let a = prep.inv_gram[0] * du + prep.inv_gram[1] * dv;
            let bb = prep.inv_gram[1] * du + prep.inv_gram[2] * dv;
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&bb) {
                continue;
            }
            if quad.hole.as_ref().is_some_and(|h| h.contains(a, bb)) {
                continue;
            }
            best = Some(RayHit { t, quad: idx, a, b: bb, world: p });
        }
        best
    }

    /// Casts the camera ray through continuous pixel coordinate `(u, v)`.
    /// The ray direction has unit z in the camera frame, so `RayHit::t` is
    /// the camera-frame depth of the hit.
    pub fn cast_pixel(&self, camera: &Pose, intr: &Intrinsics, u: f64, v: f64) -> Option<RayHit> {
        let (x, y) = intr.px_to_norm(u, v);
        let dir = camera.rotation * Vector3::new(x, y, 1.0);
        self.cast_ray(&camera.translation, &dir)
    }

    /// Surface intensity (quantized to the 8-bit grid) at a hit.
    fn shade(&self, hit: &RayHit) -> f64 {
        let quad = &self.quads[hit.quad];
        let prep = quad.prepared();
        quantize_intensity(quad.texture.intensity(hit.a * prep.len_u, hit.b * prep.len_v))
    }
}

// ---------------------------------------------------------------------------
// Rendering and ground-truth flow
// ---------------------------------------------------------------------------

/// Renders the scene through a pinhole camera. Missed rays take the
/// background intensity and are invalid in the depth map.
pub fn render(scene: &Scene, camera: &Pose, intr: &Intrinsics) -> (ImageBuffer, DepthMap) {
    let mut img = ImageBuffer::filled(*intr, quantize_intensity(scene.background));
    let mut depth = DepthMap::invalid(intr.width, intr.height);
    let rot = camera.rotation_matrix();
    for row in 0..intr.height {
        for col in 0..intr.width {
            let (x, y) = intr.px_to_norm(col as f64, row as f64);
            let dir = rot * Vector3::new(x, y, 1.0);
            if let Some(hit) = scene.cast_ray(&camera.translation, &dir) {
                img.set(col, row, scene.shade(&hit));
                depth.set(col, row, hit.t);
            }
        }
    }
    (img, depth)
}

/// Exact displacement of the scene point seen at `(u, v)` in `cam_a` when
/// reprojected into `cam_b`; `None` where the source ray misses, the point
/// falls outside `cam_b`'s frame or behind it, or is occluded in `cam_b`.
pub fn flow_at(
    scene: &Scene,
    cam_a: &Pose,
    cam_b: &Pose,
    intr: &Intrinsics,
    u: f64,
    v: f64,
) -> Option<Vector2<f64>> {
    let hit = scene.cast_pixel(cam_a, intr, u, v)?;
    let in_b = cam_b.inverse_transform_point(&hit.world);
    if in_b.z < MIN_HIT {
        return None;
    }
    let (ub, vb) = intr.norm_to_px(in_b.x / in_b.z, in_b.y / in_b.z);
    if !intr.in_frame(ub, vb) {
        return None;
    }
    if let Some(hit_b) = scene.cast_pixel(cam_b, intr, ub, vb) {
        if hit_b.t < in_b.z - OCCLUSION_TOL {
            return None;
        }
    }
    Some(Vector2::new(ub - u, vb - v))
}

/// Ground-truth dense optical flow between two camera views of the scene.
pub fn ground_truth_flow(scene: &Scene, cam_a: &Pose, cam_b: &Pose, intr: &Intrinsics) -> FlowField {
    let mut flow = FlowField::invalid(intr.width, intr.height);
    for row in 0..intr.height {
        for col in 0..intr.width {
            if let Some(f) = flow_at(scene, cam_a, cam_b, intr, col as f64, row as f64) {
                flow.set(col, row, f);
            }
        }
    }
    flow
}

// ---------------------------------------------------------------------------
// Collision
// ---------------------------------------------------------------------------

/// Solid vertical-axis cylinder centered on the camera position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionBody {
    pub radius: f64,
    pub height: f64,
}

impl Default for CollisionBody {
    fn default() -> Self {
        CollisionBody { radius: 0.15, height: 0.30 }
    }
}

/// True iff the cylinder intersects any quad's solid region; apertures are
/// passable openings.
pub fn check_collision(scene: &Scene, body: &CollisionBody, camera: &Pose) -> bool {
    let c = camera.translation;
    let z0 = c.z - body.height / 2.0;
    let z1 = c.z + body.height / 2.0;
    for quad in &scene.quads {
        for rect in solid_rects(quad) {
            let poly: Vec<Vector3<f64>> = [
                (rect[0], rect[1]),
                (rect[2], rect[1]),
                (rect[2], rect[3]),
                (rect[0], rect[3]),
            ]
            .iter()
            .map(|&(a, b)| quad.point_at(a, b))
            .collect();
            let clipped = clip_to_slab(&poly, z0, z1);
            if clipped.len() < 2 {
                continue;
            }
            let flat: Vec<Vector2<f64>> = clipped.iter().map(|p| Vector2::new(p.x, p.y)).collect();
            if point_to_polygon_distance(&Vector2::new(c.x, c.y), &flat) <= body.radius {
                return true;
            }
        }
    }
    false
}

/// Decomposes [0,1]² minus the aperture into up to four solid rectangles
/// `[a_min, b_min, a_max, b_max]`.
fn solid_rects(quad: &TexturedQuad) -> Vec<[f64; 4]> {
    match &quad.hole {
        None => vec![[0.0, 0.0, 1.0, 1.0]],
        Some(h) => {
            let mut rects = Vec::with_capacity(4);
            if h.a_min > 0.0 {
                rects.push([0.0, 0.0, h.a_min, 1.0]);
            }
            if h.a_max < 1.0 {
                rects.push([h.a_max, 0.0, 1.0, 1.0]);
            }
            if h.b_min > 0.0 {
                rects.push([h.a_min, 0.0, h.a_max, h.b_min]);
            }
            if h.b_max < 1.0 {
                rects.push([h.a_min, h.b_max, h.a_max, 1.0]);
            }
            rects
        }
    }
}

/// Sutherland–Hodgman clip of a convex polygon to `z0 <= z <= z1`.
fn clip_to_slab(poly: &[Vector3<f64>], z0: f64, z1: f64) -> Vec<Vector3<f64>> {
    let clip_half = |pts: &[Vector3<f64>], inside: &dyn Fn(&Vector3<f64>) -> bool, t_at: &dyn Fn(&Vector3<f64>, &Vector3<f64>) -> f64| {
        let mut out = Vec::with_capacity(pts.len() + 2);
        for i in 0..pts.len() {
            let cur = pts[i];
            let next = pts[(i + 1) % pts.len()];
            let cur_in = inside(&cur);
            let next_in = inside(&next);
            if cur_in {
                out.push(cur);
            }
            if cur_in != next_in {
                let t = t_at(&cur, &next);
                out.push(cur + (next - cur) * t);
            }
        }
        out
    };
    let lower = clip_half(poly, &|p| p.z >= z0, &|a, b| (z0 - a.z) / (b.z - a.z));
    if lower.is_empty() {
        return lower;
    }
    clip_half(&lower, &|p| p.z <= z1, &|a, b| (z1 - a.z) / (b.z - a.z))
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-30 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from a point to a (possibly degenerate) convex polygon given in
/// order; 0 when the point is inside.
fn point_to_polygon_distance(p: &Vector2<f64>, poly: &[Vector2<f64>]) -> f64 {
    if poly.len() >= 3 {
        let mut pos = false;
        let mut neg = false;
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            if cross > 1e-12 {
                pos = true;
            } else if cross < -1e-12 {
                neg = true;
            }
        }
        if !(pos && neg) && (pos || neg) {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        best = best.min(point_segment_distance(p, &a, &b));
    }
    best
}

/// Exact distance from a point to the solid region of a quad (rectangle minus
/// aperture); exposed for oracle-style checks in tests.
pub fn point_to_quad_distance(p: &Vector3<f64>, quad: &TexturedQuad) -> f64 {
    let prep = quad.prepared();
    let mut best = f64::INFINITY;
    for rect in solid_rects(quad) {
        // Work in physical surface units with an off-plane component.
        let d = p - quad.origin;
        let du = d.dot(&quad.edge_u);
        let dv = d.dot(&quad.edge_v);
        let a = prep.inv_gram[0] * du + prep.inv_gram[1] * dv;
        let b = prep.inv_gram[1] * du + prep.inv_gram[2] * dv;
        let foot = quad.point_at(a, b);
        let off2 = (p - foot).norm_squared();
        let ax = (a.clamp(rect[0], rect[2]) - a) * prep.len_u;
        let by = (b.clamp(rect[1], rect[3]) - b) * prep.len_v;
        // Valid for orthogonal edge vectors, which all built-in scenes use.
        best = best.min((off2 + ax * ax + by * by).sqrt());
    }
    best
}
