//! Image-space primitives: pinhole intrinsics, grayscale image buffers,
//! dense flow fields, and depth maps.
//!
//! Pixel `(col, row)` samples the scene at continuous coordinate
//! `(col as f64, row as f64)`; the principal point defaults to the image
//! center `((w−1)/2, (h−1)/2)`. Intensities live in `[0, 1]` and rendered
//! images are quantized to the 8-bit grid `k/255`, which makes photometric
//! comparisons and PNG round trips exact.

use crate::error::{Error, Result};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// Pinhole camera intrinsics in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!("fx={fx}, fy={fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy, width, height })
    }

    /// Square image with the principal point at the geometric center and a
    /// horizontal field of view of about 85 degrees. The wide field keeps
    /// the rotational flow components distinguishable from translations in
    /// the velocity solve.
    pub fn default_square(size: usize) -> Self {
        let c = (size as f64 - 1.0) / 2.0;
        Intrinsics {
            fx: size as f64 * 0.54,
            fy: size as f64 * 0.54,
            cx: c,
            cy: c,
            width: size,
            height: size,
        }
    }

    /// Pixel coordinate to normalized image coordinate.
    pub fn px_to_norm(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    /// Normalized image coordinate to pixel coordinate.
    pub fn norm_to_px(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.fx + self.cx, y * self.fy + self.cy)
    }

    /// True when `(u, v)` lies in the bilinear-sampleable domain.
    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }
}

/// Quantize an intensity onto the 8-bit grid, clamping into `[0, 1]`.
#[inline]
pub fn quantize_intensity(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Grayscale image with attached intrinsics; intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub intrinsics: Intrinsics,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn filled(intrinsics: Intrinsics, value: f64) -> Self {
        ImageBuffer {
            intrinsics,
            pixels: vec![value.clamp(0.0, 1.0); intrinsics.len()],
        }
    }

    /// Wraps raw intensities; length must match the intrinsics.
    pub fn from_pixels(intrinsics: Intrinsics, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != intrinsics.len() {
            return Err(Error::DimensionMismatch(
                intrinsics.width,
                intrinsics.height,
                pixels.len(),
                1,
            ));
        }
        Ok(ImageBuffer { intrinsics, pixels })
    }

    /// Decodes 8-bit intensities to the exact `k/255` grid.
    pub fn from_u8(intrinsics: Intrinsics, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != intrinsics.len() {
            return Err(Error::DimensionMismatch(intrinsics.width, intrinsics.height, bytes.len(), 1));
        }
        Ok(ImageBuffer {
            intrinsics,
            pixels: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.intrinsics.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.pixels[row * self.intrinsics.width + col] = v;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width() == other.width() && self.height() == other.height()
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the frame.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !self.intrinsics.in_frame(u, v) {
            return None;
        }
        let w = self.intrinsics.width;
        let x0 = (u.floor() as usize).min(w - 1);
        let y0 = (v.floor() as usize).min(self.intrinsics.height - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(self.intrinsics.height - 1);
        let ax = u - x0 as f64;
        let ay = v - y0 as f64;
        let p00 = self.pixels[y0 * w + x0];
        let p10 = self.pixels[y0 * w + x1];
        let p01 = self.pixels[y1 * w + x0];
        let p11 = self.pixels[y1 * w + x1];
        Some(p00 * (1.0 - ax) * (1.0 - ay) + p10 * ax * (1.0 - ay) + p01 * (1.0 - ax) * ay + p11 * ax * ay)
    }
}

/// Dense per-pixel displacement field in pixel units, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<Vector2<f64>>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn invalid(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            vectors: vec![Vector2::zeros(); width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: Vector2<f64>) {
        let i = row * self.width + col;
        self.vectors[i] = v;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, col: usize, row: usize) {
        self.valid[row * self.width + col] = false;
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<Vector2<f64>> {
        let i = row * self.width + col;
        self.valid[i].then(|| self.vectors[i])
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / (self.width * self.height) as f64
    }

    /// Iterate `(col, row, flow)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, Vector2<f64>)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).filter_map(move |c| self.get(c, r).map(|f| (c, r, f)))
        })
    }

    pub fn same_dims_as_image(&self, img: &ImageBuffer) -> bool {
        self.width == img.width() && self.height == img.height()
    }
}

/// Per-pixel scene depth along the optical axis, meters; invalid where unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            depths: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, depth: f64) {
        debug_assert!(depth > 0.0);
        let i = row * self.width + col;
        self.depths[i] = depth;
        self.valid[i] = true;
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then(|| self.depths[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(50.0, 50.0, 1.5, 1.5, 4, 4).is_ok());
    }

    #[test]
    fn image_quantization_round_trips_bytes() {
        let intr = Intrinsics::default_square(8);
        let bytes: Vec<u8> = (0..64).map(|i| (i * 4) as u8).collect();
        let img = ImageBuffer::from_u8(intr, &bytes).unwrap();
        assert_eq!(img.to_u8(), bytes);
    }

    #[test]
    fn bilinear_sampling_interpolates() {
        let intr = Intrinsics::default_square(4);
        let mut img = ImageBuffer::filled(intr, 0.0);
        img.set(1, 1, 1.0);
        assert_eq!(img.sample_bilinear(1.0, 1.0), Some(1.0));
        let half = img.sample_bilinear(1.5, 1.0).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert_eq!(img.sample_bilinear(-0.1, 0.0), None);
        assert_eq!(img.sample_bilinear(3.01, 0.0), None);
    }

    #[test]
    fn flow_field_mask_and_fraction() {
        let mut f = FlowField::invalid(4, 2);
        assert_eq!(f.valid_fraction(), 0.0);
        f.set(0, 0, Vector2::new(1.0, -1.0));
        f.set(3, 1, Vector2::new(0.5, 0.0));
        f.invalidate(3, 1);
        assert_eq!(f.valid_count(), 1);
        assert_eq!(f.get(0, 0), Some(Vector2::new(1.0, -1.0)));
        assert_eq!(f.get(3, 1), None);
    }

    proptest! {
        #[test]
        fn pixel_norm_round_trip_is_exact(u in 0.0..95.0f64, v in 0.0..95.0f64) {
            let intr = Intrinsics::default_square(96);
            let (x, y) = intr.px_to_norm(u, v);
            let (u2, v2) = intr.norm_to_px(x, y);
            // x*fx + cx with x = (u-cx)/fx is exact to one rounding each way.
            prop_assert!((u2 - u).abs() < 1e-12);
            prop_assert!((v2 - v).abs() < 1e-12);
        }

        #[test]
        fn quantize_is_idempotent(v in -0.5..1.5f64) {
            let q = quantize_intensity(v);
            prop_assert_eq!(quantize_intensity(q), q);
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }
}
