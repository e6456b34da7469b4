//! Camera calibration from deformable reconstructions.

pub mod template;
pub mod templateless;

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::geometry::Intrinsics;

/// Pixel coordinates re-expressed with the origin at the image center and
/// unit half-diagonal, so that calibration parameters are all O(1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageFrame {
    width: f64,
    height: f64,
    t: Matrix3<f64>,
    t_inv: Matrix3<f64>,
}

impl ImageFrame {
    pub fn new(width: f64, height: f64) -> Self {
        let h = 0.5 * width.hypot(height);
        let (cx, cy) = (0.5 * width, 0.5 * height);
        Self {
            width,
            height,
            t: Matrix3::new(1.0 / h, 0.0, -cx / h, 0.0, 1.0 / h, -cy / h, 0.0, 0.0, 1.0),
            t_inv: Matrix3::new(h, 0.0, cx, 0.0, h, cy, 0.0, 0.0, 1.0),
        }
    }

    pub fn of(k: &Intrinsics) -> Self {
        Self::new(k.width, k.height)
    }

    /// The pixel-to-normalized map `T`.
    pub fn transform(&self) -> &Matrix3<f64> {
        &self.t
    }

    pub fn point(&self, u: &Vector3<f64>) -> Vector3<f64> {
        self.t * u
    }

    /// Entries `(fx, fy, skew, cx, cy)` of the normalized camera `T·K`.
    pub fn params(&self, k: &Intrinsics) -> [f64; 5] {
        let m = self.t * k.matrix();
        [m[(0, 0)], m[(1, 1)], m[(0, 1)], m[(0, 2)], m[(1, 2)]]
    }

    /// Inverse of [`ImageFrame::params`].
    pub fn intrinsics(&self, p: &[f64]) -> Result<Intrinsics> {
        let kn = Matrix3::new(p[0], p[2], p[3], 0.0, p[1], p[4], 0.0, 0.0, 1.0);
        Intrinsics::from_matrix(&(self.t_inv * kn), self.width, self.height)
    }

    /// Carries a conic from normalized coordinates back to pixels: `TᵀΩT`.
    pub fn conic_to_pixels(&self, omega: &Matrix3<f64>) -> Matrix3<f64> {
        self.t.transpose() * omega * self.t
    }

    /// Carries a pixel conic into normalized coordinates: `T⁻ᵀΩT⁻¹`.
    pub fn conic_to_normalized(&self, omega: &Matrix3<f64>) -> Matrix3<f64> {
        self.t_inv.transpose() * omega * self.t_inv
    }
}
