use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel coordinates are raw (origin top-left).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        skew: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            skew,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, zero skew, principal point at the image center.
    pub fn centered(focal: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(focal, focal, 0.0, width / 2.0, height / 2.0, width, height)
    }

    /// Initial guess used when nothing is known about the camera: both focal
    /// lengths at half the mean image size, principal point at the center.
    pub fn default_guess(width: f64, height: f64) -> Result<Self> {
        Self::centered((width + height) / 4.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.fx,
            self.fy,
            self.skew,
            self.cx,
            self.cy,
            self.width,
            self.height,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "intrinsics contain non-finite entries".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::SingularIntrinsics);
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular camera matrix.
    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        self.validate()?;
        let (fx, fy, s, cx, cy) = (self.fx, self.fy, self.skew, self.cx, self.cy);
        Ok(Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    /// Rebuilds intrinsics from a 3x3 matrix, normalizing k33 to one.
    pub fn from_matrix(k: &Matrix3<f64>, width: f64, height: f64) -> Result<Self> {
        let k33 = k[(2, 2)];
        if k33.abs() < f64::EPSILON || k[(1, 0)].abs() > 1e-9 * k33.abs() {
            return Err(Error::InvalidInput(
                "matrix is not an upper-triangular camera matrix".into(),
            ));
        }
        let k = k / k33;
        Self::new(
            k[(0, 0)],
            k[(1, 1)],
            k[(0, 1)],
            k[(0, 2)],
            k[(1, 2)],
            width,
            height,
        )
    }

    /// Sightline K⁻¹(x, y, 1) of a pixel. Its third coordinate is one.
    #[inline]
    pub fn ray(&self, px: [f64; 2]) -> Vector3<f64> {
        let yn = (px[1] - self.cy) / self.fy;
        let xn = (px[0] - self.cx - self.skew * yn) / self.fx;
        Vector3::new(xn, yn, 1.0)
    }

    /// K⁻¹u for an arbitrary homogeneous pixel.
    #[inline]
    pub fn ray_h(&self, u: &Vector3<f64>) -> Vector3<f64> {
        let w = u.z;
        let yn = (u.y - self.cy * w) / self.fy;
        let xn = (u.x - self.cx * w - self.skew * yn) / self.fx;
        Vector3::new(xn, yn, w)
    }

    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        let xn = p.x / p.z;
        let yn = p.y / p.z;
        [
            self.fx * xn + self.skew * yn + self.cx,
            self.fy * yn + self.cy,
        ]
    }

    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Same camera with both focal lengths set to `focal`, other entries kept.
    pub fn with_focal(&self, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            ..*self
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn iac(&self) -> Iac {
        let kinv = self.inverse().expect("validated intrinsics are invertible");
        Iac::new(kinv.transpose() * kinv)
    }
}

/// Image of the absolute conic, scaled so that its (3,3) entry is one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Iac {
    omega: Matrix3<f64>,
}

impl Iac {
    /// Symmetrizes and rescales to ω₃₃ = 1. A zero ω₃₃ leaves the scale untouched.
    pub fn new(m: Matrix3<f64>) -> Self {
        let sym = 0.5 * (m + m.transpose());
        let w = sym[(2, 2)];
        let omega = if w.abs() > f64::MIN_POSITIVE {
            sym / w
        } else {
            sym
        };
        Self { omega }
    }

    /// Builds Ω from its five free entries (ω11, ω12, ω13, ω22, ω23); ω33 = 1.
    pub fn from_params(p: &[f64; 5]) -> Self {
        Self {
            omega: Matrix3::new(p[0], p[1], p[2], p[1], p[3], p[4], p[2], p[4], 1.0),
        }
    }

    pub fn params(&self) -> [f64; 5] {
        let o = &self.omega;
        [o[(0, 0)], o[(0, 1)], o[(0, 2)], o[(1, 1)], o[(1, 2)]]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.omega
    }

    pub fn leading_minors(&self) -> [f64; 3] {
        let o = &self.omega;
        [
            o[(0, 0)],
            o[(0, 0)] * o[(1, 1)] - o[(0, 1)] * o[(1, 0)],
            o.determinant(),
        ]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.leading_minors().iter().all(|m| *m > 0.0)
    }

    /// Recovers the camera by Cholesky factorization Ω = LLᵀ, K = L⁻ᵀ.
    pub fn intrinsics(&self, width: f64, height: f64) -> Result<Intrinsics> {
        if !self.is_positive_definite() {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = self.omega.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let k = l
            .transpose()
            .try_inverse()
            .ok_or(Error::NotPositiveDefinite)?;
        Intrinsics::from_matrix(&k, width, height)
    }
}
