//! Synthetic isometric scenes with exact ground truth, and evaluation
//! metrics against them.

use std::collections::HashMap;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EdgeLengths, Intrinsics, NeighborGraph, Reconstruction, TrackSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deformation {
    /// Grid wrapped around a cylinder whose axis is parallel to the rows.
    CylinderBend,
    /// Two rigid half-grids joined by a hinge at the middle column.
    HingeFold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub deformation: Deformation,
    /// Points per grid row.
    pub cols: usize,
    /// Grid rows.
    pub rows: usize,
    pub spacing: f64,
    pub views: usize,
    /// Bend radius of the first and the last view; intermediate views are
    /// spaced linearly.
    pub radius_start: f64,
    pub radius_end: f64,
    /// Fold angle range (radians) for the hinge family.
    pub fold_start: f64,
    pub fold_end: f64,
    /// `+1` bends the grid edges away from the camera, `-1` towards it.
    pub bend_sign: f64,
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    /// Maximum absolute tilt (radians) about the camera x and y axes.
    pub max_tilt: f64,
    /// Maximum lateral offset of the grid center from the optical axis.
    pub max_shift: f64,
    pub depth_jitter: f64,
    pub noise: f64,
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            deformation: Deformation::CylinderBend,
            cols: 15,
            rows: 10,
            spacing: 0.04,
            views: 10,
            radius_start: 0.4,
            radius_end: 2.0,
            fold_start: 0.3,
            fold_end: 1.0,
            bend_sign: 1.0,
            focal: 500.0,
            width: 640.0,
            height: 480.0,
            depth: 1.5,
            max_tilt: 0.35,
            max_shift: 0.05,
            depth_jitter: 0.1,
            noise: 0.0,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Grid of `cols × rows` points with the same physical extent as the
    /// default scene.
    pub fn with_points(cols: usize, rows: usize) -> Self {
        let base = Self::default();
        let spacing = base.spacing * (base.cols - 1) as f64 / (cols - 1).max(1) as f64;
        Self {
            cols,
            rows,
            spacing,
            ..base
        }
    }

    pub fn num_points(&self) -> usize {
        self.cols * self.rows
    }

    pub fn grid_width(&self) -> f64 {
        (self.cols.saturating_sub(1)) as f64 * self.spacing
    }

    fn validate(&self) -> Result<()> {
        if self.cols < 2 || self.rows < 1 || self.views < 1 {
            return Err(Error::Scene(
                "grid needs at least two columns, one row and one view".into(),
            ));
        }
        if !(self.spacing > 0.0 && self.depth > 0.0 && self.focal > 0.0) {
            return Err(Error::Scene(
                "spacing, depth and focal must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.drop_rate) || self.noise < 0.0 {
            return Err(Error::Scene(
                "drop rate must lie in [0, 1) and noise must be non-negative".into(),
            ));
        }
        if self.deformation == Deformation::CylinderBend {
            let min_r = self.radius_start.min(self.radius_end);
            if min_r <= self.grid_width() / std::f64::consts::PI {
                return Err(Error::Scene(format!(
                    "radius {min_r} does not exceed grid width / π = {}",
                    self.grid_width() / std::f64::consts::PI
                )));
            }
        }
        Ok(())
    }

    /// Per-view deformation parameter: bend radius or fold angle.
    fn shape_param(&self, view: usize) -> f64 {
        let t = if self.views > 1 {
            view as f64 / (self.views - 1) as f64
        } else {
            0.0
        };
        match self.deformation {
            Deformation::CylinderBend => {
                self.radius_start + t * (self.radius_end - self.radius_start)
            }
            Deformation::HingeFold => self.fold_start + t * (self.fold_end - self.fold_start),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub intrinsics: Intrinsics,
    pub tracks: TrackSet,
    /// Flat template coordinates of every point.
    pub flat: Vec<[f64; 2]>,
    /// Camera-frame ground truth, view-major, including dropped observations.
    pub points: Vec<Vector3<f64>>,
    pub shape_params: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl SyntheticScene {
    pub fn num_views(&self) -> usize {
        self.tracks.num_views()
    }

    pub fn num_points(&self) -> usize {
        self.tracks.num_points()
    }

    pub fn point(&self, view: usize, point: usize) -> Vector3<f64> {
        self.points[view * self.num_points() + point]
    }

    pub fn depth(&self, view: usize, point: usize) -> f64 {
        self.point(view, point).z
    }

    /// Depths of visible observations, view-major.
    pub fn depths(&self) -> Vec<Option<f64>> {
        let np = self.num_points();
        (0..self.points.len())
            .map(|idx| {
                self.tracks
                    .is_visible(idx / np, idx % np)
                    .then(|| self.points[idx].z)
            })
            .collect()
    }

    /// Geodesic distance on the surface, which for these developable
    /// deformations is the distance in the flat template.
    pub fn geodesic(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.flat[i], self.flat[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    pub fn template(&self, graph: &NeighborGraph) -> EdgeLengths {
        EdgeLengths::new(
            graph
                .edges()
                .iter()
                .map(|&(i, j)| self.geodesic(i, j))
                .collect(),
        )
        .expect("finite distances")
    }

    pub fn template_table(&self, graph: &NeighborGraph) -> HashMap<(usize, usize), f64> {
        graph
            .edges()
            .iter()
            .map(|&(i, j)| ((i, j), self.geodesic(i, j)))
            .collect()
    }

    pub fn mean_depth(&self) -> f64 {
        let np = self.num_points();
        let (sum, n) = (0..self.points.len())
            .filter(|idx| self.tracks.is_visible(idx / np, idx % np))
            .fold((0.0, 0usize), |(s, n), idx| (s + self.points[idx].z, n + 1));
        sum / n as f64
    }

    /// Largest relative deviation between 3D chords and template distances
    /// when measured along the deformed surface. For bends the arc along a
    /// row is recovered from the chord in closed form.
    pub fn isometry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let np = self.num_points();
        for l in 0..self.num_views() {
            let p = self.shape_params[l];
            for r in 0..self.config.rows {
                for c in 0..self.config.cols - 1 {
                    let (i, j) = (r * self.config.cols + c, r * self.config.cols + c + 1);
                    let chord = (self.points[l * np + i] - self.points[l * np + j]).norm();
                    let geo = match self.config.deformation {
                        Deformation::CylinderBend if p.is_finite() => {
                            2.0 * p * (chord / (2.0 * p)).asin()
                        }
                        Deformation::CylinderBend => chord,
                        Deformation::HingeFold => {
                            if self.flat[i][0] < 0.0 && self.flat[j][0] > 0.0 {
                                continue;
                            }
                            chord
                        }
                    };
                    let t = self.geodesic(i, j);
                    worst = worst.max((geo - t).abs() / t);
                }
                for c in 0..self.config.cols {
                    if r + 1 < self.config.rows {
                        let (i, j) = (r * self.config.cols + c, (r + 1) * self.config.cols + c);
                        let chord = (self.points[l * np + i] - self.points[l * np + j]).norm();
                        let t = self.geodesic(i, j);
                        worst = worst.max((chord - t).abs() / t);
                    }
                }
            }
        }
        worst
    }
}

/// Deformed (but not yet posed) grid point for flat coordinates `(u, v)`.
fn deform(cfg: &SceneConfig, param: f64, u: f64, v: f64) -> Vector3<f64> {
    match cfg.deformation {
        Deformation::CylinderBend => {
            let r = param;
            if !r.is_finite() {
                return Vector3::new(u, v, 0.0);
            }
            let a = u / r;
            Vector3::new(r * a.sin(), v, cfg.bend_sign * r * (1.0 - a.cos()))
        }
        Deformation::HingeFold => {
            if u <= 0.0 {
                Vector3::new(u, v, 0.0)
            } else {
                Vector3::new(u * param.cos(), v, cfg.bend_sign * u * param.sin())
            }
        }
    }
}

pub fn generate(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let k = Intrinsics::centered(cfg.focal, cfg.width, cfg.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (nv, np) = (cfg.views, cfg.num_points());
    let u0 = cfg.grid_width() / 2.0;
    let v0 = (cfg.rows - 1) as f64 * cfg.spacing / 2.0;
    let flat: Vec<[f64; 2]> = (0..np)
        .map(|i| {
            let (r, c) = (i / cfg.cols, i % cfg.cols);
            [c as f64 * cfg.spacing - u0, r as f64 * cfg.spacing - v0]
        })
        .collect();

    let mut points = Vec::with_capacity(nv * np);
    let mut poses = Vec::with_capacity(nv);
    let mut shape_params = Vec::with_capacity(nv);
    for l in 0..nv {
        let param = cfg.shape_param(l);
        let tilt = |rng: &mut ChaCha8Rng| {
            if cfg.max_tilt > 0.0 {
                rng.gen_range(-cfg.max_tilt..=cfg.max_tilt)
            } else {
                0.0
            }
        };
        let (rx, ry) = (tilt(&mut rng), tilt(&mut rng));
        let rot = Rotation3::from_euler_angles(rx, ry, 0.0);
        let shift =
            |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let t = Vector3::new(
            shift(&mut rng, cfg.max_shift),
            shift(&mut rng, cfg.max_shift),
            cfg.depth + shift(&mut rng, cfg.depth_jitter),
        );
        // center the deformed grid on its centroid before posing
        let local: Vec<Vector3<f64>> = flat
            .iter()
            .map(|f| deform(cfg, param, f[0], f[1]))
            .collect();
        let centroid = local.iter().sum::<Vector3<f64>>() / np as f64;
        for p in &local {
            points.push(rot * (p - centroid) + t);
        }
        let m = rot.matrix();
        poses.push(Pose {
            rotation: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
            translation: [t.x, t.y, t.z],
        });
        shape_params.push(param);
    }

    let mut bad = Vec::new();
    for l in 0..nv {
        let out = points[l * np..(l + 1) * np].iter().any(|p| {
            let px = k.project(p);
            p.z <= 0.0 || px[0] < 0.0 || px[1] < 0.0 || px[0] > cfg.width || px[1] > cfg.height
        });
        if out {
            bad.push(l);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Scene(format!(
            "points project outside the image in views {bad:?}"
        )));
    }

    let normal = Normal::new(0.0, cfg.noise.max(1e-300)).expect("valid deviation");
    let pixel: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let px = k.project(p);
            if cfg.noise > 0.0 {
                [
                    px[0] + normal.sample(&mut rng),
                    px[1] + normal.sample(&mut rng),
                ]
            } else {
                px
            }
        })
        .collect();
    let mut visible = vec![true; nv * np];
    if cfg.drop_rate > 0.0 {
        for v in visible.iter_mut() {
            *v = rng.gen::<f64>() >= cfg.drop_rate;
        }
        for i in 0..np {
            if (0..nv).all(|l| !visible[l * np + i]) {
                visible[rng.gen_range(0..nv) * np + i] = true;
            }
        }
    }
    let tracks = TrackSet::new(nv, np, pixel, visible)?;
    Ok(SyntheticScene {
        config: cfg.clone(),
        intrinsics: k,
        tracks,
        flat,
        points,
        shape_params,
        poses,
    })
}

/// Convenience wrapper for the cylinder family.
pub fn generate_cylinder_bend(cfg: &SceneConfig) -> Result<SyntheticScene> {
    generate(&SceneConfig {
        deformation: Deformation::CylinderBend,
        ..cfg.clone()
    })
}

pub fn generate_hinge_fold(cfg: &SceneConfig) -> Result<SyntheticScene> {
    generate(&SceneConfig {
        deformation: Deformation::HingeFold,
        ..cfg.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    None,
    GlobalScale,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mean_error: f64,
    /// Mean error divided by the mean ground-truth depth.
    pub relative_error: f64,
    pub per_view_mean_error: Vec<f64>,
    pub scale: f64,
    pub mean_depth: f64,
    pub focal_error_pct: f64,
    /// Principal point offset as a percentage of the image diagonal.
    pub principal_point_error_pct: f64,
    pub observations: usize,
}

/// Compares a reconstruction with the ground truth over every observation
/// present in both.
pub fn evaluate(
    recon: &Reconstruction,
    scene: &SyntheticScene,
    align: Alignment,
) -> Result<Metrics> {
    if recon.num_views() != scene.num_views() || recon.num_points() != scene.num_points() {
        return Err(Error::InvalidInput(
            "reconstruction and scene sizes differ".into(),
        ));
    }
    metrics(
        recon,
        |l, i| Some(scene.point(l, i)),
        &scene.intrinsics,
        align,
    )
}

/// As [`evaluate`], with the ground truth given as a reconstruction.
pub fn evaluate_against(
    recon: &Reconstruction,
    truth: &Reconstruction,
    align: Alignment,
) -> Result<Metrics> {
    if recon.num_views() != truth.num_views() || recon.num_points() != truth.num_points() {
        return Err(Error::InvalidInput(
            "reconstruction and ground truth sizes differ".into(),
        ));
    }
    metrics(recon, |l, i| truth.point(l, i), truth.intrinsics(), align)
}

fn metrics(
    recon: &Reconstruction,
    truth: impl Fn(usize, usize) -> Option<Vector3<f64>>,
    gt: &Intrinsics,
    align: Alignment,
) -> Result<Metrics> {
    let mut pairs = Vec::new();
    for l in 0..recon.num_views() {
        for i in 0..recon.num_points() {
            if let (Some(x), Some(g)) = (recon.point(l, i), truth(l, i)) {
                pairs.push((l, x, g));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "no observation shared with the ground truth".into(),
        ));
    }
    let scale = match align {
        Alignment::None => 1.0,
        Alignment::GlobalScale => {
            let (num, den) = pairs
                .iter()
                .fold((0.0, 0.0), |(n, d), (_, x, g)| (n + x.dot(g), d + x.dot(x)));
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        }
    };
    let nv = recon.num_views();
    let mut view_sum = vec![0.0; nv];
    let mut view_n = vec![0usize; nv];
    let (mut sq, mut abs, mut depth) = (0.0, 0.0, 0.0);
    for (l, x, g) in &pairs {
        let e = (x * scale - g).norm();
        sq += e * e;
        abs += e;
        depth += g.z;
        view_sum[*l] += e;
        view_n[*l] += 1;
    }
    let n = pairs.len() as f64;
    let k = recon.intrinsics();
    let mean_depth = depth / n;
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mean_error: abs / n,
        relative_error: abs / n / mean_depth,
        per_view_mean_error: view_sum
            .iter()
            .zip(&view_n)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
            .collect(),
        scale,
        mean_depth,
        focal_error_pct: focal_error_pct(k, gt),
        principal_point_error_pct: principal_point_error_pct(k, gt),
        observations: pairs.len(),
    })
}

pub fn focal_error_pct(est: &Intrinsics, gt: &Intrinsics) -> f64 {
    (est.focal() - gt.focal()).abs() / gt.focal() * 100.0
}

pub fn principal_point_error_pct(est: &Intrinsics, gt: &Intrinsics) -> f64 {
    ((est.cx - gt.cx).powi(2) + (est.cy - gt.cy).powi(2)).sqrt() / gt.diagonal() * 100.0
}
