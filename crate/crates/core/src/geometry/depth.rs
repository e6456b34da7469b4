use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, TrackSet};

/// Per-view, per-point depths together with the intrinsics they were solved
/// under. Ranges `λ‖K⁻¹u‖` are computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    intrinsics: Intrinsics,
    num_views: usize,
    num_points: usize,
    depth: Vec<Option<f64>>,
    range: Vec<Option<f64>>,
}

impl DepthField {
    /// `depth` is view-major; entries for invisible observations must be `None`.
    pub fn new(tracks: &TrackSet, intrinsics: Intrinsics, depth: Vec<Option<f64>>) -> Result<Self> {
        intrinsics.validate()?;
        let (nv, np) = (tracks.num_views(), tracks.num_points());
        if depth.len() != nv * np {
            return Err(Error::InvalidInput(format!(
                "depth field has {} entries, expected {}",
                depth.len(),
                nv * np
            )));
        }
        let mut range = Vec::with_capacity(depth.len());
        for l in 0..nv {
            for i in 0..np {
                let d = depth[l * np + i];
                let r = match (d, tracks.pixel(l, i)) {
                    (Some(d), Some(px)) => Some(d * intrinsics.ray(px).norm()),
                    (None, _) => None,
                    (Some(_), None) => return Err(Error::Missing { view: l, point: i }),
                };
                range.push(r);
            }
        }
        Ok(Self {
            intrinsics,
            num_views: nv,
            num_points: np,
            depth,
            range,
        })
    }

    /// Builds depths from ranges: λ = â / ‖K⁻¹u‖.
    pub fn from_ranges(
        tracks: &TrackSet,
        intrinsics: Intrinsics,
        range: &[Option<f64>],
    ) -> Result<Self> {
        let np = tracks.num_points();
        let depth = range
            .iter()
            .enumerate()
            .map(|(idx, r)| {
                let (l, i) = (idx / np, idx % np);
                match (r, tracks.pixel(l, i)) {
                    (Some(r), Some(px)) => Some(r / intrinsics.ray(px).norm()),
                    _ => None,
                }
            })
            .collect();
        Self::new(tracks, intrinsics, depth)
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    #[inline]
    pub fn depth(&self, view: usize, point: usize) -> Option<f64> {
        self.depth[view * self.num_points + point]
    }

    #[inline]
    pub fn range(&self, view: usize, point: usize) -> Option<f64> {
        self.range[view * self.num_points + point]
    }

    pub fn depths(&self) -> &[Option<f64>] {
        &self.depth
    }

    pub fn ranges(&self) -> &[Option<f64>] {
        &self.range
    }

    pub fn view_depths(&self, view: usize) -> &[Option<f64>] {
        &self.depth[view * self.num_points..(view + 1) * self.num_points]
    }

    pub fn view_ranges(&self, view: usize) -> &[Option<f64>] {
        &self.range[view * self.num_points..(view + 1) * self.num_points]
    }

    /// Checks that the stored ranges match the depths under the stored intrinsics.
    pub fn max_range_inconsistency(&self, tracks: &TrackSet) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..self.num_views {
            for i in 0..self.num_points {
                if let (Some(d), Some(r), Some(px)) =
                    (self.depth(l, i), self.range(l, i), tracks.pixel(l, i))
                {
                    let again = d * self.intrinsics.ray(px).norm();
                    worst = worst.max((again - r).abs() / r.abs().max(f64::MIN_POSITIVE));
                }
            }
        }
        worst
    }

    /// Multiplies every depth of `view` by `s`.
    pub fn scale_view(&self, view: usize, s: f64) -> Self {
        let mut out = self.clone();
        let np = self.num_points;
        for idx in view * np..(view + 1) * np {
            out.depth[idx] = out.depth[idx].map(|d| d * s);
            out.range[idx] = out.range[idx].map(|r| r * s);
        }
        out
    }

    /// Uniform scaling of every depth.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.depth.iter_mut().for_each(|d| *d = d.map(|v| v * s));
        out.range.iter_mut().for_each(|r| *r = r.map(|v| v * s));
        out
    }

    /// Smallest visible depth, used to check positivity.
    pub fn min_depth(&self) -> Option<f64> {
        self.depth.iter().flatten().copied().reduce(f64::min)
    }
}

/// Depths plus their back-projected 3D points `X = λ K⁻¹u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    depths: DepthField,
    points: Vec<Option<Vector3<f64>>>,
}

impl Reconstruction {
    pub fn new(depths: DepthField, tracks: &TrackSet) -> Result<Self> {
        if depths.num_views() != tracks.num_views() || depths.num_points() != tracks.num_points() {
            return Err(Error::InvalidInput(
                "depth field and tracks disagree in shape".into(),
            ));
        }
        let k = *depths.intrinsics();
        let np = tracks.num_points();
        let points = (0..depths.depth.len())
            .map(|idx| {
                let (l, i) = (idx / np, idx % np);
                let d = depths.depth[idx]?;
                let px = tracks.pixel(l, i)?;
                Some(k.ray(px) * d)
            })
            .collect();
        Ok(Self { depths, points })
    }

    pub fn depths(&self) -> &DepthField {
        &self.depths
    }

    pub fn into_depths(self) -> DepthField {
        self.depths
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        self.depths.intrinsics()
    }

    pub fn num_views(&self) -> usize {
        self.depths.num_views
    }

    pub fn num_points(&self) -> usize {
        self.depths.num_points
    }

    #[inline]
    pub fn point(&self, view: usize, point: usize) -> Option<Vector3<f64>> {
        self.points[view * self.depths.num_points + point]
    }

    pub fn view_points(&self, view: usize) -> impl Iterator<Item = (usize, Vector3<f64>)> + '_ {
        (0..self.depths.num_points).filter_map(move |i| self.point(view, i).map(|p| (i, p)))
    }
}

/// Distance between two points placed at ranges `ai`, `aj` along the unit
/// sightlines of `ui`, `uj` under `k`.
pub fn upgraded_distance(
    k: &Intrinsics,
    ai: f64,
    aj: f64,
    ui: &Vector3<f64>,
    uj: &Vector3<f64>,
) -> Result<f64> {
    k.validate()?;
    let ri = k.ray_h(ui);
    let rj = k.ray_h(uj);
    let (ni, nj) = (ri.norm(), rj.norm());
    if ni == 0.0 || nj == 0.0 {
        return Err(Error::InvalidInput(
            "pixel at infinity has no sightline".into(),
        ));
    }
    Ok((ri * (ai / ni) - rj * (aj / nj)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_points_have_zero_distance() {
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let u = Vector3::new(100.0, 50.0, 1.0);
        assert_eq!(upgraded_distance(&k, 2.0, 2.0, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn shared_sightline_gives_range_difference() {
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let u = Vector3::new(100.0, 50.0, 1.0);
        assert_relative_eq!(
            upgraded_distance(&k, 2.0, 1.0, &u, &u).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn unit_ray_geometry() {
        let k = Intrinsics::new(500.0, 500.0, 0.0, 0.0, 0.0, 640.0, 480.0).unwrap();
        let ui = Vector3::new(0.0, 0.0, 1.0);
        let uj = Vector3::new(500.0, 0.0, 1.0);
        let d = upgraded_distance(&k, 1.0, 2f64.sqrt(), &ui, &uj).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_camera_is_rejected() {
        let k = Intrinsics {
            fx: 0.0,
            fy: 500.0,
            skew: 0.0,
            cx: 0.0,
            cy: 0.0,
            width: 1.0,
            height: 1.0,
        };
        let u = Vector3::new(1.0, 1.0, 1.0);
        assert!(matches!(
            upgraded_distance(&k, 1.0, 1.0, &u, &u),
            Err(Error::SingularIntrinsics)
        ));
    }

    #[test]
    fn reconstruction_reprojects_and_keeps_depth() {
        let k = Intrinsics::new(480.0, 520.0, 1.5, 300.0, 250.0, 640.0, 480.0).unwrap();
        let t = TrackSet::fully_visible(1, 2, vec![[10.0, 20.0], [600.0, 400.0]]).unwrap();
        let df = DepthField::new(&t, k, vec![Some(1.3), Some(2.7)]).unwrap();
        let rec = Reconstruction::new(df, &t).unwrap();
        for i in 0..2 {
            let x = rec.point(0, i).unwrap();
            let px = k.project(&x);
            let orig = t.pixel(0, i).unwrap();
            assert!((px[0] - orig[0]).abs() < 1e-9 && (px[1] - orig[1]).abs() < 1e-9);
            assert_eq!(x.z, rec.depths().depth(0, i).unwrap());
        }
    }
}
