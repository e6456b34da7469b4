//! Focal length from isometric consistency across views.
//!
//! Every view's reconstruction is upgraded to a candidate focal length and
//! rescaled so that its distances sum to one. For the right camera the
//! rescaled distances of the same point pair agree in every view.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::BrentOpt;
use serde::{Deserialize, Serialize};

use crate::conic::{SolveStatus, WarmStart};
use crate::error::{Error, Result};
use crate::geometry::{
    geodesics_masked, DepthField, Intrinsics, NeighborGraph, Reconstruction, TrackSet,
};
use crate::reconstruct::{reconstruct_nrsfm_warm, NrsfmProblem, SolveOptions};
use crate::upgrade::{
    scales_from_distances, unit_rays, upgrade_depths, view_distances, DistanceMode, PairSet,
};

/// `Σ_{k≠l} (x_k − x_l)²` over the defined entries, as `2(nΣx² − (Σx)²)`.
fn ordered_pair_spread(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in values {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    (2.0 * (n * s2 - s * s)).max(0.0)
}

/// The consistency cost of one reconstruction, reusable across cameras.
pub struct Consistency<'a> {
    field: &'a DepthField,
    tracks: &'a TrackSet,
    graph: &'a NeighborGraph,
    pairs: PairSet,
}

impl<'a> Consistency<'a> {
    /// Fails when two or more views exist but no pair is measured in two of them.
    pub fn new(
        field: &'a DepthField,
        tracks: &'a TrackSet,
        graph: &'a NeighborGraph,
        mode: DistanceMode,
    ) -> Result<Self> {
        let pairs = PairSet::new(graph, mode);
        let c = Self {
            field,
            tracks,
            graph,
            pairs,
        };
        if tracks.num_views() >= 2 {
            let dist = c.distances(field.intrinsics());
            let shared =
                (0..c.pairs.len()).any(|p| dist.iter().filter(|row| row[p].is_some()).count() >= 2);
            if !shared {
                return Err(Error::InvalidInput(
                    "no point pair is measured in two views".into(),
                ));
            }
        }
        Ok(c)
    }

    pub fn mode(&self) -> DistanceMode {
        self.pairs.mode()
    }

    fn distances(&self, k: &Intrinsics) -> Vec<Vec<Option<f64>>> {
        view_distances(
            self.field,
            self.graph,
            &self.pairs,
            &unit_rays(self.tracks, k),
        )
    }

    /// `Φ(K)` with every view's ranges held fixed.
    pub fn phi(&self, k: &Intrinsics) -> Result<f64> {
        k.inverse()?;
        if self.tracks.num_views() < 2 {
            return Ok(0.0);
        }
        let dist = self.distances(k);
        let scales = scales_from_distances(&dist)?;
        Ok((0..self.pairs.len())
            .map(|p| {
                ordered_pair_spread(
                    dist.iter()
                        .zip(&scales)
                        .filter_map(|(row, s)| Some(s * row[p]?)),
                )
            })
            .sum())
    }

    /// `Φ` at focal length `focal`, other entries of the field's camera kept.
    pub fn phi_at(&self, focal: f64) -> Result<f64> {
        self.phi(&self.field.intrinsics().with_focal(focal))
    }
}

/// `Φ(K) = Σ_k Σ_{l≠k} Σ_(i,j) (s_k d̂ᵏᵢⱼ − s_l d̂ˡᵢⱼ)²` where `d̂` are the
/// upgraded distances and `s_l` makes view `l`'s distances sum to one.
pub fn isometry_consistency(
    k: &Intrinsics,
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    mode: DistanceMode,
) -> Result<f64> {
    Consistency::new(field, tracks, graph, mode)?.phi(k)
}

/// The same quantity as [`isometry_consistency`], from the upgraded 3D
/// points and an explicit sum over ordered view pairs.
pub fn isometry_consistency_from_points(
    k: &Intrinsics,
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    mode: DistanceMode,
) -> Result<f64> {
    let recon = Reconstruction::new(upgrade_depths(field, tracks, k)?, tracks)?;
    let pairs = PairSet::new(graph, mode);
    let dist: Vec<Vec<Option<f64>>> = (0..tracks.num_views())
        .map(|l| {
            let len = |i: usize, j: usize| Some((recon.point(l, i)? - recon.point(l, j)?).norm());
            match mode {
                DistanceMode::Euclidean => pairs.pairs().iter().map(|&(i, j)| len(i, j)).collect(),
                DistanceMode::Geodesic => {
                    let edges: Vec<Option<f64>> =
                        graph.edges().iter().map(|&(i, j)| len(i, j)).collect();
                    let table = geodesics_masked(graph, &edges, pairs.anchors());
                    pairs
                        .pairs()
                        .iter()
                        .map(|&(a, j)| table.get(a, j))
                        .collect()
                }
            }
        })
        .collect();
    if tracks.num_views() < 2 {
        return Ok(0.0);
    }
    let scales = scales_from_distances(&dist)?;
    let mut phi = 0.0;
    for (k_view, row_k) in dist.iter().enumerate() {
        for (l_view, row_l) in dist.iter().enumerate() {
            if k_view == l_view {
                continue;
            }
            for (a, b) in row_k.iter().zip(row_l) {
                if let (Some(a), Some(b)) = (a, b) {
                    phi += (scales[k_view] * a - scales[l_view] * b).powi(2);
                }
            }
        }
    }
    Ok(phi)
}

/// Points on the logarithmic grid that brackets the focal search.
pub const FOCAL_GRID: usize = 41;
/// The search spans `[f̂/4, 4f̂]`.
pub const FOCAL_SPAN: f64 = 4.0;

/// Outcome of [`refine_focal`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FocalRefinement {
    pub start: f64,
    pub focal: f64,
    pub phi_start: f64,
    pub phi: f64,
    /// `Φ` does not vary over the bracket, so the start was returned.
    pub stationary: bool,
    pub evaluations: usize,
}

struct LogFocalCost<'a, 'b>(&'b Consistency<'a>);

impl CostFunction for LogFocalCost<'_, '_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, t: &f64) -> std::result::Result<f64, argmin::core::Error> {
        self.0
            .phi_at(t.exp())
            .map_err(|e| argmin::core::Error::msg(e.to_string()))
    }
}

/// Minimizes `Φ` over the focal length in `[f̂/4, 4f̂]`, parameterized by
/// `log f`: a grid scan brackets the best cell, Brent's method refines it.
pub fn refine_focal(consistency: &Consistency) -> Result<FocalRefinement> {
    let start = consistency.field.intrinsics().focal();
    let phi_start = consistency.phi_at(start)?;
    let (lo, hi) = ((start / FOCAL_SPAN).ln(), (start * FOCAL_SPAN).ln());
    let grid: Vec<f64> = (0..FOCAL_GRID)
        .map(|n| lo + (hi - lo) * n as f64 / (FOCAL_GRID - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(FOCAL_GRID);
    for &t in &grid {
        let v = consistency.phi_at(t.exp())?;
        if !v.is_finite() {
            return Err(Error::NonFiniteCost { focal: t.exp() });
        }
        values.push(v);
    }
    let (vmin, vmax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let stationary = vmax - vmin <= 1e-12 * vmax.abs().max(f64::MIN_POSITIVE);
    if stationary {
        return Ok(FocalRefinement {
            start,
            focal: start,
            phi_start,
            phi: phi_start,
            stationary,
            evaluations: FOCAL_GRID + 1,
        });
    }
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    let (a, b) = (
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(FOCAL_GRID - 1)],
    );
    let solver = BrentOpt::new(a, b).set_tolerance(1e-10, 1e-12);
    let res = Executor::new(LogFocalCost(consistency), solver)
        .configure(|s| s.max_iters(200))
        .run()
        .map_err(|e| Error::InvalidInput(format!("focal search failed: {e}")))?;
    let state = res.state();
    let (mut focal, mut phi) = (
        state.get_best_param().copied().unwrap_or(grid[best]).exp(),
        state.get_best_cost(),
    );
    if !(phi <= values[best]) {
        (focal, phi) = (grid[best].exp(), values[best]);
    }
    if phi_start <= phi {
        (focal, phi) = (start, phi_start);
    }
    Ok(FocalRefinement {
        start,
        focal,
        phi_start,
        phi,
        stationary,
        evaluations: FOCAL_GRID
            + 1
            + state
                .get_func_counts()
                .get("cost_count")
                .copied()
                .unwrap_or(0) as usize,
    })
}

/// Relative depth spread `(max − min) / mean` of each view; small values
/// flag the flat, shrunken shapes an overestimated focal length produces.
pub fn flatness(field: &DepthField) -> Vec<f64> {
    (0..field.num_views())
        .map(|l| {
            let d: Vec<f64> = field.view_depths(l).iter().flatten().copied().collect();
            let (lo, hi) = d
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            (hi - lo) / mean
        })
        .collect()
}

/// Settings of the focal sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// Downward step, relative to the current focal length.
    pub step: f64,
    /// Relative focal change below which a refinement counts as no upgrade.
    pub epsilon: f64,
    pub max_iter: usize,
    pub mode: DistanceMode,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            epsilon: 0.01,
            max_iter: 30,
            mode: DistanceMode::Geodesic,
        }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(Error::Config(format!("step {} outside (0, 1)", self.step)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// What the sweep did after an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAction {
    /// No upgrade suggested before any was followed: step down.
    StepDown,
    /// An upgrade was suggested and adopted.
    Follow,
    /// No upgrade suggested after following one: done.
    Accept,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub iteration: usize,
    /// Focal length the reconstruction was solved under.
    pub focal: f64,
    pub refined: f64,
    pub phi_start: f64,
    pub phi: f64,
    pub delta: f64,
    pub flag: bool,
    pub action: SweepAction,
    pub stationary: bool,
    pub mean_flatness: f64,
    pub solver_status: SolveStatus,
    pub solver_iterations: usize,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub intrinsics: Intrinsics,
    pub mode: DistanceMode,
    pub history: Vec<SweepRecord>,
    pub converged: bool,
}

/// Template-less calibration: reconstruct under the current focal length,
/// refine it by minimizing `Φ`, and sweep downward until a refinement
/// suggests an upgrade; then follow upgrades until none is suggested.
pub fn calibrate_without_template(
    tracks: &TrackSet,
    graph: &NeighborGraph,
    k0: &Intrinsics,
    opts: &SweepOptions,
    solve: &SolveOptions,
) -> Result<SweepReport> {
    opts.validate()?;
    k0.inverse()?;
    if tracks.num_views() < 2 {
        return Err(Error::InvalidInput(
            "template-less calibration needs at least two views".into(),
        ));
    }
    let mode = opts.mode;
    let mut k = *k0;
    let mut flag = false;
    let mut warm: Option<WarmStart> = None;
    let mut history = Vec::new();
    let mut best: Option<(f64, Intrinsics)> = None;
    for iteration in 0..opts.max_iter {
        let sol =
            reconstruct_nrsfm_warm(&NrsfmProblem::new(tracks, graph, &k)?, solve, warm.take())?;
        let consistency = Consistency::new(&sol.depths, tracks, graph, mode)?;
        let r = refine_focal(&consistency)?;
        let delta = (r.focal - r.start).abs() / r.start;
        let refined = k.with_focal(r.focal);
        let action = match (delta <= opts.epsilon, flag) {
            (true, false) => SweepAction::StepDown,
            (true, true) => SweepAction::Accept,
            (false, _) => SweepAction::Follow,
        };
        let flat = flatness(&sol.depths);
        history.push(SweepRecord {
            iteration,
            focal: r.start,
            refined: r.focal,
            phi_start: r.phi_start,
            phi: r.phi,
            delta,
            flag,
            action,
            stationary: r.stationary,
            mean_flatness: flat.iter().sum::<f64>() / flat.len() as f64,
            solver_status: sol.stats.status,
            solver_iterations: sol.stats.iterations,
            solve_seconds: sol.stats.solve_seconds,
        });
        log::info!(
            "sweep {iteration}: focal {:.2} -> {:.2} (delta {delta:.4}, {action:?})",
            r.start,
            r.focal
        );
        if best.is_none_or(|(p, _)| r.phi < p) {
            best = Some((r.phi, refined));
        }
        warm = Some(WarmStart {
            x: sol.stats.x.clone(),
            z: Some(sol.stats.z.clone()),
        });
        match action {
            SweepAction::Accept => {
                return Ok(SweepReport {
                    intrinsics: refined,
                    mode,
                    history,
                    converged: true,
                })
            }
            SweepAction::StepDown => k = refined.with_focal(r.focal * (1.0 - opts.step)),
            SweepAction::Follow => {
                flag = true;
                k = refined;
            }
        }
    }
    log::warn!(
        "focal sweep hit the iteration cap of {}; returning the most consistent camera seen",
        opts.max_iter
    );
    let (_, k_best) = best.expect("at least one iteration");
    Ok(SweepReport {
        intrinsics: k_best,
        mode,
        history,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DEFAULT_K;
    use crate::synth::{generate, SceneConfig, SyntheticScene};
    use approx::assert_relative_eq;

    fn scene() -> (SyntheticScene, NeighborGraph) {
        let s = generate(&SceneConfig::default()).unwrap();
        let g = NeighborGraph::build_default(&s.tracks, DEFAULT_K).unwrap();
        (s, g)
    }

    fn gt_field(s: &SyntheticScene) -> DepthField {
        DepthField::new(&s.tracks, s.intrinsics, s.depths()).unwrap()
    }

    #[test]
    fn single_view_is_zero() {
        let s = generate(&SceneConfig {
            views: 1,
            ..Default::default()
        })
        .unwrap();
        let g = NeighborGraph::build_default(&s.tracks, DEFAULT_K).unwrap();
        let f = gt_field(&s);
        for mode in [DistanceMode::Euclidean, DistanceMode::Geodesic] {
            assert_eq!(
                isometry_consistency(&s.intrinsics.with_focal(300.0), &f, &s.tracks, &g, mode)
                    .unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn identical_views_are_consistent() {
        let px = vec![
            [100.0, 100.0],
            [140.0, 100.0],
            [100.0, 150.0],
            [150.0, 160.0],
        ];
        let t = TrackSet::fully_visible(2, 4, [px.clone(), px].concat()).unwrap();
        let g = NeighborGraph::build(&t, 2, 0).unwrap();
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let d = vec![Some(1.0), Some(1.2), Some(0.9), Some(1.1)];
        let f = DepthField::new(&t, k, [d.clone(), d].concat()).unwrap();
        assert!(
            isometry_consistency(&k.with_focal(800.0), &f, &t, &g, DistanceMode::Euclidean)
                .unwrap()
                < 1e-28
        );
    }

    #[test]
    fn no_shared_pair_is_an_error() {
        let t = TrackSet::new(
            2,
            4,
            vec![
                [0.0, 0.0],
                [10.0, 0.0],
                [0.0, 0.0],
                [0.0, 0.0],
                [0.0, 0.0],
                [0.0, 0.0],
                [5.0, 5.0],
                [20.0, 5.0],
            ],
            vec![true, true, false, false, false, false, true, true],
        )
        .unwrap();
        let g = NeighborGraph::from_edges(4, 1, 0, [(0, 1), (2, 3)]);
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let f = DepthField::new(
            &t,
            k,
            vec![
                Some(1.0),
                Some(1.0),
                None,
                None,
                None,
                None,
                Some(1.0),
                Some(1.0),
            ],
        )
        .unwrap();
        assert!(Consistency::new(&f, &t, &g, DistanceMode::Euclidean).is_err());
    }

    #[test]
    fn true_focal_beats_half_focal() {
        let (s, g) = scene();
        let f = gt_field(&s);
        for mode in [DistanceMode::Euclidean, DistanceMode::Geodesic] {
            let c = Consistency::new(&f, &s.tracks, &g, mode).unwrap();
            assert!(
                10.0 * c.phi(&s.intrinsics).unwrap() < c.phi_at(0.5 * s.intrinsics.fx).unwrap(),
                "{mode:?}"
            );
        }
    }

    #[test]
    fn both_code_paths_agree() {
        let (s, g) = scene();
        let f = gt_field(&s).scale_view(3, 1.7);
        for mode in [DistanceMode::Euclidean, DistanceMode::Geodesic] {
            for focal in [350.0, 500.0, 640.0] {
                let k = s.intrinsics.with_focal(focal);
                let a = isometry_consistency(&k, &f, &s.tracks, &g, mode).unwrap();
                let b = isometry_consistency_from_points(&k, &f, &s.tracks, &g, mode).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-10);
                assert!(a >= 0.0);
            }
        }
    }

    #[test]
    fn refinement_stays_at_minimum() {
        let (s, g) = scene();
        let f = gt_field(&s);
        let r = refine_focal(&Consistency::new(&f, &s.tracks, &g, DistanceMode::Geodesic).unwrap())
            .unwrap();
        assert!((r.focal - r.start).abs() / r.start < 0.01, "{r:?}");
        assert!(!r.stationary && r.phi <= r.phi_start);
    }

    #[test]
    fn overestimated_focal_is_lowered() {
        let (s, g) = scene();
        let k = s.intrinsics.with_focal(2.0 * s.intrinsics.fx);
        let sol = crate::reconstruct::reconstruct_nrsfm(
            &NrsfmProblem::new(&s.tracks, &g, &k).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        for mode in [DistanceMode::Euclidean, DistanceMode::Geodesic] {
            let r =
                refine_focal(&Consistency::new(&sol.depths, &s.tracks, &g, mode).unwrap()).unwrap();
            assert!(r.focal < r.start, "{mode:?} {r:?}");
        }
    }

    #[test]
    fn single_edge_is_stationary() {
        let t = TrackSet::fully_visible(
            2,
            2,
            vec![
                [100.0, 100.0],
                [150.0, 120.0],
                [300.0, 200.0],
                [320.0, 260.0],
            ],
        )
        .unwrap();
        let g = NeighborGraph::from_edges(2, 1, 0, [(0, 1)]);
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let f = DepthField::new(&t, k, vec![Some(1.0), Some(1.3), Some(2.0), Some(1.8)]).unwrap();
        let r =
            refine_focal(&Consistency::new(&f, &t, &g, DistanceMode::Euclidean).unwrap()).unwrap();
        assert!(r.stationary);
        assert_eq!(r.focal, 500.0);
    }

    #[test]
    fn flatness_of_a_plane_facing_the_camera_is_zero() {
        let t = TrackSet::fully_visible(1, 3, vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]).unwrap();
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let f = DepthField::new(&t, k, vec![Some(2.0); 3]).unwrap();
        assert_eq!(flatness(&f), vec![0.0]);
    }

    #[test]
    fn small_scene_sweep_is_deterministic_and_ordered() {
        let s = generate(&SceneConfig {
            views: 5,
            ..SceneConfig::with_points(8, 6)
        })
        .unwrap();
        let g = NeighborGraph::build_default(&s.tracks, DEFAULT_K).unwrap();
        let opts = SweepOptions::default();
        let run = || {
            calibrate_without_template(
                &s.tracks,
                &g,
                &s.intrinsics.with_focal(900.0),
                &opts,
                &SolveOptions::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        let fa: Vec<(f64, f64)> = a.history.iter().map(|h| (h.focal, h.phi)).collect();
        let fb: Vec<(f64, f64)> = b.history.iter().map(|h| (h.focal, h.phi)).collect();
        assert_eq!(fa, fb);
        for (n, h) in a.history.iter().enumerate() {
            assert_eq!(h.iteration, n);
            assert!(h.focal > 0.0 && h.refined > 0.0 && h.phi >= 0.0);
        }
        for w in a.history.windows(2) {
            if w[0].action == SweepAction::StepDown {
                assert!(w[1].focal < w[0].focal);
            }
        }
    }

    #[test]
    fn sweep_from_true_focal_stops_quickly() {
        let (s, g) = scene();
        let r = calibrate_without_template(
            &s.tracks,
            &g,
            &s.intrinsics,
            &SweepOptions::default(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(r.converged && r.history.len() <= 10);
        assert!(crate::synth::focal_error_pct(&r.intrinsics, &s.intrinsics) < 10.0);
        let last = r.history.last().unwrap();
        assert!(last.delta <= SweepOptions::default().epsilon);
    }

    #[test]
    fn options_are_validated() {
        assert!(SweepOptions {
            step: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SweepOptions {
            epsilon: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<SweepOptions>(r#"{"stepsize": 0.1}"#).is_err());
        let o: SweepOptions = serde_json::from_str(r#"{"mode": "euclidean"}"#).unwrap();
        assert_eq!(o.mode, DistanceMode::Euclidean);
    }
}
