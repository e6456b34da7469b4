//! Maximum-depth reconstruction programs.
//!
//! With a known template every view is an independent cone program
//! `max Σλ s.t. ‖λᵢrᵢ − λⱼrⱼ‖ ≤ dᵢⱼ`, where `r = K⁻¹u` are precomputed
//! sightlines. Without a template the edge lengths become shared unknowns
//! and all views are solved jointly under a unit length budget.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{
    self, Affine, ConicProgram, ProgramBuilder, SolverResult, SolverSettings, WarmStart,
};
use crate::error::{Error, Result};
use crate::geometry::{DepthField, EdgeLengths, Intrinsics, NeighborGraph, TrackSet};

/// Backend selection and termination settings for the cone solves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub backend: String,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            backend: conic::PIPELINE_BACKEND.into(),
            tol: conic::DEFAULT_TOL,
            max_iter: conic::DEFAULT_MAX_ITER,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        conic::backend(&self.backend).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            return Err(Error::Config(format!(
                "solver tol {} outside (0, 1e-2]",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn run(&self, program: &ConicProgram, warm: Option<WarmStart>) -> Result<SolverResult> {
        let backend = conic::backend(&self.backend)?;
        let settings = SolverSettings::new(self.tol, self.max_iter).warm(warm);
        backend.solve(program, &settings).into_optimal()
    }
}

/// Which depth variables and which cone constraints survive once missing
/// observations are discarded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// `(view, point)` for each depth variable, in variable order.
    pub depth_vars: Vec<(usize, usize)>,
    /// `(view, edge)` for each cone constraint.
    pub cones: Vec<(usize, usize)>,
    /// Graph edges co-visible in at least one view, ascending.
    pub edges: Vec<usize>,
    /// Graph edges never co-visible.
    pub dropped: Vec<usize>,
}

/// Keeps only depth variables of visible observations and cones whose two
/// endpoints are both visible in that view.
pub fn prune_missing(tracks: &TrackSet, graph: &NeighborGraph) -> Layout {
    let mut depth_vars = Vec::new();
    let mut cones = Vec::new();
    let mut covisible = vec![false; graph.num_edges()];
    for l in 0..tracks.num_views() {
        depth_vars.extend(tracks.visible_points(l).map(|i| (l, i)));
        for (e, _) in graph.edges_in_view(tracks, l) {
            cones.push((l, e));
            covisible[e] = true;
        }
    }
    let (edges, dropped) = (0..graph.num_edges()).partition(|&e| covisible[e]);
    Layout {
        depth_vars,
        cones,
        edges,
        dropped,
    }
}

fn check_graph(tracks: &TrackSet, graph: &NeighborGraph) -> Result<()> {
    if graph.num_points() != tracks.num_points() {
        return Err(Error::InvalidInput(format!(
            "graph has {} points, tracks have {}",
            graph.num_points(),
            tracks.num_points()
        )));
    }
    Ok(())
}

/// Rejects views containing a visible point without any co-visible edge:
/// nothing would bound its depth. Several components are allowed since each
/// one is bounded on its own.
fn check_view_bounded(tracks: &TrackSet, graph: &NeighborGraph, view: usize) -> Result<()> {
    let mask: Vec<bool> = (0..tracks.num_points())
        .map(|i| tracks.is_visible(view, i))
        .collect();
    let comps = graph.components(&mask, |_| true);
    if let Some(c) = comps.iter().find(|c| c.len() == 1) {
        return Err(Error::Unbounded {
            view,
            component: c.clone(),
        });
    }
    if comps.len() > 1 {
        log::warn!(
            "view {view}: constraint graph has {} components",
            comps.len()
        );
    }
    Ok(())
}

fn sightlines(tracks: &TrackSet, k: &Intrinsics) -> Vec<Option<Vector3<f64>>> {
    let np = tracks.num_points();
    (0..tracks.num_views() * np)
        .map(|idx| tracks.pixel(idx / np, idx % np).map(|px| k.ray(px)))
        .collect()
}

fn difference_rows(vi: usize, ri: &Vector3<f64>, vj: usize, rj: &Vector3<f64>) -> [Affine; 3] {
    [0, 1, 2].map(|c| Affine::new(vec![(vi, ri[c]), (vj, -rj[c])], 0.0))
}

/// Shape-from-template input for one or more views of the same surface.
#[derive(Clone, Copy, Debug)]
pub struct SftProblem<'a> {
    pub tracks: &'a TrackSet,
    pub graph: &'a NeighborGraph,
    pub template: &'a EdgeLengths,
    pub intrinsics: &'a Intrinsics,
}

impl<'a> SftProblem<'a> {
    pub fn new(
        tracks: &'a TrackSet,
        graph: &'a NeighborGraph,
        template: &'a EdgeLengths,
        intrinsics: &'a Intrinsics,
    ) -> Result<Self> {
        check_graph(tracks, graph)?;
        if template.len() != graph.num_edges() {
            return Err(Error::InvalidInput(format!(
                "template has {} lengths for {} edges",
                template.len(),
                graph.num_edges()
            )));
        }
        intrinsics.validate()?;
        Ok(Self {
            tracks,
            graph,
            template,
            intrinsics,
        })
    }
}

/// A single-view template program and the point owning each depth variable.
#[derive(Clone, Debug)]
pub struct ViewProgram {
    pub program: ConicProgram,
    pub points: Vec<usize>,
}

/// Builds the program of one view. Variables are the visible depths in point
/// order followed by a homogenizing variable fixed to one.
pub fn sft_view_program(p: &SftProblem, view: usize) -> Result<ViewProgram> {
    check_view_bounded(p.tracks, p.graph, view)?;
    let np = p.tracks.num_points();
    let points: Vec<usize> = p.tracks.visible_points(view).collect();
    let mut var = vec![usize::MAX; np];
    let mut pb = ProgramBuilder::new();
    for &i in &points {
        var[i] = pb.add_var(-1.0);
    }
    let one = pb.add_var(0.0);
    pb.equality(&Affine::new(vec![(one, 1.0)], -1.0));
    for (e, (i, j)) in p.graph.edges_in_view(p.tracks, view) {
        let ri = p.intrinsics.ray(p.tracks.raw_pixel(view, i));
        let rj = p.intrinsics.ray(p.tracks.raw_pixel(view, j));
        let tail = difference_rows(var[i], &ri, var[j], &rj);
        let d = p.template.get(e);
        if d > 0.0 {
            pb.second_order(&Affine::new(vec![(one, d)], 0.0), &tail);
        } else {
            for t in tail
                .iter()
                .filter(|t| t.terms.iter().any(|&(_, c)| c != 0.0))
            {
                pb.equality(t);
            }
        }
    }
    Ok(ViewProgram {
        program: pb.build()?,
        points,
    })
}

#[derive(Clone, Debug)]
pub struct SftSolution {
    pub depths: DepthField,
    /// One entry per view.
    pub stats: Vec<SolverResult>,
}

impl SftSolution {
    pub fn objective(&self) -> f64 {
        -self.stats.iter().map(|s| s.objective).sum::<f64>()
    }
}

/// Solves every view independently, in parallel.
pub fn reconstruct_sft(p: &SftProblem, opts: &SolveOptions) -> Result<SftSolution> {
    reconstruct_sft_warm(p, opts, None)
}

/// As [`reconstruct_sft`], optionally warm-starting each view.
pub fn reconstruct_sft_warm(
    p: &SftProblem,
    opts: &SolveOptions,
    warm: Option<&[WarmStart]>,
) -> Result<SftSolution> {
    let nv = p.tracks.num_views();
    let np = p.tracks.num_points();
    let solved: Vec<(Vec<usize>, SolverResult)> = (0..nv)
        .into_par_iter()
        .map(|l| {
            let vp = sft_view_program(p, l)?;
            let ws = warm.and_then(|w| w.get(l)).cloned();
            let res = opts.run(&vp.program, ws)?;
            Ok((vp.points, res))
        })
        .collect::<Result<_>>()?;
    let mut depth = vec![None; nv * np];
    let mut stats = Vec::with_capacity(nv);
    for (l, (points, res)) in solved.into_iter().enumerate() {
        for (v, &i) in points.iter().enumerate() {
            depth[l * np + i] = Some(res.x[v]);
        }
        stats.push(res);
    }
    Ok(SftSolution {
        depths: DepthField::new(p.tracks, *p.intrinsics, depth)?,
        stats,
    })
}

/// Template-less input: tracks over at least two views and a fixed guess of
/// the intrinsics.
#[derive(Clone, Copy, Debug)]
pub struct NrsfmProblem<'a> {
    pub tracks: &'a TrackSet,
    pub graph: &'a NeighborGraph,
    pub intrinsics: &'a Intrinsics,
}

impl<'a> NrsfmProblem<'a> {
    pub fn new(
        tracks: &'a TrackSet,
        graph: &'a NeighborGraph,
        intrinsics: &'a Intrinsics,
    ) -> Result<Self> {
        check_graph(tracks, graph)?;
        if tracks.num_views() < 2 {
            return Err(Error::InvalidInput(
                "template-less reconstruction needs at least two views".into(),
            ));
        }
        intrinsics.validate()?;
        Ok(Self {
            tracks,
            graph,
            intrinsics,
        })
    }
}

/// The joint program is solved with the length budget set to the number of
/// kept edges, which keeps unknowns of order one; results are rescaled to
/// the unit budget afterwards.
#[derive(Clone, Debug)]
pub struct NrsfmProgram {
    pub program: ConicProgram,
    pub layout: Layout,
    pub budget: f64,
}

pub fn nrsfm_program(p: &NrsfmProblem) -> Result<NrsfmProgram> {
    for l in 0..p.tracks.num_views() {
        check_view_bounded(p.tracks, p.graph, l)?;
    }
    let layout = prune_missing(p.tracks, p.graph);
    if layout.edges.is_empty() {
        return Err(Error::NoUsableEdges { view: 0 });
    }
    for &e in &layout.dropped {
        let (i, j) = p.graph.edges()[e];
        log::warn!("edge ({i}, {j}) is never co-visible and is dropped");
    }
    let np = p.tracks.num_points();
    let rays = sightlines(p.tracks, p.intrinsics);
    let mut pb = ProgramBuilder::new();
    let mut var = vec![usize::MAX; p.tracks.num_views() * np];
    for &(l, i) in &layout.depth_vars {
        var[l * np + i] = pb.add_var(-1.0);
    }
    let mut dvar = vec![usize::MAX; p.graph.num_edges()];
    for &e in &layout.edges {
        dvar[e] = pb.add_var(0.0);
    }
    let budget = layout.edges.len() as f64;
    let terms = layout.edges.iter().map(|&e| (dvar[e], 2.0)).collect();
    pb.equality(&Affine::new(terms, -budget));
    for &(l, e) in &layout.cones {
        let (i, j) = p.graph.edges()[e];
        let (a, b) = (l * np + i, l * np + j);
        let ri = rays[a].as_ref().expect("visible");
        let rj = rays[b].as_ref().expect("visible");
        pb.second_order(
            &Affine::var(dvar[e]),
            &difference_rows(var[a], ri, var[b], rj),
        );
    }
    Ok(NrsfmProgram {
        program: pb.build()?,
        layout,
        budget,
    })
}

#[derive(Clone, Debug)]
pub struct NrsfmSolution {
    pub depths: DepthField,
    /// Edge lengths under the unit budget; dropped edges carry zero.
    pub lengths: EdgeLengths,
    pub dropped_edges: Vec<usize>,
    pub stats: SolverResult,
    /// Budget the internal program was solved at.
    pub budget: f64,
}

impl NrsfmSolution {
    /// Σλ at the unit budget.
    pub fn objective(&self) -> f64 {
        -self.stats.objective / self.budget
    }
}

pub fn reconstruct_nrsfm(p: &NrsfmProblem, opts: &SolveOptions) -> Result<NrsfmSolution> {
    reconstruct_nrsfm_warm(p, opts, None)
}

pub fn reconstruct_nrsfm_warm(
    p: &NrsfmProblem,
    opts: &SolveOptions,
    warm: Option<WarmStart>,
) -> Result<NrsfmSolution> {
    let prog = nrsfm_program(p)?;
    let res = opts.run(&prog.program, warm)?;
    let np = p.tracks.num_points();
    let inv = 1.0 / prog.budget;
    let mut depth = vec![None; p.tracks.num_views() * np];
    for (v, &(l, i)) in prog.layout.depth_vars.iter().enumerate() {
        depth[l * np + i] = Some(res.x[v] * inv);
    }
    let nd = prog.layout.depth_vars.len();
    let mut lengths = vec![0.0; p.graph.num_edges()];
    for (k, &e) in prog.layout.edges.iter().enumerate() {
        lengths[e] = res.x[nd + k].max(0.0) * inv;
    }
    Ok(NrsfmSolution {
        depths: DepthField::new(p.tracks, *p.intrinsics, depth)?,
        lengths: EdgeLengths::new(lengths)?,
        dropped_edges: prog.layout.dropped,
        stats: res,
        budget: prog.budget,
    })
}

/// Largest violation `‖K⁻¹(λᵢuᵢ − λⱼuⱼ)‖ − dᵢⱼ` over every co-visible edge
/// of every view (negative when all constraints hold strictly).
pub fn max_cone_violation(
    tracks: &TrackSet,
    graph: &NeighborGraph,
    depths: &DepthField,
    lengths: &EdgeLengths,
) -> f64 {
    let k = depths.intrinsics();
    let mut worst = f64::NEG_INFINITY;
    for l in 0..tracks.num_views() {
        for (e, (i, j)) in graph.edges_in_view(tracks, l) {
            let (Some(li), Some(lj)) = (depths.depth(l, i), depths.depth(l, j)) else {
                continue;
            };
            let pi = k.ray(tracks.raw_pixel(l, i)) * li;
            let pj = k.ray(tracks.raw_pixel(l, j)) * lj;
            worst = worst.max((pi - pj).norm() - lengths.get(e));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_view() -> (TrackSet, NeighborGraph, Intrinsics) {
        let tracks = TrackSet::fully_visible(1, 2, vec![[320.0, 240.0], [420.0, 240.0]]).unwrap();
        let graph = NeighborGraph::from_edges(2, 1, 0, [(0, 1)]);
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        (tracks, graph, k)
    }

    #[test]
    fn two_point_sft_matches_closed_form() {
        let (tracks, graph, k) = two_point_view();
        let d = 0.1;
        let template = EdgeLengths::new(vec![d]).unwrap();
        let p = SftProblem::new(&tracks, &graph, &template, &k).unwrap();
        let sol = reconstruct_sft(&p, &SolveOptions::default()).unwrap();
        // max λ₁+λ₂ s.t. ‖λ₁r₁−λ₂r₂‖ ≤ d is d·√(cᵀQ⁻¹c) with Q the Gram matrix of (r₁, −r₂).
        let r1 = k.ray([320.0, 240.0]);
        let r2 = k.ray([420.0, 240.0]);
        let q = nalgebra::Matrix2::new(r1.dot(&r1), -r1.dot(&r2), -r1.dot(&r2), r2.dot(&r2));
        let c = nalgebra::Vector2::new(1.0, 1.0);
        let expect = d * (c.transpose() * q.try_inverse().unwrap() * c)[0].sqrt();
        assert!(
            (sol.objective() - expect).abs() < 1e-6 * expect,
            "{} vs {expect}",
            sol.objective()
        );
    }

    #[test]
    fn stalled_interior_point_solve_is_retried() {
        // the default interior-point settings stop just short of the tolerance here
        let cfg = crate::synth::SceneConfig {
            views: 3,
            seed: 704,
            noise: 0.595689646444325,
            ..crate::synth::SceneConfig::with_points(6, 5)
        };
        let scene = crate::synth::generate(&cfg).unwrap();
        let g = NeighborGraph::build_default(&scene.tracks, 6).unwrap();
        let p = NrsfmProblem::new(&scene.tracks, &g, &scene.intrinsics).unwrap();
        let sol = reconstruct_nrsfm(&p, &SolveOptions::default()).unwrap();
        assert!(sol.stats.is_optimal());
    }

    #[test]
    fn isolated_point_is_unbounded() {
        let tracks =
            TrackSet::fully_visible(1, 3, vec![[300.0, 240.0], [340.0, 240.0], [100.0, 100.0]])
                .unwrap();
        let graph = NeighborGraph::from_edges(3, 1, 0, [(0, 1)]);
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let template = EdgeLengths::new(vec![0.1]).unwrap();
        let p = SftProblem::new(&tracks, &graph, &template, &k).unwrap();
        match reconstruct_sft(&p, &SolveOptions::default()) {
            Err(Error::Unbounded { view: 0, component }) => assert_eq!(component, vec![2]),
            other => panic!("expected unbounded error, got {other:?}"),
        }
    }

    #[test]
    fn pruning_fully_visible_keeps_everything() {
        let px = (0..6)
            .map(|i| [100.0 + 10.0 * i as f64, 200.0])
            .collect::<Vec<_>>();
        let tracks = TrackSet::fully_visible(2, 3, px).unwrap();
        let graph = NeighborGraph::from_edges(3, 2, 0, [(0, 1), (1, 2), (0, 2)]);
        let lay = prune_missing(&tracks, &graph);
        assert_eq!(lay.depth_vars.len(), 6);
        assert_eq!(lay.cones.len(), 6);
        assert!(lay.dropped.is_empty());
    }

    #[test]
    fn pruning_removes_missing_point_constraints() {
        let px = (0..9)
            .map(|i| [100.0 + 10.0 * i as f64, 200.0])
            .collect::<Vec<_>>();
        let mut vis = vec![true; 9];
        vis[3 + 1] = false;
        let tracks = TrackSet::new(3, 3, px, vis).unwrap();
        let graph = NeighborGraph::from_edges(3, 2, 0, [(0, 1), (1, 2), (0, 2)]);
        let lay = prune_missing(&tracks, &graph);
        assert!(!lay.depth_vars.contains(&(1, 1)));
        assert!(lay.depth_vars.contains(&(0, 1)) && lay.depth_vars.contains(&(2, 1)));
        assert_eq!(lay.cones.iter().filter(|c| c.0 == 1).count(), 1);
    }
}
