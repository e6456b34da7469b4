//! Growing a reconstruction by new points and new views.
//!
//! New points `Q` join a fixed reconstruction of `P` through one cone
//! program: the old shape may only shrink by a common factor `α`, and the
//! length budget released by the shrink pays for every new edge.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::template::{calibrate_with_template, TemplateCalibOptions, TemplateCalibReport};
use crate::conic::{Affine, ProgramBuilder, SolverResult};
use crate::error::{Error, Result};
use crate::geometry::{
    geodesics_masked, DepthField, EdgeLengths, GeodesicTable, Intrinsics, NeighborGraph,
    Reconstruction, TrackSet,
};
use crate::reconstruct::{
    reconstruct_nrsfm, reconstruct_sft, NrsfmProblem, SftProblem, SolveOptions,
};

/// Adds the points `added` to a reconstruction of the points `placed`.
///
/// Every array is indexed over the joint point set; points in neither set
/// are ignored together with their edges.
#[derive(Clone, Copy, Debug)]
pub struct AugmentProblem<'a> {
    pub tracks: &'a TrackSet,
    pub graph: &'a NeighborGraph,
    /// Depths of `placed` under `K̂`; other entries are ignored.
    pub base: &'a DepthField,
    pub placed: &'a [bool],
    pub added: &'a [usize],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EdgeKind {
    Old,
    Mixed,
    New,
    Ignored,
}

impl<'a> AugmentProblem<'a> {
    pub fn new(
        tracks: &'a TrackSet,
        graph: &'a NeighborGraph,
        base: &'a DepthField,
        placed: &'a [bool],
        added: &'a [usize],
    ) -> Result<Self> {
        let np = tracks.num_points();
        if graph.num_points() != np
            || placed.len() != np
            || base.num_points() != np
            || base.num_views() != tracks.num_views()
        {
            return Err(Error::InvalidInput(
                "augmentation inputs disagree in point count".into(),
            ));
        }
        let mut seen = vec![false; np];
        for &q in added {
            if q >= np || placed[q] || seen[q] {
                return Err(Error::InvalidInput(format!(
                    "added point {q} is out of range, repeated or already placed"
                )));
            }
            seen[q] = true;
        }
        for l in 0..tracks.num_views() {
            for i in tracks.visible_points(l).filter(|&i| placed[i]) {
                if base.depth(l, i).is_none() {
                    return Err(Error::Missing { view: l, point: i });
                }
            }
        }
        Ok(Self {
            tracks,
            graph,
            base,
            placed,
            added,
        })
    }

    fn kinds(&self) -> Vec<EdgeKind> {
        let mut in_q = vec![false; self.tracks.num_points()];
        for &q in self.added {
            in_q[q] = true;
        }
        self.graph
            .edges()
            .iter()
            .map(
                |&(i, j)| match ((self.placed[i], in_q[i]), (self.placed[j], in_q[j])) {
                    ((true, _), (true, _)) => EdgeKind::Old,
                    ((true, _), (_, true)) | ((_, true), (true, _)) => EdgeKind::Mixed,
                    ((_, true), (_, true)) => EdgeKind::New,
                    _ => EdgeKind::Ignored,
                },
            )
            .collect()
    }

    /// `Λ`: sum of the placed depths.
    pub fn base_objective(&self) -> f64 {
        (0..self.tracks.num_views())
            .flat_map(|l| {
                self.tracks
                    .visible_points(l)
                    .filter(|&i| self.placed[i])
                    .map(move |i| (l, i))
            })
            .filter_map(|(l, i)| self.base.depth(l, i))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct AugmentSolution {
    /// Placed depths scaled by `α` followed by the new depths.
    pub depths: DepthField,
    pub alpha: f64,
    /// Edges touching a new point, with their lengths under the unit budget.
    pub new_edges: Vec<usize>,
    pub lengths: Vec<f64>,
    /// `None` when nothing was added.
    pub stats: Option<SolverResult>,
    /// Largest violation of a new-edge cone, unit budget.
    pub max_violation: f64,
    /// `|2Σe + α − 1|`.
    pub budget_residual: f64,
    pub objective: f64,
}

/// Solves the augmentation program
/// `max αΛ + Σζ` s.t. every new edge cone, `2Σe = 1 − α`, `0 ≤ α ≤ 1`.
///
/// Internally the budget is the number of new edges; results are rescaled.
pub fn add_points(p: &AugmentProblem, opts: &SolveOptions) -> Result<AugmentSolution> {
    let lambda = p.base_objective();
    let np = p.tracks.num_points();
    let nv = p.tracks.num_views();
    let keep = |idx: usize| p.placed[idx % np];
    let placed_only = || -> Result<DepthField> {
        let d = p
            .base
            .depths()
            .iter()
            .enumerate()
            .map(|(idx, d)| if keep(idx) { *d } else { None })
            .collect();
        DepthField::new(p.tracks, *p.base.intrinsics(), d)
    };
    if p.added.is_empty() {
        return Ok(AugmentSolution {
            depths: placed_only()?,
            alpha: 1.0,
            new_edges: Vec::new(),
            lengths: Vec::new(),
            stats: None,
            max_violation: 0.0,
            budget_residual: 0.0,
            objective: lambda,
        });
    }
    let k = p.base.intrinsics();
    let kinds = p.kinds();
    // (view, edge) cones of edges touching a new point
    let mut cones = Vec::new();
    let mut covered = vec![false; nv * np];
    for l in 0..nv {
        for (e, (i, j)) in p.graph.edges_in_view(p.tracks, l) {
            if matches!(kinds[e], EdgeKind::Mixed | EdgeKind::New) {
                cones.push((l, e));
                covered[l * np + i] = true;
                covered[l * np + j] = true;
            }
        }
    }
    for &q in p.added {
        if let Some(l) = p.tracks.views_of(q).find(|&l| !covered[l * np + q]) {
            return Err(Error::Unbounded {
                view: l,
                component: vec![q],
            });
        }
    }
    let mut new_edges: Vec<usize> = cones.iter().map(|&(_, e)| e).collect();
    new_edges.sort_unstable();
    new_edges.dedup();
    let budget = new_edges.len() as f64;

    let mut pb = ProgramBuilder::new();
    let alpha = pb.add_var(-lambda);
    let mut zvar = HashMap::new();
    for &q in p.added {
        for l in p.tracks.views_of(q) {
            zvar.insert(l * np + q, pb.add_var(-1.0));
        }
    }
    let evar: HashMap<usize, usize> = new_edges.iter().map(|&e| (e, pb.add_var(0.0))).collect();
    let mut terms: Vec<(usize, f64)> = new_edges.iter().map(|e| (evar[e], 2.0)).collect();
    terms.push((alpha, 1.0));
    pb.equality(&Affine::new(terms, -budget));
    pb.nonnegative(&Affine::var(alpha));
    pb.nonnegative(&Affine::new(vec![(alpha, -1.0)], budget));
    // ζᵢrᵢ − αλⱼrⱼ for a placed j; the placed depth folds into α's coefficient
    let term = |l: usize, i: usize| -> (usize, Vector3<f64>) {
        let r = k.ray(p.tracks.raw_pixel(l, i));
        match zvar.get(&(l * np + i)) {
            Some(&v) => (v, r),
            None => (alpha, r * p.base.depth(l, i).expect("placed depth checked")),
        }
    };
    for &(l, e) in &cones {
        let (i, j) = p.graph.edges()[e];
        let (vi, ri) = term(l, i);
        let (vj, rj) = term(l, j);
        let tail = [0, 1, 2].map(|c| Affine::new(vec![(vi, ri[c]), (vj, -rj[c])], 0.0));
        pb.second_order(&Affine::var(evar[&e]), &tail);
    }
    let res = opts.run(&pb.build()?, None)?;

    let inv = 1.0 / budget;
    let a = (res.x[alpha] * inv).clamp(0.0, 1.0);
    let mut depth: Vec<Option<f64>> = p
        .base
        .depths()
        .iter()
        .enumerate()
        .map(|(idx, d)| if keep(idx) { d.map(|d| d * a) } else { None })
        .collect();
    for (&idx, &v) in &zvar {
        depth[idx] = Some(res.x[v] * inv);
    }
    let depths = DepthField::new(p.tracks, *k, depth)?;
    let lengths: Vec<f64> = new_edges.iter().map(|e| res.x[evar[e]] * inv).collect();
    let length_of: HashMap<usize, f64> = new_edges
        .iter()
        .copied()
        .zip(lengths.iter().copied())
        .collect();
    let max_violation = cones
        .iter()
        .map(|&(l, e)| {
            let (i, j) = p.graph.edges()[e];
            let x =
                |i: usize| k.ray(p.tracks.raw_pixel(l, i)) * depths.depth(l, i).expect("solved");
            (x(i) - x(j)).norm() - length_of[&e]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let budget_residual = (2.0 * lengths.iter().sum::<f64>() + a - 1.0).abs();
    let objective = -res.objective * inv;
    Ok(AugmentSolution {
        depths,
        alpha: a,
        new_edges,
        lengths,
        stats: Some(res),
        max_violation,
        budget_residual,
        objective,
    })
}

/// How an edge's lengths in several views become one template length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthAggregate {
    Median,
    /// Maximum-depth chords never exceed the geodesic, so the longest one
    /// is the least biased.
    #[default]
    Max,
}

impl LengthAggregate {
    fn apply(self, v: &mut [f64]) -> f64 {
        match self {
            Self::Median => median(v),
            Self::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Edge lengths measured on an existing reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfTemplate {
    /// Each edge's 3D length aggregated over views; `None` for edges never
    /// co-visible.
    lengths: Vec<Option<f64>>,
}

impl SelfTemplate {
    pub fn lengths(&self) -> &[Option<f64>] {
        &self.lengths
    }

    pub fn excluded(&self) -> Vec<usize> {
        (0..self.lengths.len())
            .filter(|&e| self.lengths[e].is_none())
            .collect()
    }

    /// The measured edges as a graph of their own with matching lengths.
    pub fn restrict(&self, graph: &NeighborGraph) -> Result<(NeighborGraph, EdgeLengths)> {
        let table: HashMap<(usize, usize), f64> = graph
            .edges()
            .iter()
            .zip(&self.lengths)
            .filter_map(|(&ij, d)| d.map(|d| (ij, d)))
            .collect();
        let sub = NeighborGraph::from_edges(
            graph.num_points(),
            graph.k(),
            graph.ref_view(),
            table.keys().copied(),
        );
        let lengths = EdgeLengths::for_graph(&sub, &table)?;
        Ok((sub, lengths))
    }

    /// Shortest paths through the measured edges.
    pub fn geodesics(&self, graph: &NeighborGraph, sources: &[usize]) -> GeodesicTable {
        geodesics_masked(graph, &self.lengths, sources)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn self_template(
    recon: &Reconstruction,
    graph: &NeighborGraph,
    agg: LengthAggregate,
) -> Result<SelfTemplate> {
    if graph.num_points() != recon.num_points() {
        return Err(Error::InvalidInput(
            "graph and reconstruction disagree in point count".into(),
        ));
    }
    let lengths: Vec<Option<f64>> = graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let mut d: Vec<f64> = (0..recon.num_views())
                .filter_map(|l| Some((recon.point(l, i)? - recon.point(l, j)?).norm()))
                .collect();
            if d.is_empty() {
                log::warn!(
                    "edge ({i}, {j}) is never co-visible and is excluded from the self-template"
                );
                None
            } else {
                Some(agg.apply(&mut d))
            }
        })
        .collect();
    if lengths.iter().all(Option::is_none) {
        return Err(Error::NoUsableEdges { view: 0 });
    }
    Ok(SelfTemplate { lengths })
}

#[derive(Clone, Debug)]
pub struct AddViewsResult {
    /// Depths of the new views under `intrinsics`.
    pub depths: DepthField,
    pub intrinsics: Intrinsics,
    pub calibration: Option<TemplateCalibReport>,
    pub excluded_edges: Vec<usize>,
}

/// Reconstructs `new_views` against a template measured on `recon`.
///
/// With `calibrate`, the intrinsics of the new views are estimated first,
/// starting from `k`.
pub fn add_views(
    recon: &Reconstruction,
    graph: &NeighborGraph,
    new_views: &TrackSet,
    k: &Intrinsics,
    agg: LengthAggregate,
    calibrate: Option<&TemplateCalibOptions>,
    opts: &SolveOptions,
) -> Result<AddViewsResult> {
    if new_views.num_points() != recon.num_points() {
        return Err(Error::InvalidInput(format!(
            "new views track {} points, reconstruction has {}",
            new_views.num_points(),
            recon.num_points()
        )));
    }
    let st = self_template(recon, graph, agg)?;
    let (sub, template) = st.restrict(graph)?;
    for l in 0..new_views.num_views() {
        let mask: Vec<bool> = (0..sub.num_points())
            .map(|i| new_views.is_visible(l, i))
            .collect();
        let mut comps = sub.components(&mask, |_| true);
        if comps.len() > 1 {
            comps.sort_by_key(Vec::len);
            return Err(Error::Disconnected {
                view: l,
                component: comps.swap_remove(0),
            });
        }
    }
    let (intrinsics, calibration) = match calibrate {
        Some(copts) => {
            let rep = calibrate_with_template(new_views, &sub, &template, k, copts, opts)?;
            (rep.intrinsics, Some(rep))
        }
        None => (*k, None),
    };
    let sol = reconstruct_sft(
        &SftProblem::new(new_views, &sub, &template, &intrinsics)?,
        opts,
    )?;
    Ok(AddViewsResult {
        depths: sol.depths,
        intrinsics,
        calibration,
        excluded_edges: st.excluded(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyOptions {
    /// Seed size; `None` uses `max(150, N/4)`.
    pub seed_size: Option<usize>,
    pub batch_size: usize,
    /// Neighbors per point of the joint graph.
    pub k: usize,
    pub seed: u64,
}

impl Default for DensifyOptions {
    fn default() -> Self {
        Self {
            seed_size: None,
            batch_size: 150,
            k: 8,
            seed: 0,
        }
    }
}

impl DensifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.seed_size == Some(0) {
            return Err(Error::Config("seed_size must be positive".into()));
        }
        Ok(())
    }

    pub fn seed_size_for(&self, n: usize) -> usize {
        self.seed_size.unwrap_or(150.max(n / 4)).min(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyStage {
    pub stage: usize,
    pub points: Vec<usize>,
    pub alpha: f64,
    pub objective: f64,
    pub solve_seconds: f64,
    pub max_violation: f64,
}

#[derive(Clone, Debug)]
pub struct DensifyResult {
    pub reconstruction: Reconstruction,
    pub stages: Vec<DensifyStage>,
}

/// Splits `points` into batches that each sample the whole image evenly:
/// points are binned on a grid over their pixels in the reference view
/// (or the first view seeing them) and dealt round-robin from the cells.
pub fn stratified_batches(
    tracks: &TrackSet,
    ref_view: usize,
    points: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    if points.is_empty() {
        return Vec::new();
    }
    let pos = |i: usize| -> [f64; 2] {
        tracks
            .pixel(ref_view, i)
            .or_else(|| tracks.views_of(i).next().and_then(|l| tracks.pixel(l, i)))
            .expect("every point is visible somewhere")
    };
    let px: Vec<[f64; 2]> = points.iter().map(|&i| pos(i)).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &px {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let side = (batch_size as f64).sqrt().ceil().max(1.0) as usize;
    let cell = |p: &[f64; 2]| -> usize {
        let idx = |c: usize| {
            (((p[c] - lo[c]) / (hi[c] - lo[c]).max(1e-12) * side as f64) as usize).min(side - 1)
        };
        idx(1) * side + idx(0)
    };
    let mut cells = vec![Vec::new(); side * side];
    for (&i, p) in points.iter().zip(&px) {
        cells[cell(p)].push(i);
    }
    for c in &mut cells {
        c.shuffle(rng);
    }
    let mut order = Vec::with_capacity(points.len());
    let mut round = 0;
    while order.len() < points.len() {
        order.extend(cells.iter().filter_map(|c| c.get(round)));
        round += 1;
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Neighbor graph built over the placed points and `batch` only, in the
/// indices of the full track set.
pub fn joint_graph(
    tracks: &TrackSet,
    placed: &[bool],
    batch: &[usize],
    k: usize,
) -> Result<NeighborGraph> {
    let mut subset: Vec<usize> = (0..tracks.num_points())
        .filter(|&i| placed[i])
        .chain(batch.iter().copied())
        .collect();
    subset.sort_unstable();
    let sub = tracks.select_points(&subset)?;
    let g = NeighborGraph::build_default(&sub, k)?;
    let edges = g.edges().iter().map(|&(i, j)| (subset[i], subset[j]));
    Ok(NeighborGraph::from_edges(
        tracks.num_points(),
        k,
        g.ref_view(),
        edges,
    ))
}

/// The seed followed by the batches, as `densify` will process them.
pub fn densify_plan(tracks: &TrackSet, dopts: &DensifyOptions) -> Result<Vec<Vec<usize>>> {
    dopts.validate()?;
    let n = tracks.num_points();
    let mut rng = ChaCha8Rng::seed_from_u64(dopts.seed);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let m = dopts.seed_size_for(n);
    let mut seed = all[..m].to_vec();
    seed.sort_unstable();
    let mut plan = vec![seed];
    plan.extend(stratified_batches(
        tracks,
        tracks.densest_view(),
        &all[m..],
        dopts.batch_size,
        &mut rng,
    ));
    Ok(plan)
}

/// Batch-reconstructs a random seed subset, then adds the remaining points
/// in spatially stratified batches. With `checkpoint`, the reconstruction
/// after every stage is written there, and a run whose stages match the
/// plan resumes after its last stage.
pub fn densify(
    tracks: &TrackSet,
    k_hat: &Intrinsics,
    dopts: &DensifyOptions,
    opts: &SolveOptions,
    checkpoint: Option<&Path>,
) -> Result<DensifyResult> {
    let plan = densify_plan(tracks, dopts)?;
    let n = tracks.num_points();
    let nv = tracks.num_views();
    let save = |field: &DepthField, stages: &[DensifyStage]| -> Result<()> {
        match checkpoint {
            Some(dir) => crate::io::write_checkpoint(
                dir,
                &Reconstruction::new(field.clone(), tracks)?,
                stages,
            ),
            None => Ok(()),
        }
    };
    let resumed = match checkpoint {
        Some(dir) => crate::io::read_checkpoint(dir, tracks)?.filter(|(ck, _)| {
            let ok = ck.intrinsics == *k_hat
                && !ck.stages.is_empty()
                && ck.stages.len() <= plan.len()
                && ck.stages.iter().zip(&plan).all(|(s, p)| &s.points == p);
            if !ok {
                log::warn!(
                    "checkpoint in {} does not match this run and is overwritten",
                    dir.display()
                );
            }
            ok
        }),
        None => None,
    };
    let (mut field, mut stages) = match resumed {
        Some((ck, field)) => {
            log::info!("resuming densification after stage {}", ck.stages.len() - 1);
            (field, ck.stages)
        }
        None => {
            let seed = &plan[0];
            let start = Instant::now();
            let seed_tracks = tracks.select_points(seed)?;
            let seed_graph = NeighborGraph::build_default(&seed_tracks, dopts.k)?;
            let base =
                reconstruct_nrsfm(&NrsfmProblem::new(&seed_tracks, &seed_graph, k_hat)?, opts)?;
            let mut depth = vec![None; nv * n];
            for l in 0..nv {
                for (s, &i) in seed.iter().enumerate() {
                    depth[l * n + i] = base.depths.depth(l, s);
                }
            }
            let field = DepthField::new(tracks, *k_hat, depth)?;
            let stages = vec![DensifyStage {
                stage: 0,
                points: seed.clone(),
                alpha: 1.0,
                objective: base.objective(),
                solve_seconds: start.elapsed().as_secs_f64(),
                max_violation: base.stats.primal_residual,
            }];
            save(&field, &stages)?;
            (field, stages)
        }
    };
    let mut placed = vec![false; n];
    for s in &stages {
        for &i in &s.points {
            placed[i] = true;
        }
    }
    if stages.len() < plan.len() {
        for (b, batch) in plan.iter().enumerate().skip(stages.len()) {
            let t0 = Instant::now();
            let graph = joint_graph(tracks, &placed, batch, dopts.k)?;
            let sol = add_points(
                &AugmentProblem::new(tracks, &graph, &field, &placed, batch)?,
                opts,
            )?;
            log::info!(
                "densify stage {b}: {} points, alpha {:.4}",
                batch.len(),
                sol.alpha
            );
            for &q in batch {
                placed[q] = true;
            }
            field = sol.depths;
            stages.push(DensifyStage {
                stage: b,
                points: batch.clone(),
                alpha: sol.alpha,
                objective: sol.objective,
                solve_seconds: t0.elapsed().as_secs_f64(),
                max_violation: sol.max_violation,
            });
            save(&field, &stages)?;
        }
    }
    Ok(DensifyResult {
        reconstruction: Reconstruction::new(field, tracks)?,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{evaluate, generate, Alignment, SceneConfig};

    fn small() -> crate::synth::SyntheticScene {
        let mut cfg = SceneConfig::with_points(10, 6);
        cfg.views = 3;
        generate(&cfg).unwrap()
    }

    fn split(n: usize, take: impl Fn(usize) -> bool) -> (Vec<bool>, Vec<usize>) {
        let placed: Vec<bool> = (0..n).map(&take).collect();
        let added = (0..n).filter(|&i| !take(i)).collect();
        (placed, added)
    }

    fn seed_field(scene: &crate::synth::SyntheticScene, placed: &[bool]) -> DepthField {
        let n = scene.num_points();
        let seed: Vec<usize> = (0..n).filter(|&i| placed[i]).collect();
        let t = scene.tracks.select_points(&seed).unwrap();
        let g = NeighborGraph::build_default(&t, 8).unwrap();
        let sol = reconstruct_nrsfm(
            &NrsfmProblem::new(&t, &g, &scene.intrinsics).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let mut d = vec![None; scene.num_views() * n];
        for l in 0..scene.num_views() {
            for (s, &i) in seed.iter().enumerate() {
                d[l * n + i] = sol.depths.depth(l, s);
            }
        }
        DepthField::new(&scene.tracks, scene.intrinsics, d).unwrap()
    }

    #[test]
    fn nothing_added_keeps_base() {
        let scene = small();
        let n = scene.num_points();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let base = DepthField::new(&scene.tracks, scene.intrinsics, scene.depths()).unwrap();
        let placed = vec![true; n];
        let sol = add_points(
            &AugmentProblem::new(&scene.tracks, &g, &base, &placed, &[]).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.alpha, 1.0);
        assert_eq!(sol.depths, base);
        assert!(sol.stats.is_none());
    }

    #[test]
    fn added_points_are_feasible_and_dominate() {
        let scene = small();
        let n = scene.num_points();
        let (placed, added) = split(n, |i| i % 3 != 0);
        let base = seed_field(&scene, &placed);
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let p = AugmentProblem::new(&scene.tracks, &g, &base, &placed, &added).unwrap();
        let opts = SolveOptions::default();
        let sol = add_points(&p, &opts).unwrap();
        assert!(sol.alpha > 0.0 && sol.alpha <= 1.0, "alpha {}", sol.alpha);
        assert!(
            sol.max_violation <= 10.0 * opts.tol,
            "violation {}",
            sol.max_violation
        );
        assert!(
            sol.budget_residual <= 10.0 * opts.tol,
            "budget {}",
            sol.budget_residual
        );
        assert!(sol.objective >= sol.alpha * p.base_objective());
        for l in 0..scene.num_views() {
            for i in scene.tracks.visible_points(l) {
                assert!(sol.depths.depth(l, i).is_some(), "({l}, {i}) has no depth");
            }
        }
    }

    #[test]
    fn unknown_or_repeated_points_are_rejected() {
        let scene = small();
        let n = scene.num_points();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let base = DepthField::new(&scene.tracks, scene.intrinsics, scene.depths()).unwrap();
        let (placed, _) = split(n, |i| i != 0);
        assert!(AugmentProblem::new(&scene.tracks, &g, &base, &placed, &[0, 0]).is_err());
        assert!(AugmentProblem::new(&scene.tracks, &g, &base, &placed, &[1]).is_err());
        assert!(AugmentProblem::new(&scene.tracks, &g, &base, &placed, &[n]).is_err());
    }

    #[test]
    fn point_without_covisible_neighbor_is_unbounded() {
        let px = vec![
            [300.0, 240.0],
            [340.0, 240.0],
            [320.0, 260.0],
            [100.0, 100.0],
        ];
        let t = TrackSet::fully_visible(1, 4, px).unwrap();
        let g = NeighborGraph::from_edges(4, 2, 0, [(0, 1), (1, 2), (0, 2)]);
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let base = DepthField::new(&t, k, vec![Some(1.0), Some(1.0), None, None]).unwrap();
        let placed = [true, true, false, false];
        let p = AugmentProblem::new(&t, &g, &base, &placed, &[2, 3]).unwrap();
        match add_points(&p, &SolveOptions::default()) {
            Err(Error::Unbounded { view: 0, component }) => assert_eq!(component, vec![3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rigid_self_template_matches_ground_truth() {
        let mut cfg = SceneConfig::with_points(10, 6);
        cfg.views = 3;
        cfg.radius_start = 1e6;
        cfg.radius_end = 1e6;
        let scene = generate(&cfg).unwrap();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let gt = Reconstruction::new(
            DepthField::new(&scene.tracks, scene.intrinsics, scene.depths()).unwrap(),
            &scene.tracks,
        )
        .unwrap();
        let st = self_template(&gt, &g, LengthAggregate::default()).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let d = st.lengths()[e].unwrap();
            let want = scene.geodesic(i, j);
            assert!((d - want).abs() <= 5e-3 * want, "edge {e}: {d} vs {want}");
        }
    }

    #[test]
    fn single_view_self_template_is_that_view() {
        let scene = small();
        let t = scene.tracks.select_views(&[1]).unwrap();
        let d: Vec<Option<f64>> =
            scene.depths()[scene.num_points()..2 * scene.num_points()].to_vec();
        let r = Reconstruction::new(DepthField::new(&t, scene.intrinsics, d).unwrap(), &t).unwrap();
        let g = NeighborGraph::build_default(&t, 8).unwrap();
        let st = self_template(&r, &g, LengthAggregate::Median).unwrap();
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            let want = (r.point(0, i).unwrap() - r.point(0, j).unwrap()).norm();
            assert_eq!(st.lengths()[e], Some(want));
        }
    }

    #[test]
    fn bent_self_template_keeps_geodesics() {
        let scene = small();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let gt = Reconstruction::new(
            DepthField::new(&scene.tracks, scene.intrinsics, scene.depths()).unwrap(),
            &scene.tracks,
        )
        .unwrap();
        let st = self_template(&gt, &g, LengthAggregate::default()).unwrap();
        let table = st.geodesics(&g, &[0]);
        let truth = crate::geometry::geodesics(&g, &scene.template(&g), &[0]);
        for j in 1..scene.num_points() {
            let d = table.get(0, j).unwrap();
            let want = truth.get(0, j).unwrap();
            assert!(
                (d - want).abs() <= 0.02 * want + 1e-9,
                "point {j}: {d} vs {want}"
            );
        }
    }

    #[test]
    fn readding_a_view_reproduces_it() {
        let scene = small();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let opts = SolveOptions::default();
        let template = scene.template(&g);
        let sol = reconstruct_sft(
            &SftProblem::new(&scene.tracks, &g, &template, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        let recon = Reconstruction::new(sol.depths.clone(), &scene.tracks).unwrap();
        let view = scene.tracks.select_views(&[2]).unwrap();
        let added = add_views(
            &recon,
            &g,
            &view,
            &scene.intrinsics,
            LengthAggregate::default(),
            None,
            &opts,
        )
        .unwrap();
        for i in view.visible_points(0) {
            let (a, b) = (
                added.depths.depth(0, i).unwrap(),
                sol.depths.depth(2, i).unwrap(),
            );
            assert!((a - b).abs() <= 0.01 * b, "point {i}: {a} vs {b}");
        }
    }

    #[test]
    fn disconnected_new_view_is_rejected() {
        let px = vec![
            [300.0, 240.0],
            [340.0, 240.0],
            [100.0, 100.0],
            [120.0, 100.0],
        ];
        let t = TrackSet::fully_visible(1, 4, px).unwrap();
        let k = Intrinsics::centered(500.0, 640.0, 480.0).unwrap();
        let r =
            Reconstruction::new(DepthField::new(&t, k, vec![Some(1.0); 4]).unwrap(), &t).unwrap();
        let g = NeighborGraph::from_edges(4, 1, 0, [(0, 1), (2, 3)]);
        match add_views(
            &r,
            &g,
            &t,
            &k,
            LengthAggregate::default(),
            None,
            &SolveOptions::default(),
        ) {
            Err(Error::Disconnected { view: 0, component }) => assert_eq!(component.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batches_partition_the_points() {
        let scene = small();
        let pts: Vec<usize> = (5..scene.num_points()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = stratified_batches(&scene.tracks, 0, &pts, 12, &mut rng);
        assert!(b.iter().all(|x| x.len() <= 12));
        let mut flat: Vec<usize> = b.concat();
        flat.sort_unstable();
        assert_eq!(flat, pts);
    }

    #[test]
    fn seed_covering_everything_is_batch() {
        let scene = small();
        let opts = SolveOptions::default();
        let d = DensifyOptions {
            seed_size: Some(scene.num_points()),
            ..Default::default()
        };
        let r = densify(&scene.tracks, &scene.intrinsics, &d, &opts, None).unwrap();
        let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
        let batch = reconstruct_nrsfm(
            &NrsfmProblem::new(&scene.tracks, &g, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        assert_eq!(r.stages.len(), 1);
        for (a, b) in r
            .reconstruction
            .depths()
            .depths()
            .iter()
            .zip(batch.depths.depths())
        {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn densify_covers_every_observation() {
        let scene = small();
        let d = DensifyOptions {
            seed_size: Some(24),
            batch_size: 18,
            ..Default::default()
        };
        let r = densify(
            &scene.tracks,
            &scene.intrinsics,
            &d,
            &SolveOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(r.stages.len(), 3);
        for l in 0..scene.num_views() {
            for i in scene.tracks.visible_points(l) {
                assert!(r.reconstruction.point(l, i).is_some());
            }
        }
        let m = evaluate(&r.reconstruction, &scene, Alignment::GlobalScale).unwrap();
        assert!(m.relative_error < 0.05, "{}", m.relative_error);
    }

    #[test]
    fn densify_resumes_from_checkpoint() {
        let scene = small();
        let d = DensifyOptions {
            seed_size: Some(24),
            batch_size: 18,
            ..Default::default()
        };
        let opts = SolveOptions::default();
        let dir = tempfile::tempdir().unwrap();
        let full = densify(
            &scene.tracks,
            &scene.intrinsics,
            &d,
            &opts,
            Some(dir.path()),
        )
        .unwrap();
        // drop the last stage and resume
        let (mut ck, _) = crate::io::read_checkpoint(dir.path(), &scene.tracks)
            .unwrap()
            .unwrap();
        ck.stages.pop();
        let partial = dir.path().join("partial");
        let mut field_stages = Vec::new();
        let mut placed = vec![false; scene.num_points()];
        for s in &ck.stages {
            field_stages.push(s.clone());
            for &i in &s.points {
                placed[i] = true;
            }
        }
        let np = scene.num_points();
        let depth = full
            .reconstruction
            .depths()
            .depths()
            .iter()
            .enumerate()
            .map(|(idx, v)| if placed[idx % np] { *v } else { None })
            .collect();
        let f = DepthField::new(&scene.tracks, scene.intrinsics, depth).unwrap();
        crate::io::write_checkpoint(
            &partial,
            &Reconstruction::new(f, &scene.tracks).unwrap(),
            &field_stages,
        )
        .unwrap();
        let resumed = densify(&scene.tracks, &scene.intrinsics, &d, &opts, Some(&partial)).unwrap();
        assert_eq!(resumed.stages.len(), full.stages.len());
        assert_eq!(
            resumed.stages.last().unwrap().points,
            full.stages.last().unwrap().points
        );
        for l in 0..scene.num_views() {
            for i in scene.tracks.visible_points(l) {
                assert!(resumed.reconstruction.point(l, i).is_some());
            }
        }
    }
}
