//! Moving a reconstruction between intrinsics hypotheses.
//!
//! Depths solved under `K̂` are carried to `K` by keeping every range
//! `â = λ̂‖K̂⁻¹u‖` fixed: `λ = â / ‖K⁻¹u‖`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesics_masked, DepthField, Intrinsics, NeighborGraph, TrackSet};

/// Re-expresses `field` under `target`, keeping every range fixed.
pub fn upgrade_depths(
    field: &DepthField,
    tracks: &TrackSet,
    target: &Intrinsics,
) -> Result<DepthField> {
    target.inverse()?;
    DepthField::from_ranges(tracks, *target, field.ranges())
}

/// Which distances are compared between views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Straight-line distances across graph edges.
    #[default]
    Euclidean,
    /// Shortest-path distances through the graph from a fixed set of
    /// anchor points.
    Geodesic,
}

/// Anchors used by geodesic mode.
const MAX_ANCHORS: usize = 32;

/// Point pairs whose upgraded distances are measured.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    mode: DistanceMode,
    pairs: Vec<(usize, usize)>,
    anchors: Vec<usize>,
}

impl PairSet {
    /// Euclidean mode uses the graph edges. Geodesic mode pairs up to 32
    /// evenly spaced anchors with every other point.
    pub fn new(graph: &NeighborGraph, mode: DistanceMode) -> Self {
        match mode {
            DistanceMode::Euclidean => Self {
                mode,
                pairs: graph.edges().to_vec(),
                anchors: Vec::new(),
            },
            DistanceMode::Geodesic => {
                let n = graph.num_points();
                let step = n.div_ceil(MAX_ANCHORS).max(1);
                let anchors: Vec<usize> = (0..n).step_by(step).collect();
                let mut pairs = Vec::new();
                for &a in &anchors {
                    for j in 0..n {
                        if j != a && !(anchors.contains(&j) && j < a) {
                            pairs.push((a, j));
                        }
                    }
                }
                Self {
                    mode,
                    pairs,
                    anchors,
                }
            }
        }
    }

    pub fn mode(&self) -> DistanceMode {
        self.mode
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Sources of the shortest-path searches in geodesic mode.
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Unit sightlines `K⁻¹u / ‖K⁻¹u‖` of every visible observation.
pub fn unit_rays(tracks: &TrackSet, k: &Intrinsics) -> Vec<Option<Vector3<f64>>> {
    let np = tracks.num_points();
    (0..tracks.num_views() * np)
        .map(|idx| {
            tracks
                .pixel(idx / np, idx % np)
                .map(|px| k.ray(px).normalize())
        })
        .collect()
}

/// Upgraded distance of every pair in every view, `None` where a pair is
/// not measurable there. Ranges come from `field`, sightlines from `rays`.
pub fn view_distances(
    field: &DepthField,
    graph: &NeighborGraph,
    pairs: &PairSet,
    rays: &[Option<Vector3<f64>>],
) -> Vec<Vec<Option<f64>>> {
    let np = field.num_points();
    (0..field.num_views())
        .map(|l| {
            let point =
                |i: usize| -> Option<Vector3<f64>> { Some(rays[l * np + i]? * field.range(l, i)?) };
            let edge_len =
                |i: usize, j: usize| -> Option<f64> { Some((point(i)? - point(j)?).norm()) };
            match pairs.mode {
                DistanceMode::Euclidean => {
                    pairs.pairs.iter().map(|&(i, j)| edge_len(i, j)).collect()
                }
                DistanceMode::Geodesic => {
                    let lengths: Vec<Option<f64>> =
                        graph.edges().iter().map(|&(i, j)| edge_len(i, j)).collect();
                    let table = geodesics_masked(graph, &lengths, &pairs.anchors);
                    pairs.pairs.iter().map(|&(a, j)| table.get(a, j)).collect()
                }
            }
        })
        .collect()
}

/// Per-view factors `s_l` making the sum of view `l`'s distances equal 1
/// under the field's own intrinsics.
pub fn normalize_view_scales(
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    mode: DistanceMode,
) -> Result<Vec<f64>> {
    let pairs = PairSet::new(graph, mode);
    let rays = unit_rays(tracks, field.intrinsics());
    scales_from_distances(&view_distances(field, graph, &pairs, &rays))
}

/// `1 / Σ d` per view.
pub fn scales_from_distances(dist: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    dist.iter()
        .enumerate()
        .map(|(l, row)| {
            let sum: f64 = row.iter().flatten().sum();
            if row.iter().all(Option::is_none) || !(sum > 0.0) {
                Err(Error::NoUsableEdges { view: l })
            } else {
                Ok(1.0 / sum)
            }
        })
        .collect()
}

/// Applies per-view factors to a depth field.
pub fn apply_view_scales(field: &DepthField, scales: &[f64]) -> DepthField {
    scales
        .iter()
        .enumerate()
        .fold(field.clone(), |acc, (l, &s)| acc.scale_view(l, s))
}
