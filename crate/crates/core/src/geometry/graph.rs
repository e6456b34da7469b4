use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::TrackSet;

/// Symmetric k-nearest-neighbor graph over the points of a track set.
///
/// Undirected edges are stored once as `(i, j)` with `i < j`, sorted
/// lexicographically; that order is the index of an edge everywhere else
/// (edge lengths, cone blocks, reports).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    ref_view: usize,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl NeighborGraph {
    /// Builds the graph in the pixel space of `ref_view`.
    ///
    /// Each point visible there takes its `k` closest visible points (ties by
    /// lowest index). A point not visible in `ref_view` is attached in the
    /// densest view where it is visible. The union of all choices is the
    /// edge set.
    pub fn build(tracks: &TrackSet, k: usize, ref_view: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput(
                "neighbor count k must be at least 1".into(),
            ));
        }
        if ref_view >= tracks.num_views() {
            return Err(Error::InvalidInput(format!(
                "reference view {ref_view} out of range"
            )));
        }
        let ref_count = tracks.visible_count(ref_view);
        if ref_count < k + 1 {
            return Err(Error::InvalidInput(format!(
                "reference view {ref_view} has {ref_count} visible points, need at least k + 1 = {}",
                k + 1
            )));
        }
        let n = tracks.num_points();
        let mut pairs = Vec::with_capacity(n * k);
        for i in 0..n {
            let view = if tracks.is_visible(ref_view, i) {
                ref_view
            } else {
                tracks
                    .views_of(i)
                    .max_by_key(|&l| (tracks.visible_count(l), std::cmp::Reverse(l)))
                    .expect("every point is visible somewhere")
            };
            let count = tracks.visible_count(view);
            if count < k + 1 {
                return Err(Error::Graph {
                    point: i,
                    reason: format!("best view {view} has only {count} visible points for k = {k}"),
                });
            }
            for j in nearest(tracks, view, i, k) {
                pairs.push((i.min(j), i.max(j)));
            }
        }
        Ok(Self::from_edges(n, k, ref_view, pairs))
    }

    /// Builds with the densest view as reference.
    pub fn build_default(tracks: &TrackSet, k: usize) -> Result<Self> {
        Self::build(tracks, k, tracks.densest_view())
    }

    /// Graph with an explicit undirected edge list; duplicates and self-loops are dropped.
    pub fn from_edges(
        num_points: usize,
        k: usize,
        ref_view: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); num_points];
        let mut index = HashMap::with_capacity(edges.len());
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push(j);
            adjacency[j].push(i);
            index.insert((i, j), e);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Self {
            k,
            ref_view,
            adjacency,
            edges,
            index,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ref_view(&self) -> usize {
        self.ref_view
    }

    pub fn num_points(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.adjacency.len() as f64
    }

    /// Edges with both endpoints visible in `view`.
    pub fn edges_in_view<'a>(
        &'a self,
        tracks: &'a TrackSet,
        view: usize,
    ) -> impl Iterator<Item = (usize, (usize, usize))> + 'a {
        self.edges
            .iter()
            .copied()
            .enumerate()
            .filter(move |(_, (i, j))| tracks.is_visible(view, *i) && tracks.is_visible(view, *j))
    }

    /// Connected components of the subgraph induced by `mask` (points with
    /// `mask[i] == false` are skipped) restricted to the given edge filter.
    pub fn components(
        &self,
        mask: &[bool],
        mut edge_ok: impl FnMut(usize) -> bool,
    ) -> Vec<Vec<usize>> {
        let n = self.num_points();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if !mask[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for &v in &self.adjacency[u] {
                    if !mask[v] || label[v] != usize::MAX {
                        continue;
                    }
                    let e = self
                        .edge_index(u, v)
                        .expect("adjacent points share an edge");
                    if edge_ok(e) {
                        label[v] = id;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Pixel length of every edge in the reference view, where both ends are visible.
    pub fn pixel_lengths(&self, tracks: &TrackSet) -> Vec<Option<f64>> {
        self.edges
            .iter()
            .map(|&(i, j)| {
                let a = tracks.pixel(self.ref_view, i)?;
                let b = tracks.pixel(self.ref_view, j)?;
                Some((a[0] - b[0]).hypot(a[1] - b[1]))
            })
            .collect()
    }
}

/// The `k` closest points to `i` among those visible in `view`.
fn nearest(tracks: &TrackSet, view: usize, i: usize, k: usize) -> Vec<usize> {
    let pi = tracks.raw_pixel(view, i);
    let mut cand: Vec<(f64, usize)> = tracks
        .visible_points(view)
        .filter(|&j| j != i)
        .map(|j| {
            let pj = tracks.raw_pixel(view, j);
            let dx = pi[0] - pj[0];
            let dy = pi[1] - pj[1];
            (dx * dx + dy * dy, j)
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Non-negative length per undirected edge of a companion [`NeighborGraph`],
/// in the graph's edge order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLengths {
    lengths: Vec<f64>,
}

impl EdgeLengths {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if let Some(bad) = lengths.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "edge {bad} has invalid length {}",
                lengths[bad]
            )));
        }
        Ok(Self { lengths })
    }

    /// Looks up every graph edge in an undirected `(i, j) -> d` table.
    pub fn for_graph(graph: &NeighborGraph, table: &HashMap<(usize, usize), f64>) -> Result<Self> {
        let mut lengths = Vec::with_capacity(graph.num_edges());
        for &(i, j) in graph.edges() {
            let d = table
                .get(&(i, j))
                .or_else(|| table.get(&(j, i)))
                .ok_or_else(|| {
                    Error::InvalidInput(format!("template has no length for edge ({i}, {j})"))
                })?;
            lengths.push(*d);
        }
        Self::new(lengths)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lengths
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.lengths[edge]
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Sum over directed neighbor pairs, i.e. twice the undirected sum.
    pub fn directed_sum(&self) -> f64 {
        2.0 * self.lengths.iter().sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            lengths: self.lengths.iter().map(|d| d * s).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> TrackSet {
        let px = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64]).collect();
        TrackSet::fully_visible(1, 9, px).unwrap()
    }

    #[test]
    fn two_points_are_mutual_neighbors() {
        let t = TrackSet::fully_visible(1, 2, vec![[0.0, 0.0], [3.0, 1.0]]).unwrap();
        let g = NeighborGraph::build(&t, 1, 0).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn interior_grid_point_takes_axis_neighbors() {
        let t = grid3();
        assert_eq!(nearest(&t, 0, 4, 4), vec![1, 3, 5, 7]);
    }

    #[test]
    fn corner_tie_broken_by_lowest_index() {
        let t = grid3();
        // distances 1 (1, 3), sqrt 2 (4), then 2 for both 2 and 6
        assert_eq!(nearest(&t, 0, 0, 4), vec![1, 3, 4, 2]);
    }

    #[test]
    fn invisible_reference_point_attaches_elsewhere() {
        // point 3 is absent from view 0 but seen in view 1
        let px = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [0.0, 0.0],
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [2.5, 0.0],
        ];
        let vis = vec![true, true, true, false, true, true, true, true];
        let t = TrackSet::new(2, 4, px, vis).unwrap();
        let g = NeighborGraph::build(&t, 1, 0).unwrap();
        assert_eq!(g.neighbors(3), &[2]);
    }

    #[test]
    fn too_few_points_for_k() {
        let t = TrackSet::fully_visible(1, 2, vec![[0.0, 0.0], [3.0, 1.0]]).unwrap();
        assert!(NeighborGraph::build(&t, 2, 0).is_err());
    }

    #[test]
    fn rejects_negative_lengths() {
        assert!(EdgeLengths::new(vec![1.0, -0.5]).is_err());
    }
}
