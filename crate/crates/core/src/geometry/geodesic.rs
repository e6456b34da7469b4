use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{EdgeLengths, NeighborGraph};

/// Shortest-path distances from a set of source points.
///
/// `None` marks an unreachable pair, which is distinct from a zero distance.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicTable {
    sources: Vec<usize>,
    dist: Vec<Vec<Option<f64>>>,
}

impl GeodesicTable {
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Distance between `a` and `b`; one of them must be a source.
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        if let Some(s) = self.sources.iter().position(|&s| s == a) {
            return self.dist[s][b];
        }
        let s = self.sources.iter().position(|&s| s == b)?;
        self.dist[s][a]
    }

    /// Row of distances from the `s`-th source.
    pub fn row(&self, s: usize) -> &[Option<f64>] {
        &self.dist[s]
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from every source over the full edge set.
pub fn geodesics(graph: &NeighborGraph, lengths: &EdgeLengths, sources: &[usize]) -> GeodesicTable {
    let masked: Vec<Option<f64>> = lengths.as_slice().iter().map(|&d| Some(d)).collect();
    geodesics_masked(graph, &masked, sources)
}

/// Dijkstra where `lengths[e] == None` removes edge `e` from the graph.
pub fn geodesics_masked(
    graph: &NeighborGraph,
    lengths: &[Option<f64>],
    sources: &[usize],
) -> GeodesicTable {
    let n = graph.num_points();
    let dist = sources
        .iter()
        .map(|&src| {
            let mut best: Vec<Option<f64>> = vec![None; n];
            let mut done = vec![false; n];
            let mut heap = BinaryHeap::new();
            best[src] = Some(0.0);
            heap.push(Entry {
                dist: 0.0,
                node: src,
            });
            while let Some(Entry { dist, node }) = heap.pop() {
                if done[node] {
                    continue;
                }
                done[node] = true;
                for &nb in graph.neighbors(node) {
                    let e = graph
                        .edge_index(node, nb)
                        .expect("adjacent points share an edge");
                    let Some(w) = lengths[e] else { continue };
                    let cand = dist + w;
                    if best[nb].is_none_or(|b| cand < b) {
                        best[nb] = Some(cand);
                        heap.push(Entry {
                            dist: cand,
                            node: nb,
                        });
                    }
                }
            }
            best
        })
        .collect();
    GeodesicTable {
        sources: sources.to_vec(),
        dist,
    }
}
