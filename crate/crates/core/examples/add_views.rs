//! Reconstructs half of the views, then adds the rest against a template
//! measured on that reconstruction.

use isonrsfm::error::Result;
use isonrsfm::geometry::{NeighborGraph, Reconstruction, DEFAULT_K};
use isonrsfm::incremental::{add_views, LengthAggregate};
use isonrsfm::reconstruct::{reconstruct_nrsfm, NrsfmProblem, SolveOptions};
use isonrsfm::synth::{generate, SceneConfig};

fn main() -> Result<()> {
    let scene = generate(&SceneConfig::default())?;
    let opts = SolveOptions::default();
    let (first, second): (Vec<usize>, Vec<usize>) =
        (0..scene.num_views()).partition(|l| l % 2 == 0);
    let head = scene.tracks.select_views(&first)?;
    let graph = NeighborGraph::build_default(&head, DEFAULT_K)?;
    let base = reconstruct_nrsfm(&NrsfmProblem::new(&head, &graph, &scene.intrinsics)?, &opts)?;
    let base = Reconstruction::new(base.depths, &head)?;
    let tail = scene.tracks.select_views(&second)?;
    let added = add_views(
        &base,
        &graph,
        &tail,
        &scene.intrinsics,
        LengthAggregate::default(),
        None,
        &opts,
    )?;
    println!(
        "{} edges without a measured length",
        added.excluded_edges.len()
    );
    let recon = Reconstruction::new(added.depths, &tail)?;
    let pairs: Vec<(usize, usize, _)> = second
        .iter()
        .enumerate()
        .flat_map(|(local, &l)| {
            recon
                .view_points(local)
                .map(move |(i, x)| (local, l, (x, i)))
        })
        .collect();
    // the base has unit length budget, so compare after one global scale
    let (num, den) = pairs.iter().fold((0.0, 0.0), |(n, d), (_, l, (x, i))| {
        (n + x.dot(&scene.point(*l, *i)), d + x.dot(x))
    });
    let scale = num / den;
    for (local, &l) in second.iter().enumerate() {
        let errs: Vec<f64> = pairs
            .iter()
            .filter(|p| p.0 == local)
            .map(|(_, _, (x, i))| (scale * x - scene.point(l, *i)).norm())
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        println!(
            "view {l}: mean error {:.3}% of depth",
            100.0 * mean / scene.mean_depth()
        );
    }
    Ok(())
}
