//! Template-less reconstruction of the default scene, compared after a
//! global scale fit.

use isonrsfm::error::Result;
use isonrsfm::geometry::{NeighborGraph, Reconstruction, DEFAULT_K};
use isonrsfm::reconstruct::{reconstruct_nrsfm, NrsfmProblem, SolveOptions};
use isonrsfm::synth::{evaluate, generate, Alignment, SceneConfig};

fn main() -> Result<()> {
    let scene = generate(&SceneConfig::default())?;
    let graph = NeighborGraph::build_default(&scene.tracks, DEFAULT_K)?;
    let sol = reconstruct_nrsfm(
        &NrsfmProblem::new(&scene.tracks, &graph, &scene.intrinsics)?,
        &SolveOptions::default(),
    )?;
    println!(
        "{} edges, {} dropped, budget {}",
        graph.num_edges(),
        sol.dropped_edges.len(),
        sol.budget
    );
    println!("directed length sum {:.12}", sol.lengths.directed_sum());
    let m = evaluate(
        &Reconstruction::new(sol.depths, &scene.tracks)?,
        &scene,
        Alignment::GlobalScale,
    )?;
    println!(
        "scale {:.4}, relative error {:.3}%",
        m.scale,
        100.0 * m.relative_error
    );
    Ok(())
}
