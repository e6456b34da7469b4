//! Estimates the focal length of the default scene from tracks alone.

use isonrsfm::calib::templateless::{calibrate_without_template, SweepOptions};
use isonrsfm::error::Result;
use isonrsfm::geometry::{Intrinsics, NeighborGraph, DEFAULT_K};
use isonrsfm::reconstruct::SolveOptions;
use isonrsfm::synth::{focal_error_pct, generate, SceneConfig};

fn main() -> Result<()> {
    let scene = generate(&SceneConfig::default())?;
    let graph = NeighborGraph::build_default(&scene.tracks, DEFAULT_K)?;
    let k0 = Intrinsics::default_guess(scene.intrinsics.width, scene.intrinsics.height)?;
    let r = calibrate_without_template(
        &scene.tracks,
        &graph,
        &k0,
        &SweepOptions::default(),
        &SolveOptions::default(),
    )?;
    for h in &r.history {
        println!(
            "iter {:2}: f {:7.1} -> {:7.1}  delta {:.4}  {:?}",
            h.iteration, h.focal, h.refined, h.delta, h.action
        );
    }
    println!(
        "focal {:.1} ({:.2}% error), converged {}",
        r.intrinsics.focal(),
        focal_error_pct(&r.intrinsics, &scene.intrinsics),
        r.converged
    );
    Ok(())
}
