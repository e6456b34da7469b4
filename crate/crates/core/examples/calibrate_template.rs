//! Recovers the camera of a single view from its template, starting from a
//! default guess.

use isonrsfm::calib::template::{calibrate_with_template, TemplateCalibOptions};
use isonrsfm::error::Result;
use isonrsfm::geometry::{Intrinsics, NeighborGraph, DEFAULT_K};
use isonrsfm::reconstruct::SolveOptions;
use isonrsfm::synth::{focal_error_pct, generate, principal_point_error_pct, SceneConfig};

fn main() -> Result<()> {
    let scene = generate(&SceneConfig {
        views: 1,
        ..Default::default()
    })?;
    let graph = NeighborGraph::build_default(&scene.tracks, DEFAULT_K)?;
    let template = scene.template(&graph);
    let k_hat = Intrinsics::default_guess(scene.intrinsics.width, scene.intrinsics.height)?;
    let r = calibrate_with_template(
        &scene.tracks,
        &graph,
        &template,
        &k_hat,
        &TemplateCalibOptions::default(),
        &SolveOptions::default(),
    )?;
    for (i, step) in r.steps.iter().enumerate() {
        println!(
            "outer {i}: start f {:.1}, refined f {:.1}, delta {:.4}",
            step.start.focal(),
            step.refined.intrinsics.focal(),
            step.delta
        );
    }
    let k = r.intrinsics;
    println!(
        "fx {:.1} fy {:.1} cx {:.1} cy {:.1}",
        k.fx, k.fy, k.cx, k.cy
    );
    println!(
        "focal error {:.2}%, principal point error {:.2}% of diagonal",
        focal_error_pct(&k, &scene.intrinsics),
        principal_point_error_pct(&k, &scene.intrinsics)
    );
    Ok(())
}
