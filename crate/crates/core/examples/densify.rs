//! Reconstructs a 600-point scene from a seed and point batches, writing a
//! resumable checkpoint after each stage.

use isonrsfm::error::Result;
use isonrsfm::incremental::{densify, DensifyOptions};
use isonrsfm::reconstruct::SolveOptions;
use isonrsfm::synth::{evaluate, generate, Alignment, SceneConfig};

fn main() -> Result<()> {
    let scene = generate(&SceneConfig::with_points(30, 20))?;
    let dir = std::env::temp_dir().join("isonrsfm-densify");
    let opts = DensifyOptions {
        seed_size: Some(150),
        batch_size: 150,
        ..Default::default()
    };
    let r = densify(
        &scene.tracks,
        &scene.intrinsics,
        &opts,
        &SolveOptions::default(),
        Some(&dir),
    )?;
    for s in &r.stages {
        println!(
            "stage {}: {} points, alpha {:.4}, {:.2} s",
            s.stage,
            s.points.len(),
            s.alpha,
            s.solve_seconds
        );
    }
    let m = evaluate(&r.reconstruction, &scene, Alignment::GlobalScale)?;
    println!(
        "relative error {:.3}%, checkpoint in {}",
        100.0 * m.relative_error,
        dir.display()
    );
    Ok(())
}
