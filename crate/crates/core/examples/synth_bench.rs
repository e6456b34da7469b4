//! Writes a synthetic benchmark bundle and reports the scene's statistics.

use isonrsfm::error::Result;
use isonrsfm::io::write_scene;
use isonrsfm::synth::{generate, generate_hinge_fold, SceneConfig};

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("isonrsfm-bench");
    let cfg = SceneConfig {
        noise: 0.5,
        ..Default::default()
    };
    for (name, scene) in [
        ("cylinder", generate(&cfg)?),
        ("hinge", generate_hinge_fold(&cfg)?),
    ] {
        let graph = write_scene(&dir.join(name), &scene, 8)?;
        println!(
            "{name}: {} views, {} points, {} edges, mean depth {:.3} m, isometry defect {:.2e}",
            scene.num_views(),
            scene.num_points(),
            graph.num_edges(),
            scene.mean_depth(),
            scene.isometry_defect()
        );
    }
    println!("bundles in {}", dir.display());
    Ok(())
}
