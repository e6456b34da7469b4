use isonrsfm::geometry::{DepthField, NeighborGraph, Reconstruction};
use isonrsfm::incremental::{
    add_points, add_views, densify, densify_plan, joint_graph, AugmentProblem, DensifyOptions,
    LengthAggregate,
};
use isonrsfm::reconstruct::{
    reconstruct_nrsfm, reconstruct_sft, NrsfmProblem, SftProblem, SolveOptions,
};
use isonrsfm::synth::{evaluate, generate, Alignment, SceneConfig, SyntheticScene};

fn batch_error(scene: &SyntheticScene, opts: &SolveOptions) -> f64 {
    let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
    let b = reconstruct_nrsfm(
        &NrsfmProblem::new(&scene.tracks, &g, &scene.intrinsics).unwrap(),
        opts,
    )
    .unwrap();
    let r = Reconstruction::new(b.depths, &scene.tracks).unwrap();
    evaluate(&r, scene, Alignment::GlobalScale)
        .unwrap()
        .relative_error
}

#[test]
fn hundred_plus_fifty_matches_batch() {
    let opts = SolveOptions::default();
    let scene = generate(&SceneConfig::default()).unwrap();
    let eb = batch_error(&scene, &opts);
    let d = DensifyOptions {
        seed_size: Some(100),
        batch_size: 50,
        ..Default::default()
    };
    let r = densify(&scene.tracks, &scene.intrinsics, &d, &opts, None).unwrap();
    assert_eq!(r.stages.len(), 2);
    let ei = evaluate(&r.reconstruction, &scene, Alignment::GlobalScale)
        .unwrap()
        .relative_error;
    assert!(ei <= 1.2 * eb, "incremental {ei} vs batch {eb}");
}

#[test]
fn batch_order_barely_matters() {
    let opts = SolveOptions::default();
    let scene = generate(&SceneConfig::default()).unwrap();
    let tracks = &scene.tracks;
    let d = DensifyOptions {
        seed_size: Some(60),
        batch_size: 30,
        ..Default::default()
    };
    let plan = densify_plan(tracks, &d).unwrap();
    let seed_tracks = tracks.select_points(&plan[0]).unwrap();
    let sg = NeighborGraph::build_default(&seed_tracks, 8).unwrap();
    let base = reconstruct_nrsfm(
        &NrsfmProblem::new(&seed_tracks, &sg, &scene.intrinsics).unwrap(),
        &opts,
    )
    .unwrap();
    let (n, nv) = (tracks.num_points(), tracks.num_views());
    let mut depth = vec![None; nv * n];
    for l in 0..nv {
        for (s, &i) in plan[0].iter().enumerate() {
            depth[l * n + i] = base.depths.depth(l, s);
        }
    }
    let seed_field = DepthField::new(tracks, scene.intrinsics, depth).unwrap();
    let run = |order: &[usize]| -> f64 {
        let mut field = seed_field.clone();
        let mut placed = vec![false; n];
        for &i in &plan[0] {
            placed[i] = true;
        }
        for &b in order {
            let g = joint_graph(tracks, &placed, &plan[b], 8).unwrap();
            let sol = add_points(
                &AugmentProblem::new(tracks, &g, &field, &placed, &plan[b]).unwrap(),
                &opts,
            )
            .unwrap();
            field = sol.depths;
            for &q in &plan[b] {
                placed[q] = true;
            }
        }
        let r = Reconstruction::new(field, tracks).unwrap();
        evaluate(&r, &scene, Alignment::GlobalScale)
            .unwrap()
            .relative_error
    };
    let forward: Vec<usize> = (1..plan.len()).collect();
    let backward: Vec<usize> = forward.iter().rev().copied().collect();
    let (a, b) = (run(&forward), run(&backward));
    assert!(
        (a - b).abs() < 0.1 * a.min(b),
        "forward {a} vs backward {b}"
    );
}

#[test]
fn new_camera_view_matches_ground_truth() {
    let opts = SolveOptions::default();
    let cfg = SceneConfig::default();
    let scene = generate(&cfg).unwrap();
    // same shapes and poses seen through a longer lens
    let other = generate(&SceneConfig {
        focal: 650.0,
        ..cfg
    })
    .unwrap();
    let g = NeighborGraph::build_default(&scene.tracks, 8).unwrap();
    let tm = scene.template(&g);
    let sol = reconstruct_sft(
        &SftProblem::new(&scene.tracks, &g, &tm, &scene.intrinsics).unwrap(),
        &opts,
    )
    .unwrap();
    let recon = Reconstruction::new(sol.depths, &scene.tracks).unwrap();
    let view = other.tracks.select_views(&[4]).unwrap();
    let added = add_views(
        &recon,
        &g,
        &view,
        &other.intrinsics,
        LengthAggregate::default(),
        None,
        &opts,
    )
    .unwrap();
    let (mut err, mut cnt) = (0.0, 0);
    for i in view.visible_points(0) {
        let x = other.intrinsics.ray(view.raw_pixel(0, i)) * added.depths.depth(0, i).unwrap();
        err += (x - other.point(4, i)).norm();
        cnt += 1;
    }
    let rel = err / cnt as f64 / other.mean_depth();
    assert!(rel < 0.01, "relative error {rel}");
}
