//! Invariant properties shared by the property suite and the acceptance run.

use isonrsfm::calib::template::gamma_from_pair;
use isonrsfm::calib::templateless::{isometry_consistency, isometry_consistency_from_points};
use isonrsfm::geometry::{geodesics, DepthField, EdgeLengths, Intrinsics, NeighborGraph, TrackSet};
use isonrsfm::incremental::{add_points, joint_graph, AugmentProblem};
use isonrsfm::reconstruct::{
    max_cone_violation, reconstruct_nrsfm, reconstruct_sft, NrsfmProblem, SftProblem, SolveOptions,
};
use isonrsfm::synth::{generate, SceneConfig, SyntheticScene};
use isonrsfm::upgrade::{upgrade_depths, DistanceMode};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scene(seed: u64, views: usize, noise: f64) -> SyntheticScene {
    generate(&SceneConfig {
        views,
        seed,
        noise,
        ..SceneConfig::with_points(6, 5)
    })
    .unwrap()
}

fn gt_field(scene: &SyntheticScene) -> DepthField {
    DepthField::new(&scene.tracks, scene.intrinsics, scene.depths()).unwrap()
}

fn camera() -> impl Strategy<Value = Intrinsics> {
    (
        200.0..900.0f64,
        0.8..1.2f64,
        -20.0..20.0f64,
        250.0..390.0f64,
        180.0..300.0f64,
    )
        .prop_map(|(f, aspect, skew, cx, cy)| {
            Intrinsics::new(f, f * aspect, skew, cx, cy, 640.0, 480.0).unwrap()
        })
}

fn max_length(t: &EdgeLengths) -> f64 {
    t.as_slice().iter().fold(0.0, |a, &b| a.max(b))
}

fn random_tracks(seed: u64, views: usize, points: usize) -> TrackSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixel = (0..views * points)
        .map(|_| [rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)])
        .collect();
    // view 0 sees everything so the graph always exists
    let visible = (0..views * points)
        .map(|idx| idx < points || rng.gen_bool(0.7))
        .collect();
    TrackSet::new(views, points, pixel, visible).unwrap()
}

fn floyd_warshall(graph: &NeighborGraph, lengths: &EdgeLengths) -> Vec<Vec<f64>> {
    let n = graph.num_points();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        d[i][j] = d[i][j].min(lengths.get(e));
        d[j][i] = d[i][j];
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][m] + d[m][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Runs `cases` random cases of a property.
fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    property: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new(config)
        .run(&strategy, property)
        .map_err(|e| e.to_string())
}

/// Every property with its name.
pub const ALL: &[(&str, fn() -> Result<(), String>)] = &[
    ("gamma_is_at_least_one", gamma_is_at_least_one),
    (
        "gamma_inverts_sightline_angle",
        gamma_inverts_sightline_angle,
    ),
    ("upgrade_keeps_ranges", upgrade_keeps_ranges),
    (
        "consistency_is_nonnegative_and_path_independent",
        consistency_is_nonnegative_and_path_independent,
    ),
    ("graph_is_symmetric", graph_is_symmetric),
    (
        "dijkstra_matches_floyd_warshall",
        dijkstra_matches_floyd_warshall,
    ),
    (
        "template_solutions_satisfy_cones",
        template_solutions_satisfy_cones,
    ),
    (
        "template_scaling_scales_depths",
        template_scaling_scales_depths,
    ),
    (
        "nrsfm_solutions_satisfy_cones",
        nrsfm_solutions_satisfy_cones,
    ),
    ("added_points_satisfy_cones", added_points_satisfy_cones),
];

pub fn gamma_is_at_least_one() -> Result<(), String> {
    check(
        64,
        (1e-3..10.0f64, 1e-3..10.0f64, 0.0..20.0f64),
        |(ai, aj, d)| {
            if let Ok(g) = gamma_from_pair(ai, aj, d) {
                prop_assert!(g >= 1.0);
            }
            Ok(())
        },
    )
}

pub fn gamma_inverts_sightline_angle() -> Result<(), String> {
    check(
        64,
        (0.1..10.0f64, 0.1..10.0f64, 0.0..1.5f64),
        |(ai, aj, theta)| {
            let d = (ai * ai + aj * aj - 2.0 * ai * aj * theta.cos())
                .max(0.0)
                .sqrt();
            let g = gamma_from_pair(ai, aj, d).unwrap();
            prop_assert!(g >= 1.0);
            prop_assert!((g * theta.cos().powi(2) - 1.0).abs() < 1e-8);
            Ok(())
        },
    )
}

pub fn upgrade_keeps_ranges() -> Result<(), String> {
    check(64, (0u64..1000, camera()), |(seed, k)| {
        let scene = small_scene(seed, 3, 0.5);
        let field = gt_field(&scene);
        let up = upgrade_depths(&field, &scene.tracks, &k).unwrap();
        prop_assert_eq!(up.intrinsics(), &k);
        for (a, b) in field.ranges().iter().zip(up.ranges()) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs()),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
        Ok(())
    })
}

pub fn consistency_is_nonnegative_and_path_independent() -> Result<(), String> {
    check(
        64,
        (0u64..1000, camera(), any::<bool>()),
        |(seed, k, geodesic)| {
            let scene = small_scene(seed, 3, 0.5);
            let g = NeighborGraph::build_default(&scene.tracks, 6).unwrap();
            let field = gt_field(&scene);
            let mode = if geodesic {
                DistanceMode::Geodesic
            } else {
                DistanceMode::Euclidean
            };
            let a = isometry_consistency(&k, &field, &scene.tracks, &g, mode).unwrap();
            let b = isometry_consistency_from_points(&k, &field, &scene.tracks, &g, mode).unwrap();
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!((a - b).abs() <= 1e-10 * a.max(b).max(1.0), "{} vs {}", a, b);
            Ok(())
        },
    )
}

pub fn graph_is_symmetric() -> Result<(), String> {
    check(
        64,
        (0u64..1000, 1usize..4, 10usize..40, 1usize..6),
        |(seed, views, points, k)| {
            let tracks = random_tracks(seed, views, points);
            let g = NeighborGraph::build(&tracks, k, 0).unwrap();
            for i in 0..points {
                prop_assert!(g.neighbors(i).len() >= k);
                for &j in g.neighbors(i) {
                    prop_assert!(g.neighbors(j).contains(&i));
                    prop_assert_eq!(g.edge_index(i, j), g.edge_index(j, i));
                    prop_assert!(g.edge_index(i, j).is_some());
                }
            }
            for (e, &(i, j)) in g.edges().iter().enumerate() {
                prop_assert!(i < j);
                prop_assert_eq!(g.edge_index(i, j), Some(e));
            }
            Ok(())
        },
    )
}

pub fn dijkstra_matches_floyd_warshall() -> Result<(), String> {
    check(
        64,
        (0u64..1000, 5usize..30, 1usize..4),
        |(seed, points, k)| {
            let tracks = random_tracks(seed, 1, points);
            let g = NeighborGraph::build(&tracks, k, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let lengths = EdgeLengths::new(
                (0..g.num_edges())
                    .map(|_| rng.gen_range(0.01..1.0))
                    .collect(),
            )
            .unwrap();
            let sources: Vec<usize> = (0..points).collect();
            let table = geodesics(&g, &lengths, &sources);
            let fw = floyd_warshall(&g, &lengths);
            for i in 0..points {
                for j in 0..points {
                    match table.get(i, j) {
                        Some(d) => prop_assert!((d - fw[i][j]).abs() <= 1e-12 * fw[i][j].max(1.0)),
                        None => prop_assert!(fw[i][j].is_infinite()),
                    }
                }
            }
            Ok(())
        },
    )
}

pub fn template_solutions_satisfy_cones() -> Result<(), String> {
    check(
        12,
        (0u64..1000, 1usize..4, 0.0..1.0f64),
        |(seed, views, noise)| {
            let opts = SolveOptions::default();
            let scene = small_scene(seed, views, noise);
            let g = NeighborGraph::build_default(&scene.tracks, 6).unwrap();
            let tm = scene.template(&g);
            let sol = reconstruct_sft(
                &SftProblem::new(&scene.tracks, &g, &tm, &scene.intrinsics).unwrap(),
                &opts,
            )
            .unwrap();
            let v = max_cone_violation(&scene.tracks, &g, &sol.depths, &tm);
            prop_assert!(v <= 10.0 * opts.tol * max_length(&tm), "violation {}", v);
            Ok(())
        },
    )
}

pub fn template_scaling_scales_depths() -> Result<(), String> {
    check(12, (0u64..1000, 0.2..5.0f64), |(seed, s)| {
        let opts = SolveOptions::default();
        let scene = small_scene(seed, 2, 0.5);
        let g = NeighborGraph::build_default(&scene.tracks, 6).unwrap();
        let tm = scene.template(&g);
        let ts = tm.scaled(s);
        let a = reconstruct_sft(
            &SftProblem::new(&scene.tracks, &g, &tm, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        let b = reconstruct_sft(
            &SftProblem::new(&scene.tracks, &g, &ts, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        for (x, y) in a.depths.depths().iter().zip(b.depths.depths()) {
            if let (Some(x), Some(y)) = (x, y) {
                prop_assert!(
                    (s * x - y).abs() <= 1e-5 * y.abs(),
                    "{} * {} vs {}",
                    s,
                    x,
                    y
                );
            }
        }
        Ok(())
    })
}

pub fn nrsfm_solutions_satisfy_cones() -> Result<(), String> {
    check(12, (0u64..1000, 0.0..1.0f64), |(seed, noise)| {
        let opts = SolveOptions::default();
        let scene = small_scene(seed, 3, noise);
        let g = NeighborGraph::build_default(&scene.tracks, 6).unwrap();
        let sol = reconstruct_nrsfm(
            &NrsfmProblem::new(&scene.tracks, &g, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        let v = max_cone_violation(&scene.tracks, &g, &sol.depths, &sol.lengths);
        prop_assert!(
            v <= 10.0 * opts.tol * max_length(&sol.lengths).max(1e-3),
            "violation {}",
            v
        );
        Ok(())
    })
}

pub fn added_points_satisfy_cones() -> Result<(), String> {
    check(12, (0u64..1000,), |(seed,)| {
        let opts = SolveOptions::default();
        let scene = small_scene(seed, 3, 0.5);
        let tracks = &scene.tracks;
        let n = tracks.num_points();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let placed: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let seed_pts: Vec<usize> = (0..n).filter(|&i| placed[i]).collect();
        let added: Vec<usize> = (0..n).filter(|&i| !placed[i]).collect();
        let sub = tracks.select_points(&seed_pts).unwrap();
        let sg = NeighborGraph::build_default(&sub, 6).unwrap();
        let base = reconstruct_nrsfm(
            &NrsfmProblem::new(&sub, &sg, &scene.intrinsics).unwrap(),
            &opts,
        )
        .unwrap();
        let mut depth = vec![None; tracks.num_views() * n];
        for l in 0..tracks.num_views() {
            for (s, &i) in seed_pts.iter().enumerate() {
                depth[l * n + i] = base.depths.depth(l, s);
            }
        }
        let field = DepthField::new(tracks, scene.intrinsics, depth).unwrap();
        let g = joint_graph(tracks, &placed, &added, 6).unwrap();
        let sol = add_points(
            &AugmentProblem::new(tracks, &g, &field, &placed, &added).unwrap(),
            &opts,
        )
        .unwrap();
        prop_assert!(sol.max_violation <= 1e-5, "violation {}", sol.max_violation);
        prop_assert!(
            sol.budget_residual <= 1e-6,
            "budget {}",
            sol.budget_residual
        );
        prop_assert!(sol.alpha >= -1e-9);
        for l in 0..tracks.num_views() {
            for &i in &seed_pts {
                if let (Some(a), Some(b)) = (field.depth(l, i), sol.depths.depth(l, i)) {
                    prop_assert!((sol.alpha * a - b).abs() <= 1e-9 * a.max(1.0));
                }
            }
        }
        Ok(())
    })
}
