//! Command-line driver: strict run configuration, subcommands and the
//! machine-readable run report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::calib::template::{calibrate_with_template, TemplateCalibOptions};
use crate::calib::templateless::{calibrate_without_template, SweepOptions};
use crate::error::{Error, Result};
use crate::geometry::{DepthField, Intrinsics, NeighborGraph, Reconstruction, TrackSet, DEFAULT_K};
use crate::incremental::{
    add_points, add_views, densify, joint_graph, AugmentProblem, DensifyOptions, LengthAggregate,
};
use crate::io::{self, bundle, SceneManifest};
use crate::reconstruct::{
    reconstruct_nrsfm, reconstruct_sft, NrsfmProblem, SftProblem, SolveOptions,
};
use crate::synth::{evaluate_against, generate, Alignment, SceneConfig};

/// Every tunable of a run. Loaded from JSON with unknown keys rejected;
/// command-line flags override it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tracks: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub output: PathBuf,
    /// `[width, height]`, used for the default camera when no intrinsics
    /// file is given.
    pub image_size: Option<[f64; 2]>,
    /// Neighbors per point.
    pub k: usize,
    /// Source of all randomness: scene noise, hypothesis sampling and
    /// densification order.
    pub seed: u64,
    pub solver: SolveOptions,
    pub sweep: SweepOptions,
    pub template_calibration: TemplateCalibOptions,
    pub densify: DensifyOptions,
    pub calibrate_new_views: bool,
    pub self_template: LengthAggregate,
    pub scene: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tracks: None,
            intrinsics: None,
            template: None,
            output: PathBuf::from("out"),
            image_size: None,
            k: DEFAULT_K,
            seed: 0,
            solver: SolveOptions::default(),
            sweep: SweepOptions::default(),
            template_calibration: TemplateCalibOptions::default(),
            densify: DensifyOptions::default(),
            calibrate_new_views: false,
            self_template: LengthAggregate::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), e.line())))
    }

    /// Range checks, and the single seed copied into every consumer.
    pub fn resolve(mut self) -> Result<Self> {
        if !(1..=64).contains(&self.k) {
            return Err(Error::Config(format!("k = {} outside [1, 64]", self.k)));
        }
        if let Some([w, h]) = self.image_size {
            if !(w > 0.0 && h > 0.0) {
                return Err(Error::Config(format!(
                    "image size {w}x{h} must be positive"
                )));
            }
        }
        for (name, s) in [
            ("scene", self.scene.seed),
            ("template_calibration", self.template_calibration.seed),
            ("densify", self.densify.seed),
        ] {
            if s != 0 && s != self.seed {
                return Err(Error::Config(format!(
                    "{name}.seed is set; use the top-level seed"
                )));
            }
        }
        self.scene.seed = self.seed;
        self.template_calibration.seed = self.seed;
        self.densify.seed = self.seed;
        self.densify.k = self.k;
        self.solver.validate()?;
        self.sweep.validate()?;
        self.template_calibration.validate()?;
        self.densify.validate()?;
        Ok(self)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "isonrsfm",
    version,
    about = "Isometric non-rigid structure-from-motion with camera self-calibration"
)]
pub struct Cli {
    /// JSON run configuration (unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and report.json.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Cone solver backend: clarabel or reference.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Seed of all randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Neighbors per point.
    #[arg(long, short, global = true)]
    pub k: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Inputs {
    /// Tracks CSV `view,point,x,y,visible`.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Intrinsics JSON; without it the default camera is used.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Template CSV `i,j,d`.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Image size `WIDTHxHEIGHT` for the default camera.
    #[arg(long, value_parser = parse_size)]
    pub image: Option<[f64; 2]>,
}

fn parse_size(s: &str) -> std::result::Result<[f64; 2], String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([p(w)?, p(h)?])
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignArg {
    None,
    GlobalScale,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Synth {
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Template-less batch reconstruction.
    Reconstruct(Inputs),
    /// Reconstruction from a known template.
    Sft(Inputs),
    /// Full intrinsics from a template.
    CalibrateTemplate(Inputs),
    /// Focal length without a template.
    Calibrate(Inputs),
    /// Add the points missing from a base reconstruction.
    AddPoints {
        #[command(flatten)]
        inputs: Inputs,
        /// Directory holding depths.csv and intrinsics.json of the base.
        #[arg(long)]
        base: PathBuf,
    },
    /// Add views against a template measured on a base reconstruction.
    AddViews {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        base: PathBuf,
        /// Tracks CSV of the new views over the same points.
        #[arg(long)]
        new_tracks: PathBuf,
        /// Calibrate the new views first.
        #[arg(long)]
        calibrate: bool,
    },
    /// Seed reconstruction plus batches of added points, with checkpoints.
    Densify {
        #[command(flatten)]
        inputs: Inputs,
        /// Points in the seed reconstruction (default: max(150, N/4)).
        #[arg(long)]
        seed_size: Option<usize>,
        /// Points added per stage.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Compare a reconstruction with the ground truth of a scene bundle.
    Eval {
        /// Directory holding depths.csv and intrinsics.json.
        #[arg(long)]
        recon: PathBuf,
        /// Scene bundle directory.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "global-scale")]
        align: AlignArg,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synth { .. } => "synth",
            Self::Reconstruct(_) => "reconstruct",
            Self::Sft(_) => "sft",
            Self::CalibrateTemplate(_) => "calibrate-template",
            Self::Calibrate(_) => "calibrate",
            Self::AddPoints { .. } => "add-points",
            Self::AddViews { .. } => "add-views",
            Self::Densify { .. } => "densify",
            Self::Eval { .. } => "eval",
        }
    }

    fn inputs(&self) -> Option<&Inputs> {
        match self {
            Self::Reconstruct(i)
            | Self::Sft(i)
            | Self::CalibrateTemplate(i)
            | Self::Calibrate(i) => Some(i),
            Self::AddPoints { inputs, .. }
            | Self::AddViews { inputs, .. }
            | Self::Densify { inputs, .. } => Some(inputs),
            _ => None,
        }
    }
}

/// The effective configuration: file, then flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(b) = &cli.backend {
        cfg.solver.backend = b.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    if let Some(i) = cli.command.inputs() {
        cfg.tracks = i.tracks.clone().or(cfg.tracks);
        cfg.intrinsics = i.intrinsics.clone().or(cfg.intrinsics);
        cfg.template = i.template.clone().or(cfg.template);
        cfg.image_size = i.image.or(cfg.image_size);
    }
    match &cli.command {
        Command::Synth { noise, views } => {
            if let Some(n) = noise {
                cfg.scene.noise = *n;
            }
            if let Some(v) = views {
                cfg.scene.views = *v;
            }
        }
        Command::AddViews {
            calibrate: true, ..
        } => cfg.calibrate_new_views = true,
        Command::Densify {
            seed_size,
            batch_size,
            ..
        } => {
            if seed_size.is_some() {
                cfg.densify.seed_size = *seed_size;
            }
            if let Some(b) = batch_size {
                cfg.densify.batch_size = *b;
            }
        }
        _ => {}
    }
    cfg.resolve()
}

#[derive(Debug, Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

/// Git-style content hash: SHA-256 of `blob <len>\0<content>`.
fn content_hash(path: &Path) -> Result<InputHash> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", data.len()));
    h.update(&data);
    let digest = h.finalize();
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Files read by a run, recorded as they are opened.
#[derive(Default)]
struct Session {
    inputs: Vec<InputHash>,
    artifacts: Vec<PathBuf>,
}

impl Session {
    fn read(&mut self, path: &Path) -> Result<PathBuf> {
        self.inputs.push(content_hash(path)?);
        Ok(path.to_path_buf())
    }

    fn wrote(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.artifacts.extend(paths);
    }
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    kind: &'static str,
    message: String,
    exit_code: i32,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    status: &'a str,
    config: &'a RunConfig,
    inputs: &'a [InputHash],
    artifacts: Vec<String>,
    total_seconds: f64,
    result: Value,
    error: Option<ErrorReport>,
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("no {what} file given")))
}

fn load_tracks(cfg: &RunConfig, s: &mut Session) -> Result<TrackSet> {
    io::read_tracks(&s.read(need(&cfg.tracks, "tracks")?)?)
}

/// Intrinsics file, else the default camera for the configured image size
/// or for the scene bundle the tracks belong to.
fn load_intrinsics(cfg: &RunConfig, s: &mut Session) -> Result<Intrinsics> {
    if let Some(p) = &cfg.intrinsics {
        return io::read_intrinsics(&s.read(p)?);
    }
    let size = match cfg.image_size {
        Some(sz) => sz,
        None => {
            let manifest = cfg
                .tracks
                .as_ref()
                .and_then(|t| t.parent())
                .map(|d| d.join(bundle::MANIFEST))
                .filter(|m| m.exists())
                .ok_or_else(|| {
                    Error::Config(
                        "no intrinsics file and no image size for the default camera".into(),
                    )
                })?;
            let m: SceneManifest = io::read_json(&s.read(&manifest)?)?;
            [m.config.width, m.config.height]
        }
    };
    let k = Intrinsics::default_guess(size[0], size[1])?;
    log::info!(
        "default camera: focal {} px, principal point at the image center",
        k.fx
    );
    Ok(k)
}

fn load_base(dir: &Path, tracks: &TrackSet, s: &mut Session) -> Result<DepthField> {
    let k = io::read_intrinsics(&s.read(&dir.join("intrinsics.json"))?)?;
    io::read_depths(&s.read(&dir.join("depths.csv"))?, tracks, &k)
}

/// Depths, intrinsics and one PLY per view.
fn write_reconstruction(out: &Path, recon: &Reconstruction, s: &mut Session) -> Result<()> {
    let d = out.join("depths.csv");
    io::write_depths(&d, recon.depths())?;
    let k = out.join("intrinsics.json");
    io::write_intrinsics(&k, recon.intrinsics())?;
    s.wrote([d, k]);
    s.wrote(io::write_reconstruction(out, recon)?);
    Ok(())
}

fn write_json_artifact<T: Serialize>(out: &Path, name: &str, v: &T, s: &mut Session) -> Result<()> {
    let p = out.join(name);
    io::write_json(&p, v)?;
    s.wrote([p]);
    Ok(())
}

fn view_counts(field: &DepthField) -> Vec<usize> {
    (0..field.num_views())
        .map(|l| field.view_depths(l).iter().flatten().count())
        .collect()
}

fn execute(cmd: &Command, cfg: &RunConfig, s: &mut Session) -> Result<Value> {
    let out = &cfg.output;
    let solve = &cfg.solver;
    match cmd {
        Command::Synth { .. } => {
            let scene = generate(&cfg.scene)?;
            io::write_scene(out, &scene, cfg.k)?;
            s.wrote(
                [
                    bundle::TRACKS,
                    bundle::INTRINSICS,
                    bundle::GT_DEPTHS,
                    bundle::TEMPLATE,
                    bundle::MANIFEST,
                ]
                .map(|f| out.join(f)),
            );
            Ok(json!({
                "num_views": scene.num_views(),
                "num_points": scene.num_points(),
                "mean_depth": scene.mean_depth(),
                "isometry_defect": scene.isometry_defect(),
            }))
        }
        Command::Reconstruct(_) => {
            let tracks = load_tracks(cfg, s)?;
            let k = load_intrinsics(cfg, s)?;
            let graph = NeighborGraph::build_default(&tracks, cfg.k)?;
            let sol = reconstruct_nrsfm(&NrsfmProblem::new(&tracks, &graph, &k)?, solve)?;
            let lengths = out.join("lengths.csv");
            io::write_template(&lengths, &graph, &sol.lengths)?;
            s.wrote([lengths]);
            let budget = (sol.lengths.directed_sum() - 1.0).abs();
            let objective = sol.objective();
            let counts = view_counts(&sol.depths);
            write_reconstruction(out, &Reconstruction::new(sol.depths, &tracks)?, s)?;
            Ok(json!({
                "objective": objective,
                "budget_residual": budget,
                "view_points": counts,
                "dropped_edges": sol.dropped_edges,
                "solver": sol.stats,
            }))
        }
        Command::Sft(_) => {
            let tracks = load_tracks(cfg, s)?;
            let k = load_intrinsics(cfg, s)?;
            let graph = NeighborGraph::build_default(&tracks, cfg.k)?;
            let template = io::read_template(&s.read(need(&cfg.template, "template")?)?, &graph)?;
            let sol = reconstruct_sft(&SftProblem::new(&tracks, &graph, &template, &k)?, solve)?;
            let objective = sol.objective();
            let counts = view_counts(&sol.depths);
            write_reconstruction(out, &Reconstruction::new(sol.depths, &tracks)?, s)?;
            Ok(json!({ "objective": objective, "view_points": counts, "solver": sol.stats }))
        }
        Command::CalibrateTemplate(_) => {
            let tracks = load_tracks(cfg, s)?;
            let k_hat = load_intrinsics(cfg, s)?;
            let graph = NeighborGraph::build_default(&tracks, cfg.k)?;
            let template = io::read_template(&s.read(need(&cfg.template, "template")?)?, &graph)?;
            let rep = calibrate_with_template(
                &tracks,
                &graph,
                &template,
                &k_hat,
                &cfg.template_calibration,
                solve,
            )?;
            write_json_artifact(out, "calibration.json", &rep, s)?;
            let sol = reconstruct_sft(
                &SftProblem::new(&tracks, &graph, &template, &rep.intrinsics)?,
                solve,
            )?;
            write_reconstruction(out, &Reconstruction::new(sol.depths, &tracks)?, s)?;
            Ok(json!({
                "initial": k_hat,
                "intrinsics": rep.intrinsics,
                "outer_iterations": rep.steps.len(),
                "converged": rep.converged,
            }))
        }
        Command::Calibrate(_) => {
            let tracks = load_tracks(cfg, s)?;
            let k0 = load_intrinsics(cfg, s)?;
            let graph = NeighborGraph::build_default(&tracks, cfg.k)?;
            let rep = calibrate_without_template(&tracks, &graph, &k0, &cfg.sweep, solve)?;
            write_json_artifact(out, "sweep.json", &rep, s)?;
            let sol =
                reconstruct_nrsfm(&NrsfmProblem::new(&tracks, &graph, &rep.intrinsics)?, solve)?;
            write_reconstruction(out, &Reconstruction::new(sol.depths, &tracks)?, s)?;
            Ok(json!({
                "initial": k0,
                "intrinsics": rep.intrinsics,
                "iterations": rep.history.len(),
                "converged": rep.converged,
            }))
        }
        Command::AddPoints { base, .. } => {
            let tracks = load_tracks(cfg, s)?;
            let field = load_base(base, &tracks, s)?;
            let np = tracks.num_points();
            let placed: Vec<bool> = (0..np)
                .map(|i| (0..tracks.num_views()).any(|l| field.depth(l, i).is_some()))
                .collect();
            let added: Vec<usize> = (0..np).filter(|&i| !placed[i]).collect();
            let graph = joint_graph(&tracks, &placed, &added, cfg.k)?;
            let sol = add_points(
                &AugmentProblem::new(&tracks, &graph, &field, &placed, &added)?,
                solve,
            )?;
            write_reconstruction(out, &Reconstruction::new(sol.depths, &tracks)?, s)?;
            Ok(json!({
                "added_points": added.len(),
                "alpha": sol.alpha,
                "objective": sol.objective,
                "new_edges": sol.new_edges.len(),
                "max_violation": sol.max_violation,
                "budget_residual": sol.budget_residual,
                "solver": sol.stats,
            }))
        }
        Command::AddViews {
            base, new_tracks, ..
        } => {
            let tracks = load_tracks(cfg, s)?;
            let field = load_base(base, &tracks, s)?;
            let new = io::read_tracks(&s.read(new_tracks)?)?;
            let k = match &cfg.intrinsics {
                Some(p) => io::read_intrinsics(&s.read(p)?)?,
                None => *field.intrinsics(),
            };
            let graph = NeighborGraph::build_default(&tracks, cfg.k)?;
            let recon = Reconstruction::new(field, &tracks)?;
            let calib = cfg.calibrate_new_views.then_some(&cfg.template_calibration);
            let res = add_views(&recon, &graph, &new, &k, cfg.self_template, calib, solve)?;
            if let Some(rep) = &res.calibration {
                write_json_artifact(out, "calibration.json", rep, s)?;
            }
            let counts = view_counts(&res.depths);
            write_reconstruction(out, &Reconstruction::new(res.depths, &new)?, s)?;
            Ok(json!({
                "intrinsics": res.intrinsics,
                "view_points": counts,
                "excluded_edges": res.excluded_edges.len(),
            }))
        }
        Command::Densify { .. } => {
            let tracks = load_tracks(cfg, s)?;
            let k = load_intrinsics(cfg, s)?;
            let res = densify(&tracks, &k, &cfg.densify, solve, Some(out))?;
            let kp = out.join("intrinsics.json");
            io::write_intrinsics(&kp, &k)?;
            s.wrote([kp, out.join("depths.csv"), out.join("checkpoint.json")]);
            s.wrote((0..tracks.num_views()).map(|l| out.join(format!("view_{l:03}.ply"))));
            let stages: Vec<Value> = res
                .stages
                .iter()
                .map(|st| json!({ "stage": st.stage, "points": st.points.len(), "alpha": st.alpha, "solve_seconds": st.solve_seconds }))
                .collect();
            Ok(json!({ "stages": stages }))
        }
        Command::Eval {
            recon,
            truth,
            align,
        } => {
            let tracks = io::read_tracks(&s.read(&truth.join(bundle::TRACKS))?)?;
            let gt_k = io::read_intrinsics(&s.read(&truth.join(bundle::INTRINSICS))?)?;
            let gt = io::read_depths(&s.read(&truth.join(bundle::GT_DEPTHS))?, &tracks, &gt_k)?;
            let est = load_base(recon, &tracks, s)?;
            let align = match align {
                AlignArg::None => Alignment::None,
                AlignArg::GlobalScale => Alignment::GlobalScale,
            };
            let m = evaluate_against(
                &Reconstruction::new(est, &tracks)?,
                &Reconstruction::new(gt, &tracks)?,
                align,
            )?;
            write_json_artifact(out, "metrics.json", &m, s)?;
            Ok(serde_json::to_value(&m).expect("metrics serialize"))
        }
    }
}

/// Runs one subcommand and writes `report.json`. Returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let start = Instant::now();
    let name = cli.command.name();
    let cfg = match effective_config(cli) {
        Ok(c) => c,
        Err(e) => {
            let err = ErrorReport {
                kind: e.kind(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
            eprintln!(
                "{}",
                serde_json::to_string_pretty(
                    &json!({ "command": name, "status": "error", "error": err })
                )
                .expect("json")
            );
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let mut session = Session::default();
    let outcome = execute(&cli.command, &cfg, &mut session);
    let (status, result, error, code) = match outcome {
        Ok(v) => ("ok", v, None, 0),
        Err(e) => {
            let code = e.exit_code();
            (
                "error",
                Value::Null,
                Some(ErrorReport {
                    kind: e.kind(),
                    message: e.to_string(),
                    exit_code: code,
                }),
                code,
            )
        }
    };
    let report = Report {
        command: name,
        status,
        config: &cfg,
        inputs: &session.inputs,
        artifacts: session
            .artifacts
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        total_seconds: start.elapsed().as_secs_f64(),
        result,
        error,
    };
    let path = cfg.output.join("report.json");
    if let Err(e) = io::write_json(&path, &report) {
        eprintln!("could not write {}: {e}", path.display());
    }
    if code != 0 {
        eprintln!(
            "{}",
            serde_json::to_string_pretty(
                &json!({ "command": name, "status": status, "error": report.error })
            )
            .expect("json")
        );
    } else {
        println!("{}", path.display());
    }
    code
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    run(&cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("isonrsfm").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"k": 6, "colour": 1}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        fs::write(&p, r#"{"k": 6, "solver": {"tol": 1e-8}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!((c.k, c.solver.tol), (6, 1e-8));
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        let bad = [
            RunConfig {
                k: 0,
                ..Default::default()
            },
            RunConfig {
                solver: SolveOptions {
                    backend: "nope".into(),
                    ..Default::default()
                },
                ..Default::default()
            },
            RunConfig {
                image_size: Some([0.0, 10.0]),
                ..Default::default()
            },
        ];
        for c in bad {
            assert_eq!(c.clone().resolve().unwrap_err().exit_code(), 2, "{c:?}");
        }
    }

    #[test]
    fn one_seed_feeds_everything() {
        let c = RunConfig {
            seed: 7,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(
            (c.scene.seed, c.template_calibration.seed, c.densify.seed),
            (7, 7, 7)
        );
        let mut clash = RunConfig {
            seed: 7,
            ..Default::default()
        };
        clash.densify.seed = 3;
        assert!(clash.resolve().is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let c = effective_config(&cli(&[
            "--backend",
            "reference",
            "-k",
            "5",
            "densify",
            "--tracks",
            "t.csv",
            "--batch-size",
            "40",
        ]))
        .unwrap();
        assert_eq!(c.solver.backend, "reference");
        assert_eq!((c.k, c.densify.k, c.densify.batch_size), (5, 5, 40));
        assert_eq!(c.tracks, Some(PathBuf::from("t.csv")));
    }

    #[test]
    fn content_hash_is_git_blob_style() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"hello\n").unwrap();
        // sha256 of "blob 6\0hello\n"
        let h = content_hash(&p).unwrap().sha256;
        let mut d = Sha256::new();
        d.update(b"blob 6\0hello\n");
        assert_eq!(
            h,
            d.finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        );
    }
}
