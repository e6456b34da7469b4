//! Calibration when the template edge lengths are known.
//!
//! Two points at ranges `aᵢ`, `aⱼ` and distance `d` subtend the sightline
//! angle `cos θ = (aᵢ² + aⱼ² − d²) / 2aᵢaⱼ`. With `γ = 1/cos²θ` every such
//! pair gives one quartic equation on the image of the absolute conic:
//! `uᵢᵀΩuᵢ · uⱼᵀΩuⱼ = γ (uᵢᵀΩuⱼ)²`. Five pairs fix Ω up to finitely many
//! solutions.

use std::cell::RefCell;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, Dyn, Matrix3, Matrix5, OMatrix, OVector, Vector3, Vector5, U5};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImageFrame;
use crate::error::{Error, Result};
use crate::geometry::{DepthField, EdgeLengths, Iac, Intrinsics, NeighborGraph, TrackSet};
use crate::reconstruct::{reconstruct_sft, SftProblem, SolveOptions};
use crate::upgrade::{unit_rays, upgrade_depths, view_distances, DistanceMode, PairSet};

/// `γ = (2aᵢaⱼ / (aᵢ² + aⱼ² − d²))²`.
pub fn gamma_from_pair(ai: f64, aj: f64, d: f64) -> Result<f64> {
    if !(ai > 0.0 && aj > 0.0 && d >= 0.0) {
        return Err(Error::RejectedPair(format!(
            "ranges ({ai}, {aj}) and length {d} must be positive"
        )));
    }
    let den = ai * ai + aj * aj - d * d;
    if den.abs() <= 1e-12 * (ai * ai + aj * aj) {
        return Err(Error::RejectedPair("sightlines at a right angle".into()));
    }
    let gamma = (2.0 * ai * aj / den).powi(2);
    if gamma < 1.0 - 1e-12 {
        return Err(Error::RejectedPair(format!(
            "ranges ({ai}, {aj}) and length {d} violate the triangle inequality"
        )));
    }
    Ok(gamma.max(1.0))
}

/// Two observed points with known ranges and template distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPair {
    pub i: usize,
    pub j: usize,
    pub ui: Vector3<f64>,
    pub uj: Vector3<f64>,
    pub ai: f64,
    pub aj: f64,
    pub d: f64,
    pub gamma: f64,
}

impl RigidPair {
    pub fn new(
        i: usize,
        j: usize,
        ui: Vector3<f64>,
        uj: Vector3<f64>,
        ai: f64,
        aj: f64,
        d: f64,
    ) -> Result<Self> {
        let gamma = gamma_from_pair(ai, aj, d)?;
        Ok(Self {
            i,
            j,
            ui,
            uj,
            ai,
            aj,
            d,
            gamma,
        })
    }

    /// Residual of the pair equation under the conic `omega`.
    pub fn residual(&self, omega: &Matrix3<f64>) -> f64 {
        let a = self.ui.dot(&(omega * self.ui));
        let b = self.uj.dot(&(omega * self.uj));
        let c = self.ui.dot(&(omega * self.uj));
        a * b - self.gamma * c * c
    }
}

/// Random starts per minimal solve.
pub const IAC_STARTS: usize = 20;
/// Acceptance threshold on every normalized pair residual.
pub const IAC_RESIDUAL_TOL: f64 = 1e-8;
const IAC_DEDUP: f64 = 1e-4;
const RANK_TOL: f64 = 1e-8;

/// One solution of the five-pair system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IacCandidate {
    pub iac: Iac,
    pub positive_definite: bool,
    /// The system Jacobian is numerically singular at this solution, so it
    /// is not isolated.
    pub rank_deficient: bool,
    pub residual: f64,
}

/// Derivative of `uᵀΩv` with respect to (ω11, ω12, ω13, ω22, ω23).
fn bilinear_grad(u: &Vector3<f64>, v: &Vector3<f64>) -> Vector5<f64> {
    Vector5::new(
        u.x * v.x,
        u.x * v.y + u.y * v.x,
        u.x * v.z + u.z * v.x,
        u.y * v.y,
        u.y * v.z + u.z * v.y,
    )
}

struct IacSystem {
    rows: Vec<(Vector3<f64>, Vector3<f64>, f64, f64)>,
    p: Vector5<f64>,
}

impl IacSystem {
    fn omega(&self) -> Matrix3<f64> {
        *Iac::from_params(&self.p.into()).matrix()
    }
}

impl LeastSquaresProblem<f64, U5, U5> for IacSystem {
    type ResidualStorage = Owned<f64, U5>;
    type JacobianStorage = Owned<f64, U5, U5>;
    type ParameterStorage = Owned<f64, U5>;

    fn set_params(&mut self, p: &Vector5<f64>) {
        self.p = *p;
    }

    fn params(&self) -> Vector5<f64> {
        self.p
    }

    fn residuals(&self) -> Option<Vector5<f64>> {
        let w = self.omega();
        Some(Vector5::from_fn(|k, _| {
            let (ui, uj, g, s) = &self.rows[k];
            let (a, b, c) = (ui.dot(&(w * ui)), uj.dot(&(w * uj)), ui.dot(&(w * uj)));
            (a * b - g * c * c) * s
        }))
    }

    fn jacobian(&self) -> Option<Matrix5<f64>> {
        let w = self.omega();
        let mut jac = Matrix5::zeros();
        for (k, (ui, uj, g, s)) in self.rows.iter().enumerate() {
            let (a, b, c) = (ui.dot(&(w * ui)), uj.dot(&(w * uj)), ui.dot(&(w * uj)));
            let row = (bilinear_grad(ui, ui) * b + bilinear_grad(uj, uj) * a
                - bilinear_grad(ui, uj) * (2.0 * g * c))
                * *s;
            jac.set_row(k, &row.transpose());
        }
        Some(jac)
    }
}

fn random_start(rng: &mut impl Rng) -> Vector5<f64> {
    let f: f64 = rng.gen_range(0.25f64.ln()..6f64.ln()).exp();
    let aspect = rng.gen_range(0.8..1.25);
    let (cx, cy) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let k = Matrix3::new(f, 0.0, cx, 0.0, f * aspect, cy, 0.0, 0.0, 1.0);
    let kinv = k.try_inverse().expect("triangular with positive diagonal");
    Iac::new(kinv.transpose() * kinv).params().into()
}

/// Solves the five pair equations for Ω (ω33 = 1) by damped least squares
/// from [`IAC_STARTS`] random starts, working in normalized image
/// coordinates. Returns every distinct solution that meets
/// [`IAC_RESIDUAL_TOL`]; the list may be empty.
pub fn solve_iac_minimal(
    pairs: &[RigidPair],
    frame: &ImageFrame,
    rng: &mut impl Rng,
) -> Result<Vec<IacCandidate>> {
    if pairs.len() != 5 {
        return Err(Error::InvalidInput(format!(
            "minimal solve needs 5 pairs, got {}",
            pairs.len()
        )));
    }
    let rows: Vec<_> = pairs
        .iter()
        .map(|p| {
            let (ui, uj) = (frame.point(&p.ui), frame.point(&p.uj));
            (
                ui,
                uj,
                p.gamma,
                1.0 / (ui.norm_squared() * uj.norm_squared()),
            )
        })
        .collect();
    let lm = LevenbergMarquardt::new().with_patience(50);
    let mut found: Vec<(Vector5<f64>, IacCandidate)> = Vec::new();
    for _ in 0..IAC_STARTS {
        let system = IacSystem {
            rows: rows.clone(),
            p: random_start(rng),
        };
        let (system, _) = lm.minimize(system);
        let Some(r) = system.residuals() else {
            continue;
        };
        let residual = r.amax();
        if !(residual <= IAC_RESIDUAL_TOL) || !system.p.iter().all(|v| v.is_finite()) {
            continue;
        }
        let p = system.p;
        if found
            .iter()
            .any(|(q, _)| (q - p).norm() < IAC_DEDUP * q.norm().max(p.norm()))
        {
            continue;
        }
        let sv = system
            .jacobian()
            .expect("always available")
            .singular_values();
        let rank_deficient = sv.min() <= RANK_TOL * sv.max();
        let iac = Iac::new(frame.conic_to_pixels(&system.omega()));
        found.push((
            p,
            IacCandidate {
                iac,
                positive_definite: iac.is_positive_definite(),
                rank_deficient,
                residual,
            },
        ));
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

/// Camera of a positive-definite image of the absolute conic.
pub fn intrinsics_from_iac(iac: &Iac, width: f64, height: f64) -> Result<Intrinsics> {
    iac.intrinsics(width, height)
}

/// `√2 (d − d̂)` for every edge visible in every view, so that the sum of
/// squares counts both directions of each neighbor pair.
pub fn template_residuals(
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    template: &EdgeLengths,
) -> Vec<f64> {
    let pairs = PairSet::new(graph, DistanceMode::Euclidean);
    let rays = unit_rays(tracks, field.intrinsics());
    view_distances(field, graph, &pairs, &rays)
        .into_iter()
        .flat_map(|row| {
            row.into_iter()
                .zip(template.as_slice())
                .filter_map(|(dh, d)| Some(std::f64::consts::SQRT_2 * (d - dh?)))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `Φ_T = Σᵢ Σ_{j∈N(i)} (dᵢⱼ − d̂ᵢⱼ)²` over every view of `field`.
pub fn template_residual(
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    template: &EdgeLengths,
) -> f64 {
    template_residuals(field, tracks, graph, template)
        .iter()
        .map(|r| r * r)
        .sum()
}

/// How a candidate camera's distances are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// Upgrade the base reconstruction, keeping its ranges.
    Upgrade,
    /// Solve the template program again under the candidate.
    #[default]
    Resolve,
}

/// The template fit of one base reconstruction, evaluated at candidate
/// cameras.
pub struct TemplateFit<'a> {
    pub tracks: &'a TrackSet,
    pub graph: &'a NeighborGraph,
    pub template: &'a EdgeLengths,
    pub base: &'a DepthField,
    pub mode: ResidualMode,
    pub solve: &'a SolveOptions,
}

impl TemplateFit<'_> {
    /// Depths under `k`.
    pub fn field(&self, k: &Intrinsics) -> Result<DepthField> {
        match self.mode {
            ResidualMode::Upgrade => upgrade_depths(self.base, self.tracks, k),
            ResidualMode::Resolve => {
                let p = SftProblem::new(self.tracks, self.graph, self.template, k)?;
                Ok(reconstruct_sft(&p, self.solve)?.depths)
            }
        }
    }

    pub fn phi(&self, k: &Intrinsics) -> Result<f64> {
        Ok(template_residual(
            &self.field(k)?,
            self.tracks,
            self.graph,
            self.template,
        ))
    }

    fn residual_count(&self) -> usize {
        let per_view = |l| self.graph.edges_in_view(self.tracks, l).count();
        (0..self.tracks.num_views()).map(per_view).sum::<usize>() + 3
    }

    /// Residual vector of `E`: template residuals in units of the template's
    /// directed length sum, then the three regularizer terms of the
    /// normalized camera.
    pub fn energy_residuals(&self, k: &Intrinsics) -> Result<Vec<f64>> {
        let scale = 1.0 / self.template.directed_sum();
        let mut r: Vec<f64> =
            template_residuals(&self.field(k)?, self.tracks, self.graph, self.template)
                .into_iter()
                .map(|v| v * scale)
                .collect();
        let p = ImageFrame::of(k).params(k);
        r.extend([p[3], p[4], 1.0 - p[0] / p[1]]);
        Ok(r)
    }

    /// `E(K) = Φ_T + k13² + k23² + (1 − k11/k22)²` on the normalized camera.
    pub fn energy(&self, k: &Intrinsics) -> Result<f64> {
        Ok(self.energy_residuals(k)?.iter().map(|v| v * v).sum())
    }
}

/// Outcome of [`refine_intrinsics`].
#[derive(Clone, Debug, Serialize)]
pub struct Refinement {
    pub intrinsics: Intrinsics,
    /// `E` at the start and after every accepted improvement.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub termination: String,
}

/// Penalty residual reported for cameras where `E` cannot be evaluated.
const INVALID_RESIDUAL: f64 = 1e3;
const FD_STEP: f64 = 1e-5;

struct RefineProblem<'a, 'b> {
    fit: &'b TemplateFit<'a>,
    frame: ImageFrame,
    m: usize,
    theta: Vector5<f64>,
    cache: RefCell<Option<(Vector5<f64>, Option<Vec<f64>>)>>,
    best: RefCell<(f64, Vector5<f64>)>,
    trace: RefCell<Vec<f64>>,
    evaluations: RefCell<usize>,
}

impl RefineProblem<'_, '_> {
    fn eval(&self, theta: &Vector5<f64>) -> Option<Vec<f64>> {
        if let Some((t, r)) = &*self.cache.borrow() {
            if t == theta {
                return r.clone();
            }
        }
        *self.evaluations.borrow_mut() += 1;
        let r = self
            .frame
            .intrinsics(theta.as_slice())
            .and_then(|k| self.fit.energy_residuals(&k))
            .ok()
            .filter(|r| r.len() == self.m && r.iter().all(|v| v.is_finite()));
        if let Some(r) = &r {
            let e: f64 = r.iter().map(|v| v * v).sum();
            let mut best = self.best.borrow_mut();
            if e < best.0 {
                *best = (e, *theta);
                self.trace.borrow_mut().push(e);
            }
        }
        *self.cache.borrow_mut() = Some((*theta, r.clone()));
        r
    }
}

impl LeastSquaresProblem<f64, Dyn, U5> for RefineProblem<'_, '_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U5>;
    type ParameterStorage = Owned<f64, U5>;

    fn set_params(&mut self, p: &Vector5<f64>) {
        self.theta = *p;
    }

    fn params(&self) -> Vector5<f64> {
        self.theta
    }

    fn residuals(&self) -> Option<OVector<f64, Dyn>> {
        let r = self
            .eval(&self.theta)
            .unwrap_or_else(|| vec![INVALID_RESIDUAL; self.m]);
        Some(OVector::<f64, Dyn>::from_vec(r))
    }

    fn jacobian(&self) -> Option<OMatrix<f64, Dyn, U5>> {
        let r0 = self.eval(&self.theta)?;
        let mut jac = OMatrix::<f64, Dyn, U5>::zeros(self.m);
        for c in 0..5 {
            let h = FD_STEP * self.theta[c].abs().max(0.1);
            let mut t = self.theta;
            t[c] += h;
            let r = self.eval(&t)?;
            for (row, (a, b)) in r.iter().zip(&r0).enumerate() {
                jac[(row, c)] = (a - b) / h;
            }
        }
        Some(jac)
    }
}

/// Minimizes `E` over the five entries of the normalized camera by
/// Levenberg-Marquardt with forward-difference derivatives, starting at
/// `k0`. Returns the best camera evaluated; `E` never increases along the
/// trace.
pub fn refine_intrinsics(
    k0: &Intrinsics,
    fit: &TemplateFit,
    max_iter: usize,
) -> Result<Refinement> {
    k0.inverse()?;
    let frame = ImageFrame::of(k0);
    let theta = Vector5::from(frame.params(k0));
    let problem = RefineProblem {
        fit,
        frame,
        m: fit.residual_count(),
        theta,
        cache: RefCell::new(None),
        best: RefCell::new((f64::INFINITY, theta)),
        trace: RefCell::new(Vec::new()),
        evaluations: RefCell::new(0),
    };
    if problem.eval(&theta).is_none() {
        return Err(Error::NonFiniteCost { focal: k0.focal() });
    }
    let lm = LevenbergMarquardt::new()
        .with_patience(max_iter.max(1))
        .with_tol(1e-10);
    let (problem, report) = lm.minimize(problem);
    if !report.termination.was_successful() {
        log::warn!(
            "intrinsics refinement stopped early: {:?}",
            report.termination
        );
    }
    let (_, best) = *problem.best.borrow();
    let trace = problem.trace.borrow().clone();
    let evaluations = *problem.evaluations.borrow();
    Ok(Refinement {
        intrinsics: frame.intrinsics(best.as_slice())?,
        trace,
        evaluations,
        termination: format!("{:?}", report.termination),
    })
}

/// Settings of the template-based calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateCalibOptions {
    /// Five-pair sets sampled per outer iteration.
    pub hypotheses: usize,
    pub seed: u64,
    pub mode: ResidualMode,
    /// Relative focal change that ends the outer loop.
    pub epsilon: f64,
    pub max_outer: usize,
    pub refine_iter: usize,
}

impl Default for TemplateCalibOptions {
    fn default() -> Self {
        Self {
            hypotheses: 200,
            seed: 0,
            mode: ResidualMode::default(),
            epsilon: 0.01,
            max_outer: 10,
            refine_iter: 30,
        }
    }
}

impl TemplateCalibOptions {
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses == 0 || self.max_outer == 0 || self.refine_iter == 0 {
            return Err(Error::Config(
                "hypotheses, max_outer and refine_iter must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One validated camera hypothesis.
#[derive(Clone, Debug, Serialize)]
pub struct Hypothesis {
    pub outer: usize,
    /// Index of the sampled pair set; `None` for the incumbent camera.
    pub set: Option<usize>,
    pub intrinsics: Intrinsics,
    pub phi: f64,
}

/// One pass of reconstruction, hypothesis validation and refinement.
#[derive(Clone, Debug, Serialize)]
pub struct OuterStep {
    pub start: Intrinsics,
    pub chosen: Intrinsics,
    pub refined: Refinement,
    /// Every sampled hypothesis was rejected and the incumbent was refined.
    pub fallback: bool,
    pub rejected_sets: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TemplateCalibReport {
    pub intrinsics: Intrinsics,
    pub hypotheses: Vec<Hypothesis>,
    pub steps: Vec<OuterStep>,
    pub converged: bool,
}

/// Closest quartile of co-visible neighbor pairs, by pixel distance in the
/// view where they are measured, as rigid pairs under the field's ranges.
pub fn closest_pairs(
    field: &DepthField,
    tracks: &TrackSet,
    graph: &NeighborGraph,
    template: &EdgeLengths,
) -> Vec<RigidPair> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for l in 0..tracks.num_views() {
        for (e, (i, j)) in graph.edges_in_view(tracks, l) {
            let (pi, pj) = (tracks.raw_pixel(l, i), tracks.raw_pixel(l, j));
            cand.push(((pi[0] - pj[0]).hypot(pi[1] - pj[1]), l, e));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    cand.truncate(cand.len().div_ceil(4));
    cand.into_iter()
        .filter_map(|(_, l, e)| {
            let (i, j) = graph.edges()[e];
            let (ai, aj) = (field.range(l, i)?, field.range(l, j)?);
            RigidPair::new(
                i,
                j,
                tracks.homogeneous(l, i)?,
                tracks.homogeneous(l, j)?,
                ai,
                aj,
                template.get(e),
            )
            .ok()
        })
        .collect()
}

/// Cameras from one sampled set, positive definite and with the principal
/// point inside the image.
fn set_hypotheses(
    pairs: &[RigidPair],
    frame: &ImageFrame,
    k: &Intrinsics,
    seed: u64,
) -> Vec<Intrinsics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick: Vec<RigidPair> = sample(&mut rng, pairs.len(), 5)
        .iter()
        .map(|i| pairs[i])
        .collect();
    let Ok(cands) = solve_iac_minimal(&pick, frame, &mut rng) else {
        return Vec::new();
    };
    cands
        .iter()
        .filter(|c| c.positive_definite && !c.rank_deficient)
        .filter_map(|c| intrinsics_from_iac(&c.iac, k.width, k.height).ok())
        .filter(|h| (0.0..=h.width).contains(&h.cx) && (0.0..=h.height).contains(&h.cy))
        .collect()
}

/// `Φ_T` of every hypothesis; `None` where it cannot be evaluated.
pub fn validate_hypotheses(fit: &TemplateFit, hypotheses: &[Intrinsics]) -> Vec<Option<f64>> {
    hypotheses
        .par_iter()
        .map(|h| fit.phi(h).ok().filter(|p| p.is_finite()))
        .collect()
}

/// Index of the hypothesis with the smallest `Φ_T`.
pub fn select_hypothesis(scores: &[Option<f64>]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| Some((i, (*s)?)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Template-based calibration: reconstruct under the current camera,
/// generate camera hypotheses from sampled sets of close rigid pairs,
/// keep the one with the smallest template residual, refine it, and
/// repeat until the focal length changes by less than `epsilon`.
pub fn calibrate_with_template(
    tracks: &TrackSet,
    graph: &NeighborGraph,
    template: &EdgeLengths,
    k_hat: &Intrinsics,
    opts: &TemplateCalibOptions,
    solve: &SolveOptions,
) -> Result<TemplateCalibReport> {
    opts.validate()?;
    k_hat.inverse()?;
    let frame = ImageFrame::of(k_hat);
    let mut k = *k_hat;
    let mut hypotheses = Vec::new();
    let mut steps = Vec::new();
    let mut converged = false;
    for outer in 0..opts.max_outer {
        let base = reconstruct_sft(&SftProblem::new(tracks, graph, template, &k)?, solve)?.depths;
        let fit = TemplateFit {
            tracks,
            graph,
            template,
            base: &base,
            mode: opts.mode,
            solve,
        };
        let pairs = closest_pairs(&base, tracks, graph, template);
        let sets: Vec<Vec<Intrinsics>> = if pairs.len() < 5 {
            Vec::new()
        } else {
            (0..opts.hypotheses)
                .into_par_iter()
                .map(|s| {
                    set_hypotheses(
                        &pairs,
                        &frame,
                        &k,
                        opts.seed ^ ((outer as u64) << 32 | s as u64),
                    )
                })
                .collect()
        };
        let rejected_sets = sets.iter().filter(|s| s.is_empty()).count();
        let flat: Vec<(usize, Intrinsics)> = sets
            .into_iter()
            .enumerate()
            .flat_map(|(s, hs)| hs.into_iter().map(move |h| (s, h)))
            .collect();
        let cams: Vec<Intrinsics> = flat.iter().map(|(_, h)| *h).collect();
        let mut scored: Vec<Hypothesis> = flat
            .iter()
            .zip(validate_hypotheses(&fit, &cams))
            .filter_map(|(&(s, h), phi)| {
                Some(Hypothesis {
                    outer,
                    set: Some(s),
                    intrinsics: h,
                    phi: phi?,
                })
            })
            .collect();
        let fallback = scored.is_empty();
        if fallback {
            log::warn!("outer iteration {outer}: every camera hypothesis was rejected; refining the current camera");
        }
        scored.push(Hypothesis {
            outer,
            set: None,
            intrinsics: k,
            phi: fit.phi(&k)?,
        });
        let chosen = scored
            .iter()
            .min_by(|a, b| a.phi.total_cmp(&b.phi))
            .expect("incumbent always present")
            .intrinsics;
        let refined = refine_intrinsics(&chosen, &fit, opts.refine_iter)?;
        let next = refined.intrinsics;
        let delta = (next.focal() - k.focal()).abs() / k.focal();
        log::info!(
            "outer iteration {outer}: focal {:.2} -> {:.2} ({} hypotheses)",
            k.focal(),
            next.focal(),
            scored.len()
        );
        hypotheses.extend(scored);
        steps.push(OuterStep {
            start: k,
            chosen,
            refined,
            fallback,
            rejected_sets,
            delta,
        });
        k = next;
        if delta < opts.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "template calibration stopped after {} outer iterations without converging",
            opts.max_outer
        );
    }
    Ok(TemplateCalibReport {
        intrinsics: k,
        hypotheses,
        steps,
        converged,
    })
}
