//! Sparse second-order cone programs in the form
//!
//! ```text
//! minimize cᵀx  subject to  A x + s = b,  s ∈ K₁ × … × K_p
//! ```
//!
//! where each `Kᵢ` is a zero cone (equalities) or a second-order cone
//! `{(t, v) : ‖v‖ ≤ t}`. The reference engine is a first-order operator
//! splitting method ([`admm`]); an interior-point backend is registered for
//! cross-checking.

pub mod admm;
mod clarabel_backend;
mod cones;
mod normal;
mod sparse;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::SecondOrder(d) => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    c: Vec<f64>,
    a: CsrMatrix,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(c: Vec<f64>, a: CsrMatrix, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self> {
        if a.ncols() != c.len() {
            return Err(Error::InvalidInput(format!(
                "A has {} columns but c has {} entries",
                a.ncols(),
                c.len()
            )));
        }
        let rows: usize = cones.iter().map(Cone::dim).sum();
        if rows != a.nrows() || rows != b.len() {
            return Err(Error::InvalidInput(format!(
                "cone dimensions sum to {rows}, A has {} rows, b has {}",
                a.nrows(),
                b.len()
            )));
        }
        if cones.iter().any(|k| k.dim() == 0) {
            return Err(Error::InvalidInput(
                "cone blocks must have dimension at least 1".into(),
            ));
        }
        if let Some(r) = (0..a.nrows()).find(|&r| a.row_nnz(r) == 0) {
            return Err(Error::InvalidInput(format!(
                "row {r} of A is identically zero"
            )));
        }
        if c.iter().chain(&b).any(|v| !v.is_finite())
            || a.triplets().iter().any(|t| !t.2.is_finite())
        {
            return Err(Error::InvalidInput("program data must be finite".into()));
        }
        Ok(Self { c, a, b, cones })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// Copy with `b` multiplied by `s`.
    pub fn with_scaled_rhs(&self, s: f64) -> Self {
        Self {
            b: self.b.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Cone violation of `b - A x` (absolute).
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let mut slack = vec![0.0; self.num_rows()];
        self.a.mul_vec(x, &mut slack);
        slack.iter_mut().zip(&self.b).for_each(|(s, b)| *s = b - *s);
        cones::primal_violation(&self.cones, &slack)
    }

    /// Writes c, b, A (COO triplets) and the cone list as JSON.
    pub fn dump_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            num_vars: usize,
            num_rows: usize,
            c: &'a [f64],
            b: &'a [f64],
            a: Vec<(usize, usize, f64)>,
            cones: &'a [Cone],
        }
        let dump = Dump {
            num_vars: self.num_vars(),
            num_rows: self.num_rows(),
            c: &self.c,
            b: &self.b,
            a: self.a.triplets(),
            cones: &self.cones,
        };
        let text = serde_json::to_string(&dump).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// An affine expression `Σ coef·x[var] + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms, constant }
    }

    pub fn var(v: usize) -> Self {
        Self::new(vec![(v, 1.0)], 0.0)
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|&(_, c)| c == 0.0)
    }
}

/// Incremental construction of a [`ConicProgram`]. Every constraint states
/// that an affine slack lies in a cone, encoded as `A = -terms`, `b = constant`.
#[derive(Clone, Debug, Default)]
pub struct ProgramBuilder {
    c: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64) -> usize {
        self.c.push(cost);
        self.c.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, cost: f64) -> std::ops::Range<usize> {
        let start = self.c.len();
        self.c.resize(start + count, cost);
        start..start + count
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }

    fn push_row(&mut self, e: &Affine) {
        self.rows
            .push(e.terms.iter().map(|&(v, c)| (v, -c)).collect());
        self.b.push(e.constant);
    }

    /// `e = 0`.
    pub fn equality(&mut self, e: &Affine) {
        self.push_row(e);
        self.cones.push(Cone::Zero(1));
    }

    /// `e ≥ 0`.
    pub fn nonnegative(&mut self, e: &Affine) {
        self.push_row(e);
        self.cones.push(Cone::SecondOrder(1));
    }

    /// `‖tail‖ ≤ head`. Tail entries that are identically zero are dropped.
    pub fn second_order(&mut self, head: &Affine, tail: &[Affine]) {
        self.push_row(head);
        let mut dim = 1;
        for t in tail.iter().filter(|t| !t.is_zero()) {
            self.push_row(t);
            dim += 1;
        }
        self.cones.push(Cone::SecondOrder(dim));
    }

    pub fn build(self) -> Result<ConicProgram> {
        let n = self.c.len();
        let a = CsrMatrix::from_rows(n, &self.rows);
        ConicProgram::new(self.c, a, self.b, self.cones)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    /// Bound on the primal cone violation and on the normalized dual residual and gap.
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<WarmStart>,
}

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 100_000;

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: None,
        }
    }
}

impl SolverSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            warm_start: None,
        }
    }

    pub fn warm(mut self, warm: Option<WarmStart>) -> Self {
        self.warm_start = warm;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverResult {
    #[serde(skip)]
    pub x: Vec<f64>,
    /// Dual multipliers in the dual cone, `c + Aᵀz = 0` at optimality.
    #[serde(skip)]
    pub z: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Cone violation of `b - Ax` relative to `1 + max(‖|A||x|‖∞, ‖b‖∞)`.
    pub primal_residual: f64,
    /// `‖c + Aᵀz‖∞ / (1 + max(‖c‖∞, ‖|A|ᵀ|z|‖∞))`, or the relative dual cone
    /// violation of `z` if larger.
    pub dual_residual: f64,
    /// `|cᵀx + bᵀz| / (1 + |cᵀx| + |bᵀz|)`.
    pub gap: f64,
    pub iterations: usize,
    pub solve_seconds: f64,
    pub backend: &'static str,
}

impl SolverResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            z: Some(self.z.clone()),
        }
    }

    /// Turns any non-optimal status into an error.
    pub fn into_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
            })
        }
    }
}

/// Residual measures shared by every backend. Each is relative to the
/// magnitude of the terms it sums, so cancellation in large sums is not
/// mistaken for inaccuracy.
pub(crate) fn assess(program: &ConicProgram, x: &[f64], z: &[f64]) -> (f64, f64, f64) {
    let (m, n) = (program.num_rows(), program.num_vars());
    let mut ax = vec![0.0; m];
    let mut ax_abs = vec![0.0; m];
    let mut atz = vec![0.0; n];
    let mut atz_abs = vec![0.0; n];
    for r in 0..m {
        let (cols, vals) = program.a.row(r);
        for (&j, &v) in cols.iter().zip(vals) {
            ax[r] += v * x[j];
            ax_abs[r] += (v * x[j]).abs();
            atz[j] += v * z[r];
            atz_abs[j] += (v * z[r]).abs();
        }
    }
    let s: Vec<f64> = program.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let primal = cones::primal_violation(&program.cones, &s)
        / (1.0 + inf_norm(&ax_abs).max(inf_norm(&program.b)));
    let dres = atz
        .iter()
        .zip(&program.c)
        .fold(0.0f64, |m, (a, c)| m.max((a + c).abs()))
        / (1.0 + inf_norm(&program.c).max(inf_norm(&atz_abs)));
    let dres = dres.max(cones::dual_violation(&program.cones, z) / (1.0 + inf_norm(z)));
    let pobj = program.objective(x);
    let dobj: f64 = program.b.iter().zip(z).map(|(b, z)| b * z).sum();
    let gap = (pobj + dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    (primal, dres, gap)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> SolverResult;
}

struct Reference;

impl Backend for Reference {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> SolverResult {
        admm::solve(program, settings)
    }
}

static REFERENCE: Reference = Reference;
static CLARABEL: clarabel_backend::Clarabel = clarabel_backend::Clarabel;

/// Names accepted by [`backend`].
pub const BACKENDS: [&str; 2] = ["reference", "clarabel"];

/// Backend used by the reconstruction pipelines unless configured
/// otherwise. The splitting method converges too slowly on the highly
/// degenerate maximum-depth programs to reach the default tolerance.
pub const PIPELINE_BACKEND: &str = "clarabel";

pub fn backend(name: &str) -> Result<&'static dyn Backend> {
    match name {
        "reference" => Ok(&REFERENCE),
        "clarabel" => Ok(&CLARABEL),
        other => Err(Error::Config(format!(
            "unknown solver backend {other:?}; available: {}",
            BACKENDS.join(", ")
        ))),
    }
}

/// Solves with the built-in first-order method.
pub fn solve(program: &ConicProgram, tol: f64, max_iter: usize) -> SolverResult {
    admm::solve(program, &SolverSettings::new(tol, max_iter))
}

pub fn solve_backend(
    program: &ConicProgram,
    name: &str,
    tol: f64,
    max_iter: usize,
) -> Result<SolverResult> {
    Ok(backend(name)?.solve(program, &SolverSettings::new(tol, max_iter)))
}
