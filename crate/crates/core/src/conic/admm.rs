//! Operator-splitting solver.
//!
//! Each iteration solves one linear system against the (fixed)
//! regularized normal matrix, projects the relaxed slack onto the cone
//! product, and takes a dual ascent step; the step size `ρ` is rebalanced
//! from the ratio of primal to dual residuals. The problem is Ruiz
//! equilibrated before iterating, with a single row factor per
//! second-order block so the cones are preserved.

use std::time::Instant;

use super::cones::{distance_polar, distance_primal, project_primal};
use super::normal::NormalSolver;
use super::{assess, Cone, ConicProgram, CsrMatrix, SolveStatus, SolverResult, SolverSettings};

const SIGMA: f64 = 1e-6;
const RELAX: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Largest factor by which one adaptation may change `ρ`.
const RHO_STEP_MAX: f64 = 10.0;
const EQ_RHO_FACTOR: f64 = 1e3;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 100;
const INFEASIBILITY_EPS: f64 = 1e-6;
const INFEASIBILITY_STREAK: usize = 3;
const RUIZ_PASSES: usize = 25;

pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> SolverResult {
    let start = Instant::now();
    let n = program.num_vars();
    let m = program.num_rows();
    let cones = program.cones();
    let tol = settings.tol;

    let (d, e) = equilibrate(program.a(), cones);
    let a = program.a().scaled(&d, &e);
    let b: Vec<f64> = program.b().iter().zip(&d).map(|(b, d)| b * d).collect();
    let mut c: Vec<f64> = program.c().iter().zip(&e).map(|(c, e)| c * e).collect();
    let cnorm = inf_norm(&c);
    let c_scale = if cnorm > 0.0 { 1.0 / cnorm } else { 1.0 };
    c.iter_mut().for_each(|v| *v *= c_scale);

    let equality: Vec<bool> = cones
        .iter()
        .flat_map(|k| std::iter::repeat_n(matches!(k, Cone::Zero(_)), k.dim()))
        .collect();
    let mut rho = RHO_INIT;
    let mut ws = Workspace::new(&a, &b, &c, cones, rho_vector(&equality, rho));

    // state w = [x | s | y] in scaled space
    let (xs, ss, ys) = (0..n, n..n + m, n + m..n + 2 * m);
    let mut w = vec![0.0; n + 2 * m];
    if let Some(warm) = &settings.warm_start {
        if warm.x.len() == n && warm.x.iter().all(|v| v.is_finite()) {
            for j in 0..n {
                w[j] = warm.x[j] / e[j];
            }
        }
        if let Some(z) = warm
            .z
            .as_ref()
            .filter(|z| z.len() == m && z.iter().all(|v| v.is_finite()))
        {
            for i in 0..m {
                w[n + m + i] = -c_scale * z[i] / d[i];
            }
        }
    }
    {
        let (x, rest) = w.split_at_mut(n);
        let s = &mut rest[..m];
        a.mul_vec(x, s);
        s.iter_mut().zip(&b).for_each(|(s, b)| *s = b - *s);
        project_primal(cones, s);
    }

    let mut g = vec![0.0; n + 2 * m];
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pinf_streak = 0;
    let mut dinf_streak = 0;

    let unscale = |w: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let xo = w[..n].iter().zip(&e).map(|(x, e)| x * e).collect();
        let zo = w[n + m..]
            .iter()
            .zip(&d)
            .map(|(y, d)| -y * d / c_scale)
            .collect();
        (xo, zo)
    };
    let finish =
        |status: SolveStatus, x: Vec<f64>, z: Vec<f64>, iterations: usize| -> SolverResult {
            let (primal, dual, gap) = assess(program, &x, &z);
            SolverResult {
                objective: program.objective(&x),
                x,
                z,
                status,
                primal_residual: primal,
                dual_residual: dual,
                gap,
                iterations,
                solve_seconds: start.elapsed().as_secs_f64(),
                backend: "reference",
            }
        };

    let mut iter = 0;
    while iter < settings.max_iter {
        iter += 1;
        ws.step(&w, &mut g);
        if iter % CHECK_EVERY == 0 || iter >= settings.max_iter {
            let (x, s, y) = (&g[xs.clone()], &g[ss.clone()], &g[ys.clone()]);
            a.mul_vec(x, &mut ax);
            a.mul_t_vec(y, &mut aty);
            let (xo, zo) = unscale(&g);
            let (primal, dual, gap) = assess(program, &xo, &zo);
            if !(primal.is_finite() && dual.is_finite() && gap.is_finite()) {
                break;
            }
            let merit = primal.max(dual).max(gap) / tol;
            log::trace!(
                "iter {iter} rho {rho:.3e} primal {primal:.2e} dual {dual:.2e} gap {gap:.2e}"
            );
            if merit <= 1.0 {
                return finish(SolveStatus::Optimal, xo, zo, iter);
            }
            if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
                best = Some((merit, g.clone()));
            }

            // infeasibility certificates from the fixed-point displacement
            let dx: Vec<f64> = (0..n).map(|j| g[j] - w[j]).collect();
            let dy: Vec<f64> = ys.clone().map(|k| g[k] - w[k]).collect();
            let ny = inf_norm(&dy);
            if primal > 10.0 * tol && ny > 0.0 {
                let mut atdy = vec![0.0; n];
                a.mul_t_vec(&dy, &mut atdy);
                let eps = INFEASIBILITY_EPS * ny;
                let certified = inf_norm(&atdy) <= eps
                    && dotp(&b, &dy) > eps
                    && distance_polar(cones, &dy) <= eps;
                pinf_streak = if certified { pinf_streak + 1 } else { 0 };
                if pinf_streak >= INFEASIBILITY_STREAK {
                    let z: Vec<f64> = dy.iter().zip(&d).map(|(v, d)| -v * d / ny).collect();
                    return finish(SolveStatus::PrimalInfeasible, xo, z, iter);
                }
            } else {
                pinf_streak = 0;
            }
            let nx = inf_norm(&dx);
            if dual > 10.0 * tol && nx > 0.0 {
                let mut adx = vec![0.0; m];
                a.mul_vec(&dx, &mut adx);
                adx.iter_mut().for_each(|v| *v = -*v);
                let eps = INFEASIBILITY_EPS * nx;
                let certified = dotp(&c, &dx) < -eps && distance_primal(cones, &adx) <= eps;
                dinf_streak = if certified { dinf_streak + 1 } else { 0 };
                if dinf_streak >= INFEASIBILITY_STREAK {
                    let xo: Vec<f64> = dx.iter().zip(&e).map(|(v, e)| v * e / nx).collect();
                    return finish(SolveStatus::DualInfeasible, xo, vec![0.0; m], iter);
                }
            } else {
                dinf_streak = 0;
            }

            if iter % ADAPT_EVERY == 0 {
                let rp = (0..m).fold(0.0f64, |r, i| r.max((ax[i] + s[i] - b[i]).abs()));
                let rd = (0..n).fold(0.0f64, |r, j| r.max((c[j] - aty[j]).abs()));
                let pn = inf_norm(&ax).max(inf_norm(s)).max(inf_norm(&b)).max(1e-12);
                let dn = inf_norm(&aty).max(inf_norm(&c)).max(1e-12);
                if rp > 0.0 && rd > 0.0 {
                    let ratio = ((rp / pn) / (rd / dn))
                        .sqrt()
                        .clamp(1.0 / RHO_STEP_MAX, RHO_STEP_MAX);
                    let proposed = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                    if proposed > 5.0 * rho || proposed < 0.2 * rho {
                        rho = proposed;
                        ws.set_rho(rho_vector(&equality, rho));
                    }
                }
            }
        }
        std::mem::swap(&mut w, &mut g);
    }

    let state = best.map(|(_, bw)| bw).unwrap_or(w);
    let (xo, zo) = unscale(&state);
    let xo = if xo.iter().all(|v| v.is_finite()) {
        xo
    } else {
        vec![0.0; n]
    };
    let zo = if zo.iter().all(|v| v.is_finite()) {
        zo
    } else {
        vec![0.0; m]
    };
    finish(SolveStatus::MaxIterations, xo, zo, iter)
}

/// Data and buffers of one plain splitting iteration.
struct Workspace<'a> {
    a: &'a CsrMatrix,
    b: &'a [f64],
    c: &'a [f64],
    cones: &'a [Cone],
    rho: Vec<f64>,
    lin: NormalSolver,
    rhs: Vec<f64>,
    tmp: Vec<f64>,
    ax: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(a: &'a CsrMatrix, b: &'a [f64], c: &'a [f64], cones: &'a [Cone], rho: Vec<f64>) -> Self {
        let lin = NormalSolver::new(a, &rho, SIGMA);
        Self {
            a,
            b,
            c,
            cones,
            rho,
            lin,
            rhs: vec![0.0; a.ncols()],
            tmp: vec![0.0; a.nrows()],
            ax: vec![0.0; a.nrows()],
        }
    }

    fn set_rho(&mut self, rho: Vec<f64>) {
        self.lin = NormalSolver::new(self.a, &rho, SIGMA);
        self.rho = rho;
    }

    /// `out = T(w)` for the state `w = [x | s | y]`.
    fn step(&mut self, w: &[f64], out: &mut [f64]) {
        let n = self.a.ncols();
        let m = self.a.nrows();
        let (x, s, y) = (&w[..n], &w[n..n + m], &w[n + m..]);
        for i in 0..m {
            self.tmp[i] = self.rho[i] * (self.b[i] - s[i]) + y[i];
        }
        self.a.mul_t_vec(&self.tmp, &mut self.rhs);
        for j in 0..n {
            self.rhs[j] += SIGMA * x[j] - self.c[j];
        }
        self.lin.solve(&mut self.rhs);
        self.a.mul_vec(&self.rhs, &mut self.ax);
        let (ox, rest) = out.split_at_mut(n);
        let (os, oy) = rest.split_at_mut(m);
        for j in 0..n {
            ox[j] = RELAX * self.rhs[j] + (1.0 - RELAX) * x[j];
        }
        for i in 0..m {
            let s_hat = RELAX * (self.b[i] - self.ax[i]) + (1.0 - RELAX) * s[i];
            self.tmp[i] = s_hat;
            os[i] = s_hat + y[i] / self.rho[i];
        }
        project_primal(self.cones, os);
        for i in 0..m {
            oy[i] = y[i] + self.rho[i] * (self.tmp[i] - os[i]);
        }
    }
}

fn rho_vector(equality: &[bool], rho: f64) -> Vec<f64> {
    equality
        .iter()
        .map(|&eq| if eq { rho * EQ_RHO_FACTOR } else { rho })
        .collect()
}

/// Ruiz equilibration: returns row factors `d` (uniform within each
/// second-order block) and column factors `e`.
fn equilibrate(a: &CsrMatrix, cones: &[Cone]) -> (Vec<f64>, Vec<f64>) {
    let m = a.nrows();
    let n = a.ncols();
    let mut d = vec![1.0; m];
    let mut e = vec![1.0; n];
    let mut cur = a.clone();
    for _ in 0..RUIZ_PASSES {
        let mut rn = cur.row_inf_norms();
        let cn = cur.col_inf_norms();
        let mut at = 0;
        for cone in cones {
            let dim = cone.dim();
            if let Cone::SecondOrder(_) = cone {
                let mx = rn[at..at + dim].iter().fold(0.0f64, |acc, v| acc.max(*v));
                rn[at..at + dim].iter_mut().for_each(|v| *v = mx);
            }
            at += dim;
        }
        let spread = rn
            .iter()
            .chain(&cn)
            .filter(|v| **v > 0.0)
            .fold(0.0f64, |acc, v| acc.max((1.0 - v).abs()));
        if spread < 1e-3 {
            break;
        }
        for (di, r) in d.iter_mut().zip(&rn) {
            if *r > 1e-12 {
                *di = (*di / r.sqrt()).clamp(1e-4, 1e4);
            }
        }
        for (ej, c) in e.iter_mut().zip(&cn) {
            if *c > 1e-12 {
                *ej = (*ej / c.sqrt()).clamp(1e-4, 1e4);
            }
        }
        cur = a.scaled(&d, &e);
    }
    (d, e)
}

#[inline]
fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[inline]
fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}
