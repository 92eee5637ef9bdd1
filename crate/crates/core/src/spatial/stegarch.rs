//! Spatiotemporal EGARCH,
//! `(I - l0 W2) H*_t = a1 + r0 W1 g(z_t) + r1 g(z_{t-1}) + l1 H*_{t-1}`,
//! with `g(z) = Theta z + xi (|z| - sqrt(2/pi))` on the standardised
//! innovations `z_t = e_t exp(-H*_t / 2)`.
//!
//! `z_t` depends on `H*_t`, so each period solves a small nonlinear
//! system. Its map `H -> (I - l0 W2)^-1 (c + r0 W1 g(e exp(-H/2)))` is
//! iterated with one LU factor per likelihood evaluation; Newton's method
//! takes over when the iteration stalls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dstarch::check_panel;
use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::numerics::stats::sample_variances;
use crate::numerics::{minimize_multistart, FitOptions, LuFactor, MultiStart};
use crate::univariate::{E_ABS_Z, LN_2PI};

pub const LAMBDA0_CAP: f64 = 0.99;

const MAX_LOG_VAR: f64 = 700.0;
const SOLVE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StEgarchParams {
    pub alpha1: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub theta: f64,
    pub xi: f64,
}

impl StEgarchParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.rho0, self.rho1, self.lambda0, self.lambda1, self.theta, self.xi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("STEGARCH parameters must be finite".into()));
        }
        if self.lambda0.abs() > LAMBDA0_CAP || self.lambda1.abs() >= 1.0 {
            return Err(Error::InvalidParam("STEGARCH needs |lambda0| <= 0.99 and |lambda1| < 1".into()));
        }
        Ok(())
    }

    pub fn g(&self, z: f64) -> f64 {
        self.theta * z + self.xi * (z.abs() - E_ABS_Z)
    }

    fn dg(&self, z: f64) -> f64 {
        self.theta + self.xi * z.signum()
    }
}

pub fn stegarch_k(_n: usize) -> usize {
    7
}

/// Spatial inputs of the model; `w1` carries contemporaneous shocks and
/// `w2` the contemporaneous log-variances.
#[derive(Debug, Clone, Copy)]
pub struct StEgarchWeights<'a> {
    pub w1: &'a WeightMatrix,
    pub w2: &'a WeightMatrix,
}

impl<'a> StEgarchWeights<'a> {
    pub fn same(w: &'a WeightMatrix) -> Self {
        StEgarchWeights { w1: w, w2: w }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StEgarchFit {
    pub params: StEgarchParams,
    pub loglik: f64,
    /// `H*_1`, the per-asset log sample variances.
    pub log_h0: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
    pub start_values: Vec<f64>,
}

/// Per-evaluation state: `M = I - l0 W2`, its LU and log-determinant.
struct Solver<'a> {
    p: &'a StEgarchParams,
    w1: &'a DMatrix<f64>,
    m: DMatrix<f64>,
    lu: LuFactor,
    log_det_m: f64,
    scratch: Vec<f64>,
    g: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(p: &'a StEgarchParams, w1: &'a DMatrix<f64>, w2: &DMatrix<f64>) -> Result<Self> {
        let n = w2.nrows();
        let m = DMatrix::identity(n, n) - w2 * p.lambda0;
        let lu = LuFactor::new(&m)?;
        let log_det_m = m.clone().lu().determinant().abs().ln();
        Ok(Solver {
            p,
            w1,
            m,
            lu,
            log_det_m,
            scratch: vec![0.0; n],
            g: vec![0.0; n],
            next: vec![0.0; n],
        })
    }

    /// Overwrites `c` with `M^-1 c`.
    fn solve(&mut self, c: &mut [f64]) {
        self.lu.solve_in_place(c, &mut self.scratch);
    }

    /// Solves `F(H) = M H - c - r0 W1 g(e exp(-H/2)) = 0`. On entry `h`
    /// holds `M^-1 c`. Returns `ln|det M| - ln|det J|` at the root, with
    /// `J = M + r0 W1 diag(g'(z) z / 2)` the Jacobian of `F`; this is the
    /// log-Jacobian of `e -> z` beyond `-sum H / 2`.
    fn period(&mut self, c: &[f64], e: &[f64], h: &mut [f64]) -> Option<f64> {
        if self.p.rho0 == 0.0 {
            return Some(0.0);
        }
        let start = h.to_vec();
        if !self.newton(c, e, h) {
            h.copy_from_slice(&start);
            if !self.iterate(c, e, h) {
                return None;
            }
        }
        let det = self.jacobian(e, h).lu().determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(self.log_det_m - det.abs().ln())
    }

    fn jacobian(&self, e: &[f64], h: &[f64]) -> DMatrix<f64> {
        let n = h.len();
        // d g(z_j) / d H_j = -g'(z_j) z_j / 2
        let d = DVector::from_fn(n, |j, _| {
            let z = e[j] * (-0.5 * h[j]).exp();
            0.5 * self.p.dg(z) * z
        });
        &self.m + self.w1 * DMatrix::from_diagonal(&d) * self.p.rho0
    }

    fn newton(&mut self, c: &[f64], e: &[f64], h: &mut [f64]) -> bool {
        let n = c.len();
        let cv = DVector::from_column_slice(c);
        for _ in 0..60 {
            let hv = DVector::from_column_slice(h);
            let g = DVector::from_fn(n, |j, _| self.p.g(e[j] * (-0.5 * h[j]).exp()));
            let f = &self.m * &hv - &cv - self.w1 * g * self.p.rho0;
            let Some(step) = self.jacobian(e, h).lu().solve(&f) else {
                return false;
            };
            let mut big = 0.0_f64;
            for j in 0..n {
                h[j] -= step[j];
                big = big.max(h[j].abs());
            }
            if !(big <= MAX_LOG_VAR) {
                return false;
            }
            if step.amax() <= SOLVE_TOL * (1.0 + big) {
                return true;
            }
        }
        false
    }

    /// Fixed-point iteration of `H -> M^-1 (c + r0 W1 g(e exp(-H/2)))`.
    fn iterate(&mut self, c: &[f64], e: &[f64], h: &mut [f64]) -> bool {
        let n = c.len();
        for _ in 0..500 {
            for j in 0..n {
                self.g[j] = self.p.g(e[j] * (-0.5 * h[j]).exp());
            }
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += self.w1[(i, j)] * self.g[j];
                }
                self.next[i] = c[i] + self.p.rho0 * s;
            }
            let mut next = std::mem::take(&mut self.next);
            self.solve(&mut next);
            let mut gap = 0.0_f64;
            let mut big = 0.0_f64;
            for i in 0..n {
                gap = gap.max((next[i] - h[i]).abs());
                h[i] = next[i];
                big = big.max(h[i].abs());
            }
            self.next = next;
            if !(big <= MAX_LOG_VAR) {
                return false;
            }
            if gap <= SOLVE_TOL * (1.0 + big) {
                return true;
            }
        }
        false
    }
}

/// Filters `H*_1..H*_T` and calls `f(t, H*_t, z_t, log_jac_t)`. Returns
/// the first period without a finite root.
fn filter(
    eps: &DMatrix<f64>,
    p: &StEgarchParams,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    log_h0: &[f64],
    mut f: impl FnMut(usize, &[f64], &[f64], f64),
) -> std::result::Result<(), usize> {
    let (t_len, n) = eps.shape();
    let mut solver = Solver::new(p, w1, w2).map_err(|_| 0usize)?;
    let mut h = log_h0.to_vec();
    let mut z: Vec<f64> = (0..n).map(|i| eps[(0, i)] * (-0.5 * h[i]).exp()).collect();
    let mut c = vec![0.0; n];
    let mut e = vec![0.0; n];
    f(0, &h, &z, 0.0);
    for t in 1..t_len {
        for i in 0..n {
            c[i] = p.alpha1 + p.rho1 * p.g(z[i]) + p.lambda1 * h[i];
            e[i] = eps[(t, i)];
        }
        h.copy_from_slice(&c);
        solver.solve(&mut h);
        let Some(log_jac) = solver.period(&c, &e, &mut h) else {
            return Err(t);
        };
        for i in 0..n {
            z[i] = e[i] * (-0.5 * h[i]).exp();
        }
        f(t, &h, &z, log_jac);
    }
    Ok(())
}

/// Negative Gaussian log-likelihood of `e_2..e_T`. `H*_t` responds to
/// `e_t` through the contemporaneous term, so the density of `e_t` carries
/// the Jacobian of `e_t -> z_t`.
fn nll(eps: &DMatrix<f64>, p: &StEgarchParams, w1: &DMatrix<f64>, w2: &DMatrix<f64>, log_h0: &[f64]) -> f64 {
    let mut total = 0.0;
    let r = filter(eps, p, w1, w2, log_h0, |t, h, z, log_jac| {
        if t == 0 {
            return;
        }
        for i in 0..h.len() {
            total += 0.5 * (LN_2PI + h[i] + z[i] * z[i]);
        }
        total -= log_jac;
    });
    if r.is_ok() && total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

fn check_inputs(eps: &DMatrix<f64>, w: StEgarchWeights<'_>, log_h0: &[f64]) -> Result<()> {
    let n = eps.ncols();
    if w.w1.n() != n || w.w2.n() != n || log_h0.len() != n {
        return Err(Error::Dimension(format!("STEGARCH inputs do not all have {n} assets")));
    }
    Ok(())
}

/// Filtered `H*_1..H*_T` (`T x n`).
pub fn stegarch_filtered(
    eps: &DMatrix<f64>,
    p: &StEgarchParams,
    w: StEgarchWeights<'_>,
    log_h0: &[f64],
) -> Result<DMatrix<f64>> {
    check_inputs(eps, w, log_h0)?;
    Solver::new(p, &w.w1.w, &w.w2.w)?;
    let mut out = DMatrix::zeros(eps.nrows(), eps.ncols());
    filter(eps, p, &w.w1.w, &w.w2.w, log_h0, |t, h, _, _| {
        for (i, &v) in h.iter().enumerate() {
            out[(t, i)] = v;
        }
    })
    .map_err(Error::State)?;
    Ok(out)
}

/// One-step forecasts of `H*`, `(T+1) x n`: row 0 is `H*_1` and row
/// `t >= 1` is `(I - l0 W2)^-1 (a1 + r1 g(z_{t-1}) + l1 H*_{t-1})`, the
/// contemporaneous term replaced by its zero mean.
pub fn stegarch_log_forecast_path(
    eps: &DMatrix<f64>,
    p: &StEgarchParams,
    w: StEgarchWeights<'_>,
    log_h0: &[f64],
) -> Result<DMatrix<f64>> {
    let filtered = stegarch_filtered(eps, p, w, log_h0)?;
    let (t_len, n) = eps.shape();
    let mut out = DMatrix::zeros(t_len + 1, n);
    for i in 0..n {
        out[(0, i)] = log_h0[i];
    }
    for t in 1..=t_len {
        let e: Vec<f64> = eps.row(t - 1).iter().copied().collect();
        let h: Vec<f64> = filtered.row(t - 1).iter().copied().collect();
        let f = stegarch_forecast(p, w.w2, &e, &h)?;
        for i in 0..n {
            out[(t, i)] = f[i];
        }
    }
    Ok(out)
}

/// `H*_{T+1}` from the time-`T` residuals and filtered log-variances.
pub fn stegarch_forecast(p: &StEgarchParams, w2: &WeightMatrix, eps_t: &[f64], log_h_t: &[f64]) -> Result<Vec<f64>> {
    let n = eps_t.len();
    if w2.n() != n || log_h_t.len() != n {
        return Err(Error::Dimension(format!("STEGARCH forecast inputs do not all have {n} assets")));
    }
    let lu = LuFactor::new(&(DMatrix::identity(n, n) - &w2.w * p.lambda0))?;
    let mut b: Vec<f64> = (0..n)
        .map(|i| p.alpha1 + p.rho1 * p.g(eps_t[i] * (-0.5 * log_h_t[i]).exp()) + p.lambda1 * log_h_t[i])
        .collect();
    let mut scratch = vec![0.0; n];
    lu.solve_in_place(&mut b, &mut scratch);
    Ok(b)
}

pub fn stegarch_loglik(eps: &DMatrix<f64>, p: &StEgarchParams, w: StEgarchWeights<'_>, log_h0: &[f64]) -> Result<f64> {
    check_inputs(eps, w, log_h0)?;
    Ok(-nll(eps, p, &w.w1.w, &w.w2.w, log_h0))
}

/// Per-asset log sample variances, the starting state `H*_1`.
pub fn stegarch_init(eps: &DMatrix<f64>) -> Result<Vec<f64>> {
    let var = sample_variances(eps);
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateSeries("STEGARCH input".into()));
    }
    Ok(var.iter().map(|v| v.ln()).collect())
}

fn from_free(c: &[f64]) -> StEgarchParams {
    StEgarchParams {
        alpha1: c[0],
        rho0: c[1],
        rho1: c[2],
        lambda0: c[3],
        lambda1: c[4],
        theta: c[5].sin(),
        xi: c[5].cos(),
    }
}

/// Gaussian QMLE. `(Theta, xi)` is identified only up to scale against
/// `(rho0, rho1)`, so it is parametrised as `(sin psi, cos psi)` with
/// `psi in [-pi/2, pi/2]`; at least three starts are always run.
pub fn stegarch_fit(eps: &DMatrix<f64>, w: StEgarchWeights<'_>, opts: &FitOptions) -> Result<StEgarchFit> {
    check_panel(eps, 250, "STEGARCH")?;
    let log_h0 = stegarch_init(eps)?;
    check_inputs(eps, w, &log_h0)?;
    let mean_log = log_h0.iter().sum::<f64>() / log_h0.len() as f64;
    let objective = |c: &[f64]| nll(eps, &from_free(c), &w.w1.w, &w.w2.w, &log_h0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let lower = [-50.0, -5.0, -5.0, -LAMBDA0_CAP, -0.999, -half_pi];
    let upper = [50.0, 5.0, 5.0, LAMBDA0_CAP, 0.999, half_pi];
    let start = [0.1 * mean_log, 0.05, 0.1, 0.1, 0.8, 0.0];
    let ms = MultiStart {
        count: opts.multistart.count.max(3),
        seed: opts.multistart.seed,
    };
    let r = minimize_multistart(&objective, &lower, &upper, &start, &ms, &opts.opt)?;
    log::debug!("STEGARCH start objectives: {:?}", r.start_values);
    if !r.best.converged {
        return Err(Error::Convergence {
            model: format!("STEGARCH (best of {} starts)", r.starts.len()),
            iterations: r.best.iterations,
        });
    }
    Ok(StEgarchFit {
        loglik: -r.best.value,
        params: from_free(&r.best.argmin),
        log_h0,
        converged: true,
        seeds: r.seeds,
        start_values: r.start_values,
    })
}
