//! DCC(1,1) estimated in two stages: univariate GARCH(1,1) per asset, then
//! the correlation dynamics on the standardised residuals.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::correlation_matrix;
use crate::networks::distance::default_tickers;
use crate::numerics::linalg::{cholesky_in_place, logdet_quad};
use crate::numerics::stats::column;
use crate::numerics::{cholesky, minimize_multistart, FitOptions};
use crate::univariate::{garch11_filter, garch11_loglik, garch11_qmle, Garch11Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccParams {
    pub univariate: Vec<Garch11Params>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Row-major `n x n` target correlation.
    pub qbar: Vec<f64>,
}

impl DccParams {
    pub fn n(&self) -> usize {
        self.univariate.len()
    }

    pub fn qbar_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_row_slice(n, n, &self.qbar)
    }
}

pub fn dcc_k(n: usize) -> usize {
    3 * n + 2 + n * (n - 1) / 2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DccFit {
    pub params: DccParams,
    pub loglik: f64,
    pub loglik_univariate: f64,
    pub loglik_correlation: f64,
    /// Initial variances `h_1`, one per asset.
    pub h0: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
}

/// `u_t = e_t / sqrt(h_t)` per asset.
pub fn standardize(eps: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(eps.nrows(), eps.ncols(), |t, i| eps[(t, i)] / h[(t, i)].sqrt())
}

/// Calls `f(t, Q_t)` for `t = 0..T` with `Q_0 = Qbar` (0-based periods).
/// Stops early when `f` returns false.
pub(crate) fn q_recursion(u: &DMatrix<f64>, qbar: &DMatrix<f64>, l1: f64, l2: f64, mut f: impl FnMut(usize, &[f64]) -> bool) {
    let (t_len, n) = u.shape();
    let c = 1.0 - l1 - l2;
    let qb = qbar.as_slice();
    let mut q = qb.to_vec();
    for t in 0..t_len {
        if t > 0 {
            for j in 0..n {
                let uj = u[(t - 1, j)];
                for i in 0..n {
                    let k = j * n + i;
                    q[k] = c * qb[k] + l1 * u[(t - 1, i)] * uj + l2 * q[k];
                }
            }
        }
        if !f(t, &q) {
            return;
        }
    }
}

fn correlation_from_q(q: &[f64], n: usize, r: &mut [f64]) -> bool {
    for j in 0..n {
        for i in 0..n {
            let d = q[i * n + i] * q[j * n + j];
            if !(d > 0.0) {
                return false;
            }
            r[j * n + i] = q[j * n + i] / d.sqrt();
        }
    }
    true
}

/// Negative correlation log-likelihood
/// `1/2 sum_{t>=2} (ln |R_t| + u_t' R_t^-1 u_t - u_t' u_t)`.
pub fn dcc_correlation_nll(u: &DMatrix<f64>, qbar: &DMatrix<f64>, l1: f64, l2: f64) -> f64 {
    let n = u.ncols();
    let mut r = vec![0.0; n * n];
    let mut work = vec![0.0; n * n + n];
    let mut ut = vec![0.0; n];
    let mut total = 0.0;
    let mut ok = true;
    q_recursion(u, qbar, l1, l2, |t, q| {
        if t == 0 {
            return true;
        }
        if !correlation_from_q(q, n, &mut r) {
            ok = false;
            return false;
        }
        for i in 0..n {
            ut[i] = u[(t, i)];
        }
        match logdet_quad(&r, n, &ut, &mut work) {
            Some((ld, quad)) => {
                let uu: f64 = ut.iter().map(|v| v * v).sum();
                total += 0.5 * (ld + quad - uu);
                true
            }
            None => {
                ok = false;
                false
            }
        }
    });
    if ok && total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Conditional variances `h_1..h_{T+1}` (`(T+1) x n`); the last row is the
/// one-step forecast.
pub fn dcc_variance_path(eps: &DMatrix<f64>, p: &DccParams, h0: &[f64]) -> DMatrix<f64> {
    let (t, n) = eps.shape();
    let mut out = DMatrix::zeros(t + 1, n);
    for i in 0..n {
        let mut ext = column(eps, i).to_vec();
        ext.push(0.0);
        let h = garch11_filter(&ext, &p.univariate[i], h0[i]).h;
        for (r, v) in h.into_iter().enumerate() {
            out[(r, i)] = v;
        }
    }
    out
}

pub fn dcc_forecast_var(p: &DccParams, eps_t: &[f64], h_t: &[f64]) -> Vec<f64> {
    p.univariate
        .iter()
        .zip(eps_t.iter().zip(h_t))
        .map(|(g, (e, h))| g.omega + g.alpha * e * e + g.beta * h)
        .collect()
}

/// Total log-likelihood: univariate parts plus the correlation part.
pub fn dcc_loglik(eps: &DMatrix<f64>, p: &DccParams, h0: &[f64]) -> f64 {
    let path = dcc_variance_path(eps, p, h0);
    let h = path.rows(0, eps.nrows()).into_owned();
    let uni: f64 = (0..eps.ncols()).map(|i| garch11_loglik(column(eps, i), &p.univariate[i], h0[i])).sum();
    uni - dcc_correlation_nll(&standardize(eps, &h), &p.qbar_matrix(), p.lambda1, p.lambda2)
}

/// True when every `Q_t` along the path admits a Cholesky factor.
pub fn dcc_q_path_is_pd(eps: &DMatrix<f64>, p: &DccParams, h0: &[f64]) -> bool {
    let path = dcc_variance_path(eps, p, h0);
    let u = standardize(eps, &path.rows(0, eps.nrows()).into_owned());
    let n = p.n();
    let mut ok = true;
    let mut work = vec![0.0; n * n];
    q_recursion(&u, &p.qbar_matrix(), p.lambda1, p.lambda2, |_, q| {
        work.copy_from_slice(q);
        ok = cholesky_in_place(&mut work, n);
        ok
    });
    ok
}

/// Two-stage QMLE. Stage 1 fits GARCH(1,1) to each column; stage 2 fits
/// `(lambda1, lambda2)` with `Qbar` fixed at the sample correlation of the
/// standardised residuals, under `lambda1 + lambda2 <= 0.999`.
pub fn dcc_fit(eps: &DMatrix<f64>, opts: &FitOptions) -> Result<DccFit> {
    let (t, n) = eps.shape();
    if n < 2 {
        return Err(Error::InvalidPanel("DCC needs at least two assets".into()));
    }
    let uni = (0..n)
        .into_par_iter()
        .map(|i| garch11_qmle(column(eps, i), opts).map_err(|e| Error::fit(format!("DCC stage 1, asset {i}"), e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let h0: Vec<f64> = uni.iter().map(|f| f.h0).collect();
    let h = DMatrix::from_fn(t, n, |r, c| uni[c].path.h[r]);
    let u = standardize(eps, &h);
    let qbar = correlation_matrix(&u, &default_tickers(n))?;
    cholesky(&qbar).map_err(|_| Error::NotPositiveDefinite)?;

    let objective = |c: &[f64]| {
        if c[0] + c[1] > 0.999 {
            return f64::INFINITY;
        }
        dcc_correlation_nll(&u, &qbar, c[0], c[1])
    };
    let r = minimize_multistart(&objective, &[0.0, 0.0], &[0.999, 0.999], &[0.05, 0.90], &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "DCC stage 2".into(),
            iterations: r.best.iterations,
        });
    }
    let loglik_univariate: f64 = uni.iter().map(|f| f.loglik).sum();
    let loglik_correlation = -r.best.value;
    let mut qbar_rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            qbar_rows.push(qbar[(i, j)]);
        }
    }
    let mut seeds = r.seeds.clone();
    seeds.sort_unstable();
    Ok(DccFit {
        params: DccParams {
            univariate: uni.iter().map(|f| f.params).collect(),
            lambda1: r.best.argmin[0],
            lambda2: r.best.argmin[1],
            qbar: qbar_rows,
        },
        loglik: loglik_univariate + loglik_correlation,
        loglik_univariate,
        loglik_correlation,
        h0,
        converged: uni.iter().all(|f| f.converged) && r.best.converged,
        seeds,
    })
}
