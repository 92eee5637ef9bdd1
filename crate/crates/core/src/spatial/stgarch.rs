//! Spatiotemporal GARCH in weight-matrix form,
//! `H_t = omega 1 + (a_self I + a_sp W) e^2_{t-1} + (b_self I + b_sp W) H_{t-1}`,
//! with five homogeneous scalars.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dstarch::check_panel;
use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::numerics::stats::sample_variances;
use crate::numerics::{minimize_multistart, FitOptions};
use crate::univariate::LN_2PI;

const SUM_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StGarchParams {
    pub omega: f64,
    pub a_self: f64,
    pub a_sp: f64,
    pub b_self: f64,
    pub b_sp: f64,
}

impl StGarchParams {
    pub fn validate(&self) -> Result<()> {
        let coefs = [self.a_self, self.a_sp, self.b_self, self.b_sp];
        if !(self.omega > 0.0) || coefs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidParam("STGARCH needs omega > 0 and nonnegative coefficients".into()));
        }
        if coefs.iter().sum::<f64>() >= 1.0 {
            return Err(Error::InvalidParam("STGARCH coefficients must sum to less than 1".into()));
        }
        Ok(())
    }

    fn to_array(self) -> [f64; 5] {
        [self.omega, self.a_self, self.a_sp, self.b_self, self.b_sp]
    }

    fn from_slice(c: &[f64]) -> Self {
        StGarchParams {
            omega: c[0],
            a_self: c[1],
            a_sp: c[2],
            b_self: c[3],
            b_sp: c[4],
        }
    }
}

pub fn stgarch_k(_n: usize) -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StGarchFit {
    pub params: StGarchParams,
    pub loglik: f64,
    /// `H_1`, the per-asset sample variances.
    pub h0: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
}

/// Runs the recursion; `f(t, H_t)` sees rows `t = 0..=T` and returns false
/// to stop.
fn run(eps: &DMatrix<f64>, c: &[f64; 5], w: &DMatrix<f64>, h0: &[f64], mut f: impl FnMut(usize, &[f64]) -> bool) {
    let (t_len, n) = eps.shape();
    let mut h = h0.to_vec();
    let mut e2 = vec![0.0; n];
    let mut next = vec![0.0; n];
    if !f(0, &h) {
        return;
    }
    for t in 0..t_len {
        for i in 0..n {
            e2[i] = eps[(t, i)] * eps[(t, i)];
        }
        for i in 0..n {
            let mut we = 0.0;
            let mut wh = 0.0;
            for j in 0..n {
                let wij = w[(i, j)];
                if wij != 0.0 {
                    we += wij * e2[j];
                    wh += wij * h[j];
                }
            }
            next[i] = c[0] + c[1] * e2[i] + c[2] * we + c[3] * h[i] + c[4] * wh;
        }
        std::mem::swap(&mut h, &mut next);
        if !f(t + 1, &h) {
            return;
        }
    }
}

fn nll(eps: &DMatrix<f64>, c: &[f64; 5], w: &DMatrix<f64>, h0: &[f64]) -> f64 {
    let t_len = eps.nrows();
    let mut total = 0.0;
    let mut ok = true;
    run(eps, c, w, h0, |t, h| {
        if t == 0 {
            return true;
        }
        if t >= t_len {
            return false;
        }
        for (i, &v) in h.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                ok = false;
                return false;
            }
            let e = eps[(t, i)];
            total += 0.5 * (LN_2PI + v.ln() + e * e / v);
        }
        true
    });
    if ok {
        total
    } else {
        f64::INFINITY
    }
}

/// `H_1..H_{T+1}` as a `(T+1) x n` matrix.
pub fn stgarch_variance_path(eps: &DMatrix<f64>, p: &StGarchParams, w: &WeightMatrix, h0: &[f64]) -> DMatrix<f64> {
    let (t, n) = eps.shape();
    let mut out = DMatrix::zeros(t + 1, n);
    run(eps, &p.to_array(), &w.w, h0, |r, h| {
        for (i, &v) in h.iter().enumerate() {
            out[(r, i)] = v;
        }
        true
    });
    out
}

pub fn stgarch_loglik(eps: &DMatrix<f64>, p: &StGarchParams, w: &WeightMatrix, h0: &[f64]) -> f64 {
    -nll(eps, &p.to_array(), &w.w, h0)
}

pub fn stgarch_forecast(p: &StGarchParams, w: &WeightMatrix, eps_t: &[f64], h_t: &[f64]) -> Vec<f64> {
    let n = eps_t.len();
    (0..n)
        .map(|i| {
            let we: f64 = (0..n).map(|j| w.w[(i, j)] * eps_t[j] * eps_t[j]).sum();
            let wh: f64 = (0..n).map(|j| w.w[(i, j)] * h_t[j]).sum();
            p.omega + p.a_self * eps_t[i] * eps_t[i] + p.a_sp * we + p.b_self * h_t[i] + p.b_sp * wh
        })
        .collect()
}

/// Gaussian QMLE over the five scalars with `H_1` at the sample variances.
/// The panel is divided by one common scale for the search, so only
/// `omega` maps back.
pub fn stgarch_fit(eps: &DMatrix<f64>, w: &WeightMatrix, opts: &FitOptions) -> Result<StGarchFit> {
    check_panel(eps, 500, "STGARCH")?;
    let n = eps.ncols();
    if w.n() != n {
        return Err(Error::Dimension(format!("{n} assets, {}x{} weights", w.n(), w.n())));
    }
    let h0 = sample_variances(eps);
    if h0.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateSeries("STGARCH input".into()));
    }
    let c2 = h0.iter().sum::<f64>() / n as f64;
    let scaled = eps / c2.sqrt();
    let h0_scaled: Vec<f64> = h0.iter().map(|v| v / c2).collect();
    let objective = |c: &[f64]| {
        if c[1..].iter().sum::<f64>() > SUM_CAP {
            return f64::INFINITY;
        }
        nll(&scaled, &[c[0], c[1], c[2], c[3], c[4]], &w.w, &h0_scaled)
    };
    let lower = [1e-10, 0.0, 0.0, 0.0, 0.0];
    let upper = [50.0, 0.999, 0.999, 0.999, 0.999];
    let start = [0.1, 0.05, 0.05, 0.7, 0.1];
    let r = minimize_multistart(&objective, &lower, &upper, &start, &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "STGARCH".into(),
            iterations: r.best.iterations,
        });
    }
    let mut params = StGarchParams::from_slice(&r.best.argmin);
    params.omega *= c2;
    Ok(StGarchFit {
        loglik: stgarch_loglik(eps, &params, w, &h0),
        params,
        h0,
        converged: true,
        seeds: r.seeds,
    })
}
