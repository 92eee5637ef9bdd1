//! GARCH(1,1) and EGARCH(1,1) filters with Gaussian QMLE.
//!
//! Likelihoods condition on the first observation: `h_1` is fixed at the
//! sample variance and the sum runs over `t = 2..T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{minimize_multistart, FitOptions};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;
pub(crate) const E_ABS_Z: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const STATIONARITY_CAP: f64 = 0.999;
const STATIONARITY_WARN: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Garch11Params {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Garch11Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !(self.alpha >= 0.0) || !(self.beta >= 0.0) || !(self.alpha + self.beta < 1.0) {
            return Err(Error::InvalidParam(format!(
                "GARCH(1,1) needs omega > 0, alpha, beta >= 0, alpha + beta < 1; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Egarch11Params {
    pub omega: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Egarch11Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.abs() < 1.0) || !self.omega.is_finite() || !self.alpha.is_finite() || !self.gamma.is_finite() {
            return Err(Error::InvalidParam(format!("EGARCH(1,1) needs |beta| < 1; got {self:?}")));
        }
        Ok(())
    }
}

/// Conditional variances `h_1..h_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolPath {
    pub h: Vec<f64>,
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// GARCH(1,1) with optional spatial regressors,
/// `h_t = c0 + c1 e_{t-1}^2 + c2 h_{t-1} + c3 x_t + c4 y_t`,
/// where `x[t]` and `y[t]` already hold the lagged quantities that enter
/// `h_t`. Returns the conditional Gaussian negative log-likelihood over
/// `t = 2..T` and writes the path into `h`.
pub(crate) fn garchx_nll(eps: &[f64], x: Option<&[f64]>, y: Option<&[f64]>, c: [f64; 5], h0: f64, h: &mut [f64]) -> f64 {
    let t_len = eps.len();
    h[0] = h0;
    let mut nll = 0.0;
    for t in 1..t_len {
        let mut v = c[0] + c[1] * eps[t - 1] * eps[t - 1] + c[2] * h[t - 1];
        if let Some(x) = x {
            v += c[3] * x[t];
        }
        if let Some(y) = y {
            v += c[4] * y[t];
        }
        if !(v > 0.0) || !v.is_finite() {
            return f64::INFINITY;
        }
        h[t] = v;
        nll += 0.5 * (LN_2PI + v.ln() + eps[t] * eps[t] / v);
    }
    nll
}

pub fn garch11_filter(eps: &[f64], p: &Garch11Params, h0: f64) -> VolPath {
    let mut h = vec![0.0; eps.len().max(1)];
    h[0] = h0;
    for t in 1..eps.len() {
        h[t] = p.omega + p.alpha * eps[t - 1] * eps[t - 1] + p.beta * h[t - 1];
    }
    h.truncate(eps.len());
    VolPath { h }
}

/// Gaussian log-likelihood of `eps` under `p`, conditioning on `h_1 = h0`.
pub fn garch11_loglik(eps: &[f64], p: &Garch11Params, h0: f64) -> f64 {
    let mut h = vec![0.0; eps.len()];
    -garchx_nll(eps, None, None, [p.omega, p.alpha, p.beta, 0.0, 0.0], h0, &mut h)
}

pub fn garch11_forecast(p: &Garch11Params, eps_t: f64, h_t: f64) -> f64 {
    p.omega + p.alpha * eps_t * eps_t + p.beta * h_t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Garch11Fit {
    pub params: Garch11Params,
    pub loglik: f64,
    pub h0: f64,
    pub path: VolPath,
    pub converged: bool,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Negative log-likelihood at each start (scaled data).
    pub start_values: Vec<f64>,
    /// Negative log-likelihood at the optimum (scaled data).
    pub best_value: f64,
}

pub(crate) fn check_series(eps: &[f64], min_len: usize, what: &str) -> Result<f64> {
    if eps.len() < min_len {
        return Err(Error::fit(what, format!("needs at least {min_len} observations, got {}", eps.len())));
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit(what, "series has non-finite values"));
    }
    let var = sample_variance(eps);
    let scale = eps.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(var > 1e-24 * scale * scale) {
        return Err(Error::DegenerateSeries(what.to_string()));
    }
    Ok(var)
}

pub(crate) fn garch_penalised(c: &[f64]) -> bool {
    c[1] + c[2] > STATIONARITY_CAP
}

/// Gaussian QMLE of GARCH(1,1) under `omega >= 1e-10`, `alpha, beta in
/// [0, 0.999]` and `alpha + beta <= 0.999`. The series is scaled to unit
/// variance for the search; the likelihood is reported on the original
/// scale.
pub fn garch11_qmle(eps: &[f64], opts: &FitOptions) -> Result<Garch11Fit> {
    let var = check_series(eps, 250, "GARCH(1,1)")?;
    garch11_qmle_unchecked(eps, var, opts)
}

pub(crate) fn garch11_qmle_unchecked(eps: &[f64], var: f64, opts: &FitOptions) -> Result<Garch11Fit> {
    let s2 = var;
    let s = s2.sqrt();
    let scaled: Vec<f64> = eps.iter().map(|v| v / s).collect();
    let objective = |c: &[f64]| {
        if garch_penalised(c) {
            return f64::INFINITY;
        }
        let mut h = vec![0.0; scaled.len()];
        garchx_nll(&scaled, None, None, [c[0], c[1], c[2], 0.0, 0.0], 1.0, &mut h)
    };
    let lower = [1e-10, 0.0, 0.0];
    let upper = [50.0, 0.999, 0.999];
    let start = [0.05, 0.05, 0.90];
    let r = minimize_multistart(&objective, &lower, &upper, &start, &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "GARCH(1,1)".into(),
            iterations: r.best.iterations,
        });
    }
    let c = &r.best.argmin;
    let params = Garch11Params {
        omega: c[0] * s2,
        alpha: c[1],
        beta: c[2],
    };
    if params.alpha + params.beta > STATIONARITY_WARN {
        log::warn!(
            "GARCH(1,1) estimate near the stationarity boundary: alpha + beta = {:.4}",
            params.alpha + params.beta
        );
    }
    let path = garch11_filter(eps, &params, var);
    Ok(Garch11Fit {
        loglik: garch11_loglik(eps, &params, var),
        params,
        h0: var,
        path,
        converged: r.best.converged,
        iterations: r.best.iterations,
        seeds: r.seeds,
        start_values: r.start_values,
        best_value: r.best.value,
    })
}

/// EGARCH(1,1) in log-variance form,
/// `ln h_t = omega + beta ln h_{t-1} + alpha |z_{t-1}| + gamma z_{t-1}`.
pub(crate) fn egarch_nll(eps: &[f64], p: &[f64], log_h0: f64, lh: &mut [f64]) -> f64 {
    let (omega, beta, alpha, gamma) = (p[0], p[1], p[2], p[3]);
    lh[0] = log_h0;
    let mut nll = 0.0;
    for t in 1..eps.len() {
        let z = eps[t - 1] * (-0.5 * lh[t - 1]).exp();
        let v = omega + beta * lh[t - 1] + alpha * z.abs() + gamma * z;
        if !v.is_finite() || v.abs() > 700.0 {
            return f64::INFINITY;
        }
        lh[t] = v;
        nll += 0.5 * (LN_2PI + v + eps[t] * eps[t] * (-v).exp());
    }
    nll
}

pub fn egarch11_filter(eps: &[f64], p: &Egarch11Params, h0: f64) -> VolPath {
    let mut lh = vec![0.0; eps.len()];
    if !eps.is_empty() {
        lh[0] = h0.ln();
    }
    for t in 1..eps.len() {
        let z = eps[t - 1] * (-0.5 * lh[t - 1]).exp();
        lh[t] = p.omega + p.beta * lh[t - 1] + p.alpha * z.abs() + p.gamma * z;
    }
    VolPath {
        h: lh.into_iter().map(f64::exp).collect(),
    }
}

pub fn egarch11_loglik(eps: &[f64], p: &Egarch11Params, h0: f64) -> f64 {
    let mut lh = vec![0.0; eps.len()];
    -egarch_nll(eps, &[p.omega, p.beta, p.alpha, p.gamma], h0.ln(), &mut lh)
}

pub fn egarch11_forecast(p: &Egarch11Params, eps_t: f64, h_t: f64) -> f64 {
    let z = eps_t / h_t.sqrt();
    (p.omega + p.beta * h_t.ln() + p.alpha * z.abs() + p.gamma * z).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Egarch11Fit {
    pub params: Egarch11Params,
    pub loglik: f64,
    pub h0: f64,
    pub path: VolPath,
    pub converged: bool,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub start_values: Vec<f64>,
    pub best_value: f64,
}

/// Gaussian QMLE of EGARCH(1,1) with `beta in [-0.999, 0.999]` and the
/// remaining parameters free.
pub fn egarch11_qmle(eps: &[f64], opts: &FitOptions) -> Result<Egarch11Fit> {
    let var = check_series(eps, 250, "EGARCH(1,1)")?;
    let s2 = var;
    let scaled: Vec<f64> = eps.iter().map(|v| v / s2.sqrt()).collect();
    let objective = |c: &[f64]| {
        let mut lh = vec![0.0; scaled.len()];
        egarch_nll(&scaled, c, 0.0, &mut lh)
    };
    let inf = f64::INFINITY;
    let lower = [-inf, -0.999, -inf, -inf];
    let upper = [inf, 0.999, inf, inf];
    let start = [-0.1 * E_ABS_Z, 0.95, 0.1, 0.0];
    let r = minimize_multistart(&objective, &lower, &upper, &start, &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "EGARCH(1,1)".into(),
            iterations: r.best.iterations,
        });
    }
    let c = &r.best.argmin;
    // ln h on the original scale is shifted by ln s2
    let params = Egarch11Params {
        omega: c[0] + (1.0 - c[1]) * s2.ln(),
        beta: c[1],
        alpha: c[2],
        gamma: c[3],
    };
    let path = egarch11_filter(eps, &params, var);
    Ok(Egarch11Fit {
        loglik: egarch11_loglik(eps, &params, var),
        params,
        h0: var,
        path,
        converged: r.best.converged,
        iterations: r.best.iterations,
        seeds: r.seeds,
        start_values: r.start_values,
        best_value: r.best.value,
    })
}
