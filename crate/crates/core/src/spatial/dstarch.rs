//! Dynamic spatiotemporal log-ARCH,
//! `H*_t = omega + Gamma e*_{t-1} + rho W e*_t` with `e*_t = ln e_t^2`,
//! estimated by two-step linear GMM on the within-transformed panel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::numerics::linalg::max_asymmetry;
use crate::numerics::{sym_eigen, LuFactor};
use crate::univariate::LN_2PI;

/// `-E ln z^2` for standard normal `z` (Euler's constant plus `ln 2`).
pub const LOG_CHI2_BIAS: f64 = 1.270_362_845_461_478;

/// Floor applied to `e^2` before taking logs.
pub const SQ_FLOOR: f64 = 1e-16;

/// Cap on `|rho|`; larger GMM estimates are pinned here.
pub const RHO_CAP: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstarchParams {
    pub rho: f64,
    pub gamma: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl DstarchParams {
    pub fn n(&self) -> usize {
        self.gamma.len()
    }
}

pub fn dstarch_k(n: usize) -> usize {
    n + 1
}

/// No-spatial benchmark: `rho = 0`, per-asset AR(1) on `e*`.
pub fn logarch_k(n: usize) -> usize {
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmRoute {
    /// Spectral route when `W` is symmetric to 1e-8, direct otherwise.
    #[default]
    Auto,
    Direct,
    Spectral,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DstarchFit {
    pub params: DstarchParams,
    /// Hansen J statistic at the second-step estimate.
    pub gmm_objective: f64,
    /// Gaussian quasi-log-likelihood with `ln h_t = E_{t-1} e*_t + 1.2704`.
    pub loglik: f64,
    pub route: GmmRoute,
    pub rho_capped: bool,
    /// Number of cells where `e^2` was floored.
    pub floored: usize,
    pub converged: bool,
}

/// `ln max(e^2, 1e-16)` cell by cell, plus the number of floored cells.
pub fn log_squares(eps: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut floored = 0;
    let y = eps.map(|e| {
        let s = e * e;
        if s < SQ_FLOOR {
            floored += 1;
            SQ_FLOOR.ln()
        } else {
            s.ln()
        }
    });
    if floored > 0 {
        log::warn!("{floored} squared residuals floored at {SQ_FLOOR:e} before the log transform");
    }
    (y, floored)
}

fn column_means(y: &DMatrix<f64>, rows: std::ops::Range<usize>) -> Vec<f64> {
    let len = rows.len() as f64;
    (0..y.ncols()).map(|i| rows.clone().map(|t| y[(t, i)]).sum::<f64>() / len).collect()
}

/// Within-transformed panel: current values `y_t`, lags `y_{t-1}` and the
/// two sample means they were centred by.
struct Within {
    cur: DMatrix<f64>,
    lag: DMatrix<f64>,
    mean_cur: Vec<f64>,
    mean_lag: Vec<f64>,
}

impl Within {
    fn new(y: &DMatrix<f64>) -> Self {
        let t = y.nrows();
        let mean_cur = column_means(y, 1..t);
        let mean_lag = column_means(y, 0..t - 1);
        let cur = DMatrix::from_fn(t - 1, y.ncols(), |r, i| y[(r + 1, i)] - mean_cur[i]);
        let lag = DMatrix::from_fn(t - 1, y.ncols(), |r, i| y[(r, i)] - mean_lag[i]);
        Within {
            cur,
            lag,
            mean_cur,
            mean_lag,
        }
    }
}

/// Spatial lags `W y_t` for every row of `y` (rows are periods).
fn spatial_lag(y: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    y * w.transpose()
}

/// Spatial lags through the eigenbasis: `Q' diag(l^p) Q y_t`.
fn spectral_lag(y: &DMatrix<f64>, q: &DMatrix<f64>, values: &[f64], power: i32) -> DMatrix<f64> {
    let mut rotated = y * q.transpose();
    for (k, l) in values.iter().enumerate() {
        let f = l.powi(power);
        rotated.column_mut(k).scale_mut(f);
    }
    rotated * q
}

/// Moment system `g(theta) = Z'(y - X theta)` with `theta = (rho, gamma)`.
struct Moments {
    /// Instrument columns, grouped by asset.
    inst: Vec<Vec<DVector<f64>>>,
    /// Offset of each asset's block in the stacked moment vector.
    offset: Vec<usize>,
    m: usize,
    zx: DMatrix<f64>,
    zy: DVector<f64>,
    periods: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Moments {
    fn new(within: &Within, wy: &DMatrix<f64>, wlag: &DMatrix<f64>, w2lag: &DMatrix<f64>) -> Result<Self> {
        let (periods, n) = within.cur.shape();
        let mut inst = Vec::with_capacity(n);
        for i in 0..n {
            let candidates = [
                within.lag.column(i).into_owned(),
                wlag.column(i).into_owned(),
                w2lag.column(i).into_owned(),
            ];
            inst.push(independent_columns(&candidates));
        }
        let mut offset = Vec::with_capacity(n);
        let mut m = 0;
        for cols in &inst {
            offset.push(m);
            m += cols.len();
        }
        let mut zx = DMatrix::zeros(m, n + 1);
        let mut zy = DVector::zeros(m);
        for i in 0..n {
            let own = within.lag.column(i);
            let lhs = within.cur.column(i);
            let endog = wy.column(i);
            for (r, z) in inst[i].iter().enumerate() {
                let row = offset[i] + r;
                zx[(row, 0)] = dot(z.as_slice(), endog.as_slice());
                zx[(row, 1 + i)] = dot(z.as_slice(), own.as_slice());
                zy[row] = dot(z.as_slice(), lhs.as_slice());
            }
        }
        if zx.column(0).amax() == 0.0 {
            return Err(Error::InstrumentRank("the spatial lag is identically zero".into()));
        }
        let rank = zx.clone().svd(false, false).rank(1e-10 * zx.amax());
        if rank < n + 1 {
            return Err(Error::InstrumentRank(format!(
                "{m} moment conditions identify only {rank} of {} parameters",
                n + 1
            )));
        }
        Ok(Moments {
            inst,
            offset,
            m,
            zx,
            zy,
            periods,
        })
    }

    /// Block-diagonal `(sum_t Z_t' Z_t)^-1`, the first-step weight.
    fn first_weight(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.m, self.m);
        for (i, cols) in self.inst.iter().enumerate() {
            let k = cols.len();
            let block = DMatrix::from_fn(k, k, |a, b| dot(cols[a].as_slice(), cols[b].as_slice()));
            let inv = invert(&block)?;
            out.view_mut((self.offset[i], self.offset[i]), (k, k)).copy_from(&inv);
        }
        Ok(out)
    }

    /// Inverse of `S = sum_t Z_t' u_t u_t' Z_t` for residuals `u` (periods x n).
    fn efficient_weight(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = u.ncols();
        // zu[row][t] = z_{i,t} u_{i,t} for the moment in `row`
        let mut zu = DMatrix::zeros(self.periods, self.m);
        for i in 0..n {
            for (r, z) in self.inst[i].iter().enumerate() {
                let row = self.offset[i] + r;
                for t in 0..self.periods {
                    zu[(t, row)] = z[t] * u[(t, i)];
                }
            }
        }
        let s = zu.transpose() * &zu;
        invert(&s)
    }

    /// Linear GMM solution for `weight`.
    fn solve(&self, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
        let xw = self.zx.transpose() * weight;
        let a = &xw * &self.zx;
        let b = &xw * &self.zy;
        let lu = LuFactor::new(&a)?;
        let mut x = b.as_slice().to_vec();
        let mut scratch = vec![0.0; x.len()];
        lu.solve_in_place(&mut x, &mut scratch);
        Ok(DVector::from_vec(x))
    }

    /// `gamma` minimising the objective with `rho` held fixed.
    fn profile(&self, weight: &DMatrix<f64>, rho: f64) -> Result<(DVector<f64>, f64)> {
        let n = self.zx.ncols() - 1;
        let g = self.zx.columns(1, n).into_owned();
        let rhs = &self.zy - self.zx.column(0) * rho;
        let gw = g.transpose() * weight;
        let lu = LuFactor::new(&(&gw * &g))?;
        let mut gamma = (&gw * &rhs).as_slice().to_vec();
        let mut scratch = vec![0.0; n];
        lu.solve_in_place(&mut gamma, &mut scratch);
        let gamma = DVector::from_vec(gamma);
        let r = rhs - &g * &gamma;
        let q = (r.transpose() * weight * &r)[(0, 0)];
        Ok((gamma, q))
    }

    fn objective(&self, weight: &DMatrix<f64>, theta: &DVector<f64>) -> f64 {
        let r = &self.zy - &self.zx * theta;
        (r.transpose() * weight * &r)[(0, 0)]
    }
}

/// Keeps nonzero columns that are not linear combinations of earlier ones.
fn independent_columns(cols: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for c in cols {
        let norm = c.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = c / norm;
        for b in &basis {
            let proj = r.dot(b);
            r -= b * proj;
        }
        let rn = r.norm();
        if rn > 1e-8 {
            basis.push(r / rn);
            kept.push(c.clone());
        }
    }
    kept
}

fn invert(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = LuFactor::new(a).map_err(|_| Error::InstrumentRank("instrument cross-product is singular".into()))?;
    Ok(lu.solve(&DMatrix::identity(a.nrows(), a.ncols())))
}

fn residuals(within: &Within, wy: &DMatrix<f64>, rho: f64, gamma: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(within.cur.nrows(), within.cur.ncols(), |t, i| {
        within.cur[(t, i)] - rho * wy[(t, i)] - gamma[i] * within.lag[(t, i)]
    })
}

/// Minimises a convex function of one variable on `[lo, hi]` by golden
/// section search.
fn golden_section(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let candidates = [(lo, f(lo)?), (x, f(x)?), (hi, f(hi)?)];
    Ok(candidates.iter().min_by(|p, q| p.1.total_cmp(&q.1)).map(|p| p.0).unwrap_or(x))
}

/// One GMM step. Returns `(rho, gamma, capped)`.
fn gmm_step(mom: &Moments, weight: &DMatrix<f64>, spectral: bool) -> Result<(f64, Vec<f64>, bool)> {
    if spectral {
        let rho = golden_section(|r| Ok(mom.profile(weight, r)?.1), -RHO_CAP, RHO_CAP, 1e-12)?;
        let (gamma, _) = mom.profile(weight, rho)?;
        let capped = (RHO_CAP - rho.abs()) < 1e-9;
        return Ok((rho, gamma.as_slice().to_vec(), capped));
    }
    let theta = mom.solve(weight)?;
    if theta[0].abs() > RHO_CAP {
        let rho = RHO_CAP.copysign(theta[0]);
        let (gamma, _) = mom.profile(weight, rho)?;
        return Ok((rho, gamma.as_slice().to_vec(), true));
    }
    Ok((theta[0], theta.as_slice()[1..].to_vec(), false))
}

pub(crate) fn check_panel(eps: &DMatrix<f64>, min_t: usize, what: &str) -> Result<()> {
    let (t, n) = eps.shape();
    if n == 0 || t < min_t {
        return Err(Error::fit(what, format!("needs at least {min_t} periods and one asset, got {t} x {n}")));
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::fit(what, "panel has non-finite values"));
    }
    Ok(())
}

pub fn dstarch_fit(eps: &DMatrix<f64>, w: &WeightMatrix) -> Result<DstarchFit> {
    dstarch_fit_with(eps, w, GmmRoute::Auto)
}

/// Two-step GMM with instruments `(e*_{i,t-1}, (W e*_{t-1})_i,
/// (W^2 e*_{t-1})_i)` per asset; zero or collinear instruments are
/// dropped. The second step weights by the inverse of the residual moment
/// covariance, allowing cross-asset correlation but no serial correlation.
pub fn dstarch_fit_with(eps: &DMatrix<f64>, w: &WeightMatrix, route: GmmRoute) -> Result<DstarchFit> {
    check_panel(eps, 30, "DST-ARCH")?;
    let (t, n) = eps.shape();
    if w.n() != n {
        return Err(Error::Dimension(format!("{n} assets, {}x{} weights", w.n(), w.n())));
    }
    let (y, floored) = log_squares(eps);
    let within = Within::new(&y);
    let symmetric = max_asymmetry(&w.w) <= 1e-8;
    let route = match route {
        GmmRoute::Auto if symmetric => GmmRoute::Spectral,
        GmmRoute::Auto => GmmRoute::Direct,
        r => r,
    };
    let spectral = route == GmmRoute::Spectral;
    let (wy, wlag, w2lag) = if spectral {
        let eig = sym_eigen(&w.w)?;
        (
            spectral_lag(&within.cur, &eig.q, &eig.values, 1),
            spectral_lag(&within.lag, &eig.q, &eig.values, 1),
            spectral_lag(&within.lag, &eig.q, &eig.values, 2),
        )
    } else {
        let wlag = spatial_lag(&within.lag, &w.w);
        let w2lag = spatial_lag(&wlag, &w.w);
        (spatial_lag(&within.cur, &w.w), wlag, w2lag)
    };
    let mom = Moments::new(&within, &wy, &wlag, &w2lag)?;

    let w1 = mom.first_weight()?;
    let (rho1, gamma1, _) = gmm_step(&mom, &w1, spectral)?;
    let u = residuals(&within, &wy, rho1, &gamma1);
    let w2 = mom.efficient_weight(&u)?;
    let (rho, gamma, capped) = gmm_step(&mom, &w2, spectral)?;
    if capped {
        log::warn!("DST-ARCH: |rho| estimate exceeds {RHO_CAP}; rho fixed at {rho}");
    }
    let mut theta = DVector::zeros(n + 1);
    theta[0] = rho;
    theta.as_mut_slice()[1..].copy_from_slice(&gamma);
    let gmm_objective = mom.objective(&w2, &theta);

    let phi0 = intercepts(&w.w, rho, &gamma, &within.mean_cur, &within.mean_lag);
    let params = DstarchParams { rho, gamma, phi0 };
    let loglik = dstarch_loglik(eps, &params, w)?;
    log::debug!("DST-ARCH fitted on {t} x {n}: rho = {rho:.4}, J = {gmm_objective:.3}");
    Ok(DstarchFit {
        params,
        gmm_objective,
        loglik,
        route,
        rho_capped: capped,
        floored,
        converged: true,
    })
}

/// `phi0 = (I - rho W) ybar - Gamma ybar_lag`.
fn intercepts(w: &DMatrix<f64>, rho: f64, gamma: &[f64], mean_cur: &[f64], mean_lag: &[f64]) -> Vec<f64> {
    let n = gamma.len();
    (0..n)
        .map(|i| {
            let wy: f64 = (0..n).map(|j| w[(i, j)] * mean_cur[j]).sum();
            mean_cur[i] - rho * wy - gamma[i] * mean_lag[i]
        })
        .collect()
}

/// Per-asset AR(1) on `e*` with intercept: the DST-ARCH model with
/// `rho = 0`.
pub fn logarch_fit(eps: &DMatrix<f64>) -> Result<DstarchFit> {
    check_panel(eps, 30, "log-ARCH")?;
    let n = eps.ncols();
    let (y, floored) = log_squares(eps);
    let within = Within::new(&y);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        let x = within.lag.column(i);
        let sxx = x.dot(&x);
        if !(sxx > 0.0) {
            return Err(Error::DegenerateSeries(format!("log-ARCH asset {i}")));
        }
        gamma.push(x.dot(&within.cur.column(i)) / sxx);
    }
    let zero = DMatrix::zeros(n, n);
    let phi0 = intercepts(&zero, 0.0, &gamma, &within.mean_cur, &within.mean_lag);
    let params = DstarchParams { rho: 0.0, gamma, phi0 };
    let loglik = loglik_from_path(eps, &log_path_dense(&y, &params, &zero)?);
    Ok(DstarchFit {
        params,
        gmm_objective: 0.0,
        loglik,
        route: GmmRoute::Direct,
        rho_capped: false,
        floored,
        converged: true,
    })
}

/// Forecast rows `E_{t-1} e*_t` for `t = 1..T+1` (`(T+1) x n`). Row 0 has
/// no conditioning information and holds `(I - rho W)^-1 (Gamma ybar +
/// phi0)` evaluated at the sample mean.
fn log_path_dense(y: &DMatrix<f64>, p: &DstarchParams, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, n) = y.shape();
    let s = DMatrix::identity(n, n) - w * p.rho;
    let lu = LuFactor::new(&s)?;
    let mut out = DMatrix::zeros(t + 1, n);
    let mut b = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let means = column_means(y, 0..t);
    for r in 0..=t {
        for i in 0..n {
            let prev = if r == 0 { means[i] } else { y[(r - 1, i)] };
            b[i] = p.gamma[i] * prev + p.phi0[i];
        }
        lu.solve_in_place(&mut b, &mut scratch);
        for i in 0..n {
            out[(r, i)] = b[i];
        }
    }
    Ok(out)
}

fn loglik_from_path(eps: &DMatrix<f64>, path: &DMatrix<f64>) -> f64 {
    let (t, n) = eps.shape();
    let mut ll = 0.0;
    for r in 1..t {
        for i in 0..n {
            let lh = path[(r, i)] + LOG_CHI2_BIAS;
            ll -= 0.5 * (LN_2PI + lh + eps[(r, i)] * eps[(r, i)] * (-lh).exp());
        }
    }
    ll
}

/// One-step forecasts of `e*` along the sample, `(T+1) x n`; the last row
/// forecasts the period after the sample.
pub fn dstarch_log_path(eps: &DMatrix<f64>, p: &DstarchParams, w: &WeightMatrix) -> Result<DMatrix<f64>> {
    let (y, _) = log_squares(eps);
    log_path_dense(&y, p, &w.w)
}

pub fn logarch_log_path(eps: &DMatrix<f64>, p: &DstarchParams) -> Result<DMatrix<f64>> {
    let n = eps.ncols();
    let (y, _) = log_squares(eps);
    log_path_dense(&y, p, &DMatrix::zeros(n, n))
}

pub fn dstarch_loglik(eps: &DMatrix<f64>, p: &DstarchParams, w: &WeightMatrix) -> Result<f64> {
    Ok(loglik_from_path(eps, &dstarch_log_path(eps, p, w)?))
}

/// `(I - rho W)^-1 (Gamma e*_T + phi0)` on the log scale.
pub fn dstarch_forecast(p: &DstarchParams, eps_star_t: &[f64], w: &WeightMatrix) -> Result<Vec<f64>> {
    let n = p.n();
    if eps_star_t.len() != n || w.n() != n {
        return Err(Error::Dimension(format!("{n} parameters, {} values, {} weights", eps_star_t.len(), w.n())));
    }
    let s = DMatrix::identity(n, n) - &w.w * p.rho;
    let lu = LuFactor::new(&s)?;
    let mut b: Vec<f64> = (0..n).map(|i| p.gamma[i] * eps_star_t[i] + p.phi0[i]).collect();
    let mut scratch = vec![0.0; n];
    lu.solve_in_place(&mut b, &mut scratch);
    Ok(b)
}
