//! Spatial GARCH(1,1) estimated as per-asset GARCH-X fits,
//! `h_{i,t} = a0_i + a1_i e_{i,t-1}^2 + b1_i h_{i,t-1} + a2_i X_{i,t-1} + b2_i Y_{i,t-1}`
//! with `X = W e^2` and `Y = W h`, iterated until the spatial regressors
//! settle.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dstarch::check_panel;
use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::numerics::{minimize_multistart, FitOptions, MultiStart, OptOptions};
use crate::univariate::{check_series, garch11_qmle_unchecked, garchx_nll, LN_2PI};

const STABILITY_CAP: f64 = 0.999;
const INNER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpGarchXParams {
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
    pub a2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl SpGarchXParams {
    pub fn n(&self) -> usize {
        self.a0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if [&self.a1, &self.b1, &self.a2, &self.b2].iter().any(|v| v.len() != n) {
            return Err(Error::InvalidParam("spatial GARCH-X vectors differ in length".into()));
        }
        for i in 0..n {
            let c = self.asset(i);
            if !(c[0] > 0.0) || c[1..].iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParam(format!("asset {i}: need a0 > 0 and nonnegative coefficients")));
            }
        }
        Ok(())
    }

    fn asset(&self, i: usize) -> [f64; 5] {
        [self.a0[i], self.a1[i], self.b1[i], self.a2[i], self.b2[i]]
    }

    fn from_assets(rows: &[[f64; 5]]) -> Self {
        let col = |k: usize| rows.iter().map(|r| r[k]).collect();
        SpGarchXParams {
            a0: col(0),
            a1: col(1),
            b1: col(2),
            a2: col(3),
            b2: col(4),
        }
    }
}

pub fn spgarchx_k(n: usize) -> usize {
    5 * n
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpGarchXOptions {
    pub max_outer: usize,
    /// Stop when no parameter moves by more than this between iterations.
    pub tol: f64,
    /// When false `a2 = b2 = 0` throughout.
    pub spatial: bool,
}

impl Default for SpGarchXOptions {
    fn default() -> Self {
        SpGarchXOptions {
            max_outer: 50,
            tol: 1e-6,
            spatial: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpGarchXFit {
    pub params: SpGarchXParams,
    pub loglik: f64,
    pub h0: Vec<f64>,
    pub outer_iterations: usize,
    /// Largest parameter change at each outer iteration.
    pub max_change: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
}

/// `H_1..H_{T+1}` from the joint recursion, `(T+1) x n`.
pub fn spgarchx_variance_path(eps: &DMatrix<f64>, p: &SpGarchXParams, w: &WeightMatrix, h0: &[f64]) -> DMatrix<f64> {
    let (t_len, n) = eps.shape();
    let mut out = DMatrix::zeros(t_len + 1, n);
    for i in 0..n {
        out[(0, i)] = h0[i];
    }
    let mut e2 = vec![0.0; n];
    let mut h = h0.to_vec();
    for t in 0..t_len {
        for i in 0..n {
            e2[i] = eps[(t, i)] * eps[(t, i)];
        }
        for i in 0..n {
            let mut x = 0.0;
            let mut y = 0.0;
            for j in 0..n {
                x += w.w[(i, j)] * e2[j];
                y += w.w[(i, j)] * h[j];
            }
            out[(t + 1, i)] = p.a0[i] + p.a1[i] * e2[i] + p.b1[i] * h[i] + p.a2[i] * x + p.b2[i] * y;
        }
        for i in 0..n {
            h[i] = out[(t + 1, i)];
        }
    }
    out
}

pub fn spgarchx_loglik(eps: &DMatrix<f64>, p: &SpGarchXParams, w: &WeightMatrix, h0: &[f64]) -> f64 {
    let path = spgarchx_variance_path(eps, p, w, h0);
    let (t_len, n) = eps.shape();
    let mut ll = 0.0;
    for t in 1..t_len {
        for i in 0..n {
            let v = path[(t, i)];
            if !(v > 0.0) || !v.is_finite() {
                return f64::NEG_INFINITY;
            }
            ll -= 0.5 * (LN_2PI + v.ln() + eps[(t, i)] * eps[(t, i)] / v);
        }
    }
    ll
}

pub fn spgarchx_forecast(p: &SpGarchXParams, w: &WeightMatrix, eps_t: &[f64], h_t: &[f64]) -> Vec<f64> {
    let n = eps_t.len();
    (0..n)
        .map(|i| {
            let x: f64 = (0..n).map(|j| w.w[(i, j)] * eps_t[j] * eps_t[j]).sum();
            let y: f64 = (0..n).map(|j| w.w[(i, j)] * h_t[j]).sum();
            p.a0[i] + p.a1[i] * eps_t[i] * eps_t[i] + p.b1[i] * h_t[i] + p.a2[i] * x + p.b2[i] * y
        })
        .collect()
}

/// Lagged regressors for asset `i`: entry `t` holds `X_{i,t-1}` and
/// `Y_{i,t-1}` (entry 0 is unused).
fn regressors(eps: &DMatrix<f64>, h: &DMatrix<f64>, w: &DMatrix<f64>, i: usize) -> (Vec<f64>, Vec<f64>) {
    let (t_len, n) = eps.shape();
    let mut x = vec![0.0; t_len];
    let mut y = vec![0.0; t_len];
    for t in 1..t_len {
        for j in 0..n {
            let wij = w[(i, j)];
            if wij != 0.0 {
                x[t] += wij * eps[(t - 1, j)] * eps[(t - 1, j)];
                y[t] += wij * h[(t - 1, j)];
            }
        }
    }
    (x, y)
}

/// Fits one asset with the spatial regressors held fixed. Works on the
/// series divided by `s`, so `a0` is rescaled on the way in and out.
fn fit_asset(
    e: &[f64],
    x: &[f64],
    y: &[f64],
    var: f64,
    start: [f64; 5],
    spatial: bool,
    ms: &MultiStart,
    opt: &OptOptions,
) -> Result<[f64; 5]> {
    let s2 = var;
    let s = s2.sqrt();
    let e: Vec<f64> = e.iter().map(|v| v / s).collect();
    let x: Vec<f64> = x.iter().map(|v| v / s2).collect();
    let y: Vec<f64> = y.iter().map(|v| v / s2).collect();
    let objective = |c: &[f64]| {
        if c[1] + c[2] > STABILITY_CAP {
            return f64::INFINITY;
        }
        let mut h = vec![0.0; e.len()];
        garchx_nll(&e, Some(&x), Some(&y), [c[0], c[1], c[2], c[3], c[4]], 1.0, &mut h)
    };
    let spatial_hi = if spatial { 0.999 } else { 0.0 };
    let lower = [1e-10, 0.0, 0.0, 0.0, 0.0];
    let upper = [50.0, 0.999, 0.999, spatial_hi, spatial_hi];
    let mut scaled_start = start;
    scaled_start[0] /= s2;
    for k in 0..5 {
        scaled_start[k] = scaled_start[k].clamp(lower[k], upper[k]);
    }
    let r = minimize_multistart(&objective, &lower, &upper, &scaled_start, ms, opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "spatial GARCH-X asset fit".into(),
            iterations: r.best.iterations,
        });
    }
    let c = &r.best.argmin;
    Ok([c[0] * s2, c[1], c[2], c[3], c[4]])
}

/// Iterative QMLE. Univariate GARCH(1,1) fits give starting values and
/// variance paths; each outer iteration rebuilds `X` and `Y` from the
/// current paths, refits every asset, and refilters the joint system.
pub fn spgarchx_fit(eps: &DMatrix<f64>, w: &WeightMatrix, opts: &FitOptions) -> Result<SpGarchXFit> {
    spgarchx_fit_with(eps, w, &SpGarchXOptions::default(), opts)
}

pub fn spgarchx_fit_with(
    eps: &DMatrix<f64>,
    w: &WeightMatrix,
    outer: &SpGarchXOptions,
    opts: &FitOptions,
) -> Result<SpGarchXFit> {
    check_panel(eps, 250, "spatial GARCH-X")?;
    let (t_len, n) = eps.shape();
    if w.n() != n {
        return Err(Error::Dimension(format!("{n} assets, {}x{} weights", w.n(), w.n())));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|i| eps.column(i).iter().copied().collect()).collect();
    let h0 = cols
        .iter()
        .enumerate()
        .map(|(i, c)| check_series(c, 250, &format!("spatial GARCH-X asset {i}")))
        .collect::<Result<Vec<f64>>>()?;
    let uni = (0..n)
        .into_par_iter()
        .map(|i| {
            garch11_qmle_unchecked(&cols[i], h0[i], opts)
                .map_err(|e| Error::fit(format!("spatial GARCH-X start, asset {i}"), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut current: Vec<[f64; 5]> = uni
        .iter()
        .map(|f| [f.params.omega, f.params.alpha, f.params.beta, 0.0, 0.0])
        .collect();
    let mut h = DMatrix::from_fn(t_len, n, |t, i| uni[i].path.h[t]);
    // The outer tolerance is on parameters, so the inner fits must be
    // solved well below it or their noise alone keeps the loop alive.
    let inner = OptOptions {
        tol: opts.opt.tol.min(INNER_TOL),
        max_iter: opts.opt.max_iter.max(10_000),
    };
    let mut history = Vec::new();
    let mut converged = false;
    for iter in 1..=outer.max_outer {
        let ms = if iter == 1 { opts.multistart } else { MultiStart::single() };
        let next = (0..n)
            .into_par_iter()
            .map(|i| {
                let (x, y) = regressors(eps, &h, &w.w, i);
                let mut start = current[i];
                if iter == 1 && outer.spatial {
                    start[3] = 0.02;
                    start[4] = 0.02;
                }
                fit_asset(&cols[i], &x, &y, h0[i], start, outer.spatial, &ms, &inner).map_err(|e| Error::Fit {
                    context: format!("spatial GARCH-X outer iteration {iter}, asset {i}"),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let change = next
            .iter()
            .zip(&current)
            .enumerate()
            .flat_map(|(i, (a, b))| {
                let s2 = h0[i];
                (0..5).map(move |k| if k == 0 { (a[k] - b[k]).abs() / s2 } else { (a[k] - b[k]).abs() })
            })
            .fold(0.0_f64, f64::max);
        history.push(change);
        current = next;
        let params = SpGarchXParams::from_assets(&current);
        let path = spgarchx_variance_path(eps, &params, w, &h0);
        if path.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::State(iter));
        }
        h = path.rows(0, t_len).into_owned();
        log::debug!("spatial GARCH-X outer iteration {iter}: max change {change:.3e}");
        if change < outer.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            model: "spatial GARCH-X outer loop".into(),
            iterations: history.len(),
        });
    }
    let params = SpGarchXParams::from_assets(&current);
    let mut seeds = opts.multistart.seeds();
    seeds.sort_unstable();
    Ok(SpGarchXFit {
        loglik: spgarchx_loglik(eps, &params, w, &h0),
        params,
        h0,
        outer_iterations: history.len(),
        max_change: history,
        converged,
        seeds,
    })
}
