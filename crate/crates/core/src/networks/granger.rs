//! Pairwise Granger causality on bivariate VARs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{least_squares, tail_prob, Dist};

/// `g[(i, j)] = 1` when asset `j` Granger-causes asset `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrangerFilter {
    pub g: DMatrix<u8>,
    pub pvals: DMatrix<f64>,
    pub lag_order: DMatrix<usize>,
    pub alpha: f64,
}

pub const DEFAULT_MAX_LAG: usize = 5;

fn lagged_design(series: &[&[f64]], p: usize, start: usize, rows: usize) -> DMatrix<f64> {
    let k = 1 + p * series.len();
    DMatrix::from_fn(rows, k, |r, c| {
        if c == 0 {
            return 1.0;
        }
        let s = (c - 1) / p;
        let lag = (c - 1) % p + 1;
        series[s][start + r - lag]
    })
}

/// Lag order of the bivariate VAR on `(x, z)` minimising
/// `ln det Sigma + ln(T_c) 2 (2p + 1) / T_c` over `1..=max_lag`, every order
/// evaluated on the sample `t >= max_lag`.
pub fn select_var_lag(x: &[f64], z: &[f64], max_lag: usize) -> Result<usize> {
    let t = x.len();
    let rows = t - max_lag;
    let y = DMatrix::from_fn(rows, 2, |r, c| if c == 0 { x[r + max_lag] } else { z[r + max_lag] });
    let mut best = (f64::INFINITY, 1);
    for p in 1..=max_lag {
        let design = lagged_design(&[x, z], p, max_lag, rows);
        let ls = least_squares(&design, &y)?;
        let e = &ls.resid;
        let s11 = e.column(0).dot(&e.column(0)) / rows as f64;
        let s22 = e.column(1).dot(&e.column(1)) / rows as f64;
        let s12 = e.column(0).dot(&e.column(1)) / rows as f64;
        let det = s11 * s22 - s12 * s12;
        let tc = rows as f64;
        let bic = det.max(f64::MIN_POSITIVE).ln() + tc.ln() * (2 * (2 * p + 1)) as f64 / tc;
        if bic < best.0 {
            best = (bic, p);
        }
    }
    Ok(best.1)
}

/// F test that the `p` lags of `z` are jointly zero in the equation for
/// `x`. Returns `(F, p-value)` with `F(p, N - 2p - 1)` degrees of freedom.
pub fn granger_f_test(x: &[f64], z: &[f64], p: usize) -> Result<(f64, f64)> {
    let rows = x.len() - p;
    let df2 = rows as f64 - (2 * p + 1) as f64;
    if df2 < 1.0 {
        return Err(Error::fit("Granger F test", format!("{rows} observations for lag {p}")));
    }
    let y = DMatrix::from_fn(rows, 1, |r, _| x[r + p]);
    let unrestricted = least_squares(&lagged_design(&[x, z], p, p, rows), &y)?;
    let restricted = least_squares(&lagged_design(&[x], p, p, rows), &y)?;
    let rss_u = unrestricted.rss[0];
    let rss_r = restricted.rss[0];
    if !(rss_u > 0.0) {
        return Err(Error::fit("Granger F test", "unrestricted regression fits exactly"));
    }
    let f = ((rss_r - rss_u) / p as f64) / (rss_u / df2);
    let f = f.max(0.0);
    Ok((f, tail_prob(Dist::F(p as f64, df2), f)?))
}

/// Tests every ordered pair of columns of `x`. The lag order is chosen once
/// per unordered pair and used for both directions.
pub fn granger_matrix(x: &DMatrix<f64>, tickers: &[String], alpha: f64, max_lag: usize) -> Result<GrangerFilter> {
    let (t, n) = x.shape();
    if t < 50 {
        return Err(Error::InvalidPanel(format!("Granger tests need T >= 50, got {t}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if max_lag == 0 || t < 4 * max_lag + 10 {
        return Err(Error::InvalidParam(format!("max lag {max_lag} too large for T = {t}")));
    }
    let col = |i: usize| &x.as_slice()[i * t..(i + 1) * t];
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<(usize, f64, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let name = || format!("{} / {}", tickers[i], tickers[j]);
            let p = select_var_lag(col(i), col(j), max_lag).map_err(|e| Error::fit(name(), e.to_string()))?;
            let (_, pij) = granger_f_test(col(i), col(j), p).map_err(|e| Error::fit(name(), e.to_string()))?;
            let (_, pji) = granger_f_test(col(j), col(i), p).map_err(|e| Error::fit(name(), e.to_string()))?;
            Ok((p, pij, pji))
        })
        .collect();
    let mut g = DMatrix::<u8>::zeros(n, n);
    let mut pvals = DMatrix::from_element(n, n, 1.0);
    let mut lag_order = DMatrix::<usize>::zeros(n, n);
    for (&(i, j), r) in pairs.iter().zip(results) {
        let (p, pij, pji) = r?;
        pvals[(i, j)] = pij;
        pvals[(j, i)] = pji;
        lag_order[(i, j)] = p;
        lag_order[(j, i)] = p;
        g[(i, j)] = u8::from(pij < alpha);
        g[(j, i)] = u8::from(pji < alpha);
    }
    Ok(GrangerFilter { g, pvals, lag_order, alpha })
}
