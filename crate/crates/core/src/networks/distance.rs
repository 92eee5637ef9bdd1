//! Pairwise distances between assets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Correlation,
    Piccolo,
}

/// Symmetric `n x n` distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: DMatrix<f64>,
    pub metric: Metric,
    pub tickers: Vec<String>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    /// Distances scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        DistanceMatrix {
            d: &self.d * c,
            ..self.clone()
        }
    }
}

pub(crate) fn default_tickers(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("A{i:02}")).collect()
}

fn col(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let t = m.nrows();
    &m.as_slice()[i * t..(i + 1) * t]
}

fn check_width(x: &DMatrix<f64>, tickers: &[String]) -> Result<()> {
    if x.ncols() < 2 {
        return Err(Error::InvalidPanel(format!("need at least 2 assets, got {}", x.ncols())));
    }
    if tickers.len() != x.ncols() {
        return Err(Error::Dimension(format!("{} tickers for {} columns", tickers.len(), x.ncols())));
    }
    Ok(())
}

/// `d_ij = sqrt(sum_t (e_t(i) - e_t(j))^2)` on residuals.
pub fn distance_euclidean(res: &DMatrix<f64>, tickers: &[String]) -> Result<DistanceMatrix> {
    check_width(res, tickers)?;
    let n = res.ncols();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = col(res, i).iter().zip(col(res, j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[(i, j)] = s.sqrt();
            d[(j, i)] = d[(i, j)];
        }
    }
    Ok(DistanceMatrix {
        d,
        metric: Metric::Euclidean,
        tickers: tickers.to_vec(),
    })
}

/// Pearson correlation matrix of the columns of `x`.
pub fn correlation_matrix(x: &DMatrix<f64>, tickers: &[String]) -> Result<DMatrix<f64>> {
    let (t, n) = x.shape();
    let mut centered = x.clone();
    let mut sd = vec![0.0; n];
    for i in 0..n {
        let m = col(x, i).iter().sum::<f64>() / t as f64;
        let mut ss = 0.0;
        for r in 0..t {
            centered[(r, i)] -= m;
            ss += centered[(r, i)] * centered[(r, i)];
        }
        let scale = col(x, i).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if !(ss > 1e-24 * scale * scale * t as f64) {
            return Err(Error::DegenerateSeries(tickers.get(i).cloned().unwrap_or_default()));
        }
        sd[i] = ss.sqrt();
    }
    let mut rho = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let c: f64 = col(&centered, i).iter().zip(col(&centered, j)).map(|(a, b)| a * b).sum();
            let r = (c / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            rho[(i, j)] = r;
            rho[(j, i)] = r;
        }
    }
    Ok(rho)
}

/// `d_ij = sqrt(2 (1 - rho_ij))` from Pearson correlations.
pub fn distance_correlation(x: &DMatrix<f64>, tickers: &[String]) -> Result<DistanceMatrix> {
    check_width(x, tickers)?;
    let rho = correlation_matrix(x, tickers)?;
    let n = x.ncols();
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (2.0 * (1.0 - rho[(i, j)])).max(0.0).sqrt() });
    Ok(DistanceMatrix {
        d,
        metric: Metric::Correlation,
        tickers: tickers.to_vec(),
    })
}

pub(crate) const LOG_SQ_FLOOR: f64 = 1e-10;

/// AR(p) with intercept on `y`, `p` chosen by BIC over `1..=max_p` on the
/// common sample `t >= max_p`. Returns the lag coefficients.
pub fn ar_bic(y: &[f64], max_p: usize) -> Result<Vec<f64>> {
    let t = y.len();
    if max_p == 0 || t < max_p + 3 * max_p + 10 {
        return Err(Error::fit("AR order selection", format!("{t} observations for max order {max_p}")));
    }
    let rows = t - max_p;
    let target = DMatrix::from_fn(rows, 1, |r, _| y[r + max_p]);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for p in 1..=max_p {
        let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { y[r + max_p - c] });
        let ls = least_squares(&x, &target)?;
        let sigma2 = ls.rss[0] / rows as f64;
        let bic = rows as f64 * sigma2.max(f64::MIN_POSITIVE).ln() + (p + 1) as f64 * (rows as f64).ln();
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, (1..=p).map(|k| ls.coef[(k, 0)]).collect()));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

/// Distance between zero-padded AR coefficient vectors.
pub fn piccolo_from_coefficients(coefs: &[Vec<f64>], tickers: &[String]) -> DistanceMatrix {
    let n = coefs.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let len = coefs[i].len().max(coefs[j].len());
            let s: f64 = (0..len)
                .map(|k| {
                    let a = coefs[i].get(k).copied().unwrap_or(0.0);
                    let b = coefs[j].get(k).copied().unwrap_or(0.0);
                    (a - b) * (a - b)
                })
                .sum();
            d[(i, j)] = s.sqrt();
            d[(j, i)] = d[(i, j)];
        }
    }
    DistanceMatrix {
        d,
        metric: Metric::Piccolo,
        tickers: tickers.to_vec(),
    }
}

/// Piccolo distance of AR models fitted to `ln(e^2 + 1e-10)`.
pub fn distance_piccolo(res: &DMatrix<f64>, tickers: &[String], max_p: usize) -> Result<DistanceMatrix> {
    check_width(res, tickers)?;
    let coefs = (0..res.ncols())
        .map(|i| {
            let y: Vec<f64> = col(res, i).iter().map(|e| (e * e + LOG_SQ_FLOOR).ln()).collect();
            ar_bic(&y, max_p).map_err(|e| Error::fit(format!("Piccolo AR for {}", tickers[i]), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(piccolo_from_coefficients(&coefs, tickers))
}
