//! Fixed-parameter one-step forecasting, log-scale losses, BIC and
//! Diebold-Mariano comparisons.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelFit, ModelKind};
use crate::networks::WeightKind;
use crate::numerics::{tail_prob, Dist};
use crate::panel::ResidualPanel;

/// Floor applied to `e^2` inside the log proxy.
pub const PROXY_FLOOR: f64 = 1e-16;

/// Forecasts for one out-of-sample date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub model: ModelKind,
    pub matrix: Option<WeightKind>,
    /// Variance forecasts made with data through the previous date.
    pub hhat: Vec<f64>,
    /// `ln max(e^2, 1e-16)` realised on `date`.
    pub proxy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub records: Vec<ForecastRecord>,
    /// First out-of-sample row whose forecast was not a positive finite
    /// variance; the window stops there.
    pub diverged_at: Option<usize>,
}

/// Forecasts rows `oos_start..T` of `res` with the fit's parameters held
/// fixed; states are filtered through all realised data before each date.
pub fn forecast_loop(fit: &ModelFit, res: &ResidualPanel, oos_start: usize) -> Result<ForecastRun> {
    let t_len = res.t();
    if oos_start == 0 || oos_start >= t_len {
        return Err(Error::InvalidParam(format!(
            "out-of-sample start {oos_start} leaves no in-sample or out-of-sample rows in {t_len}"
        )));
    }
    let path = fit.log_variance_path(&res.values)?;
    let n = res.n();
    let mut records = Vec::with_capacity(t_len - oos_start);
    let mut diverged_at = None;
    for t in oos_start..t_len {
        let hhat: Vec<f64> = (0..n).map(|i| path[(t, i)].exp()).collect();
        if hhat.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            diverged_at = Some(t);
            break;
        }
        let proxy = (0..n).map(|i| proxy(res.values[(t, i)])).collect();
        records.push(ForecastRecord {
            date: res.dates[t],
            model: fit.model(),
            matrix: fit.weights.as_ref().map(|w| w.kind),
            hhat,
            proxy,
        });
    }
    if records.is_empty() {
        return Err(Error::State(oos_start));
    }
    if let Some(t) = diverged_at {
        log::warn!("{} forecasts diverged at row {t}; window truncated", fit.model().label());
    }
    Ok(ForecastRun { records, diverged_at })
}

pub fn proxy(e: f64) -> f64 {
    (e * e).max(PROXY_FLOOR).ln()
}

/// RMSFE and MAFE of `ln hhat` against the proxy over all cells.
pub fn rmsfe_mafe(records: &[ForecastRecord]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut count = 0usize;
    for r in records {
        for (h, y) in r.hhat.iter().zip(&r.proxy) {
            let e = h.ln() - y;
            sq += e * e;
            abs += e.abs();
            count += 1;
        }
    }
    let c = count as f64;
    ((sq / c).sqrt(), abs / c)
}

/// Per-date cross-sectional mean of squared log errors.
pub fn period_losses(records: &[ForecastRecord]) -> Vec<f64> {
    records
        .iter()
        .map(|r| {
            let s: f64 = r.hhat.iter().zip(&r.proxy).map(|(h, y)| (h.ln() - y).powi(2)).sum();
            s / r.hhat.len() as f64
        })
        .collect()
}

/// `k ln(t_eff) - 2 loglik`, with `t_eff` the periods in the likelihood.
pub fn bic(loglik: f64, k: usize, t_eff: usize) -> f64 {
    k as f64 * (t_eff as f64).ln() - 2.0 * loglik
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmResult {
    pub statistic: f64,
    pub pvalue: f64,
    pub mean_loss_a: f64,
    pub mean_loss_b: f64,
}

pub const DM_MIN_LEN: usize = 30;

/// Diebold-Mariano test at horizon one on `d_t = a_t - b_t` with the
/// sample variance of `d` and a normal reference. With `harvey` the
/// statistic is scaled by `sqrt((T - 1) / T)` and referred to `t(T - 1)`.
/// Identical loss series give statistic 0 and p-value 1; a nonzero
/// constant differential has no variance and is an error.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], harvey: bool) -> Result<DmResult> {
    let t = loss_a.len();
    if loss_b.len() != t {
        return Err(Error::Dimension(format!("loss series of lengths {t} and {}", loss_b.len())));
    }
    if t < DM_MIN_LEN {
        return Err(Error::InvalidParam(format!("DM test needs at least {DM_MIN_LEN} periods, got {t}")));
    }
    if loss_a.iter().chain(loss_b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("DM test losses must be finite".into()));
    }
    let tf = t as f64;
    let mean_loss_a = loss_a.iter().sum::<f64>() / tf;
    let mean_loss_b = loss_b.iter().sum::<f64>() / tf;
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().all(|v| *v == 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            pvalue: 1.0,
            mean_loss_a,
            mean_loss_b,
        });
    }
    let dbar = d.iter().sum::<f64>() / tf;
    let var = d.iter().map(|v| (v - dbar).powi(2)).sum::<f64>() / (tf - 1.0);
    let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(var > 1e-28 * scale * scale) {
        return Err(Error::ZeroVariance);
    }
    let mut statistic = dbar / (var / tf).sqrt();
    let pvalue = if harvey {
        statistic *= ((tf - 1.0) / tf).sqrt();
        tail_prob(Dist::StudentT(tf - 1.0), statistic)?
    } else {
        tail_prob(Dist::Normal, statistic)?
    };
    Ok(DmResult {
        statistic,
        pvalue,
        mean_loss_a,
        mean_loss_b,
    })
}

/// Ranks `1..=m` by ascending mean loss; ties keep input order.
pub fn rank_by_loss(mean_loss: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mean_loss.len()).collect();
    order.sort_by(|&a, &b| mean_loss[a].total_cmp(&mean_loss[b]));
    let mut rank = vec![0; mean_loss.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// Losses of one (model, matrix) cell over the common window.
#[derive(Debug, Clone)]
pub struct CellLosses {
    pub model: String,
    pub matrix: Option<String>,
    pub rmsfe: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DmTable {
    pub models: Vec<String>,
    /// Matrix chosen for each model (lowest RMSFE).
    pub matrices: Vec<Option<String>>,
    pub mean_loss: Vec<f64>,
    pub rank: Vec<usize>,
    /// `statistic[(a, b)]` tests model `a` against model `b`.
    pub statistic: DMatrix<f64>,
    pub pvalue: DMatrix<f64>,
}

/// Keeps each model's lowest-RMSFE cell (first on ties), then runs every
/// pairwise DM test and ranks the models by mean loss.
pub fn dm_matrix(cells: &[CellLosses], harvey: bool) -> Result<DmTable> {
    let mut best: Vec<&CellLosses> = Vec::new();
    for c in cells {
        match best.iter_mut().find(|b| b.model == c.model) {
            Some(b) if c.rmsfe < b.rmsfe => *b = c,
            Some(_) => {}
            None => best.push(c),
        }
    }
    let m = best.len();
    if m < 2 {
        return Err(Error::InvalidParam(format!("DM comparison needs at least 2 models, got {m}")));
    }
    let mut statistic = DMatrix::zeros(m, m);
    let mut pvalue = DMatrix::from_element(m, m, 1.0);
    for a in 0..m {
        for b in (a + 1)..m {
            let r = dm_test(&best[a].losses, &best[b].losses, harvey)?;
            statistic[(a, b)] = r.statistic;
            statistic[(b, a)] = -r.statistic;
            pvalue[(a, b)] = r.pvalue;
            pvalue[(b, a)] = r.pvalue;
        }
    }
    let mean_loss: Vec<f64> = best
        .iter()
        .map(|c| c.losses.iter().sum::<f64>() / c.losses.len() as f64)
        .collect();
    Ok(DmTable {
        models: best.iter().map(|c| c.model.clone()).collect(),
        matrices: best.iter().map(|c| c.matrix.clone()).collect(),
        rank: rank_by_loss(&mean_loss),
        mean_loss,
        statistic,
        pvalue,
    })
}

impl DmTable {
    /// Square p-value matrix with a `model` header column.
    pub fn write_pvalues_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (a, name) in self.models.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.models.len()).map(|b| self.pvalue[(a, b)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `model, mean_loss, rank, matrix`, in rank order.
    pub fn write_ranking_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "mean_loss", "rank", "matrix"])?;
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.sort_by_key(|&i| self.rank[i]);
        for i in order {
            w.write_record([
                self.models[i].clone(),
                self.mean_loss[i].to_string(),
                self.rank[i].to_string(),
                self.matrices[i].clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub model: String,
    pub matrix: String,
    pub k: usize,
    pub bic: f64,
    pub rmsfe: f64,
    pub mafe: f64,
    /// Empty unless timings are requested, so reruns stay byte-identical.
    pub fit_seconds: Option<f64>,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["model", "matrix", "k", "bic", "rmsfe", "mafe", "fit_seconds"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
