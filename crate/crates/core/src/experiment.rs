//! Configuration-driven runner: panel, weight matrices, grid of fits,
//! forecast loops and reports.
//!
//! Grid cells run as independent jobs on a pool capped at the configured
//! parallelism; a single collector writes every output file afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DgpSpec, ExperimentConfig, MeanModel, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluate::{
    dm_matrix, forecast_loop, period_losses, rmsfe_mafe, write_metrics_csv, CellLosses, ForecastRecord, MetricsRow,
};
use crate::model::{fit_model, ModelSpec};
use crate::networks::{read_weight_csv, NetworkBuilder, WeightKind, WeightMatrix};
use crate::panel::{load_panel, var1_residuals, PanelFormat, ResidualPanel, ReturnsPanel};
use crate::simulate;
use crate::spatial::StEgarchWeights;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Panel prepared for fitting: residuals on all rows, with the mean model
/// and networks estimated on the in-sample rows only.
pub struct Prepared {
    pub returns: ReturnsPanel,
    pub residuals: ResidualPanel,
    /// First out-of-sample row of `residuals`.
    pub oos_start: usize,
    /// In-sample returns rows.
    pub returns_in: usize,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = load_panel(&cfg.input, PanelFormat::WideCsv)?;
    let returns = if cfg.prices { ReturnsPanel::from_prices(&raw)? } else { raw };
    returns.check_model_ready()?;
    // The VAR drops the first row, so residual row r is returns row r + 1.
    let offset = match cfg.mean_model {
        MeanModel::Var1 => 1,
        MeanModel::None => 0,
    };
    let usable = returns.t().saturating_sub(offset);
    cfg.validate_length(usable)?;
    let oos_start = usable - cfg.oos_length;
    let returns_in = oos_start + offset;
    let residuals = match cfg.mean_model {
        MeanModel::Var1 => var1_residuals(&returns, returns_in)?,
        MeanModel::None => ResidualPanel::from_returns(&returns),
    };
    Ok(Prepared {
        returns,
        residuals,
        oos_start,
        returns_in,
    })
}

/// Builds every matrix the config needs from in-sample data, in config
/// order; failures are kept per kind.
pub fn build_weights(cfg: &ExperimentConfig, prep: &Prepared) -> Vec<(WeightKind, Result<WeightMatrix>)> {
    let returns = prep.returns.values().rows(0, prep.returns_in).into_owned();
    let residuals = prep.residuals.values.rows(0, prep.oos_start).into_owned();
    let tickers = prep.returns.tickers();
    let mut builder = NetworkBuilder::new(&returns, &residuals, tickers, cfg.network_options());
    cfg.required_matrices()
        .into_iter()
        .map(|k| {
            let w = match (k, &cfg.custom_matrix) {
                (WeightKind::Custom, Some(path)) => load_custom(path, tickers),
                _ => builder.build(k),
            };
            (k, w.and_then(|w| w.check_contract().map(|_| w)))
        })
        .collect()
}

fn load_custom(path: &Path, tickers: &[String]) -> Result<WeightMatrix> {
    let w = read_weight_csv(fs::File::open(path)?)?;
    if w.tickers != tickers {
        return Err(Error::Dimension(format!(
            "{} lists tickers {:?}, the panel has {:?}",
            path.display(),
            w.tickers,
            tickers
        )));
    }
    Ok(w)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` under `root` and records its digest.
struct Collector {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Collector {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Collector {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

fn write_weights(col: &mut Collector, weights: &[(WeightKind, Result<WeightMatrix>)]) -> Result<()> {
    for (kind, w) in weights {
        if let Ok(w) = w {
            let mut buf = Vec::new();
            w.write_csv(&mut buf)?;
            col.write(&format!("weights/{kind}.csv"), &buf)?;
            col.write(&format!("weights/{kind}.json"), w.sidecar_json()?.as_bytes())?;
        }
    }
    Ok(())
}

/// One job of the grid.
#[derive(Debug, Clone)]
struct Cell {
    spec: ModelSpec,
    matrix: Option<WeightKind>,
}

impl Cell {
    fn matrix_name(&self) -> String {
        self.matrix.map(|k| k.to_string()).unwrap_or_default()
    }

    fn file_stem(&self) -> String {
        match self.matrix {
            Some(k) => format!("{}_{k}", self.spec.model),
            None => self.spec.model.to_string(),
        }
    }
}

fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for spec in &cfg.models {
        if spec.model.is_spatial() {
            for &k in &cfg.matrices {
                cells.push(Cell {
                    spec: spec.clone(),
                    matrix: Some(k),
                });
            }
        } else {
            cells.push(Cell {
                spec: spec.clone(),
                matrix: None,
            });
        }
    }
    cells
}

struct CellSuccess {
    report: serde_json::Value,
    metrics: MetricsRow,
    records: Vec<ForecastRecord>,
}

struct CellOutcome {
    fit_seconds: f64,
    forecast_seconds: f64,
    result: std::result::Result<CellSuccess, (&'static str, String)>,
}

fn run_cell(
    cell: &Cell,
    cfg: &ExperimentConfig,
    prep: &Prepared,
    weights: &[(WeightKind, Result<WeightMatrix>)],
) -> CellOutcome {
    let mut out = CellOutcome {
        fit_seconds: 0.0,
        forecast_seconds: 0.0,
        result: Err(("weights", String::new())),
    };
    let lookup = |k: WeightKind| -> std::result::Result<&WeightMatrix, (&'static str, String)> {
        match weights.iter().find(|(kind, _)| *kind == k) {
            Some((_, Ok(w))) => Ok(w),
            Some((_, Err(e))) => Err(("weights", format!("{k}: {e}"))),
            None => Err(("weights", format!("{k} was not built"))),
        }
    };
    let w = match cell.matrix.map(lookup).transpose() {
        Ok(w) => w,
        Err(e) => {
            out.result = Err(e);
            return out;
        }
    };
    let w2 = match cell.spec.w2.map(lookup).transpose() {
        Ok(w) => w,
        Err(e) => {
            out.result = Err(e);
            return out;
        }
    };
    let eps_in: DMatrix<f64> = prep.residuals.values.rows(0, prep.oos_start).into_owned();
    let start = Instant::now();
    let fit = fit_model(&cell.spec, &eps_in, w, w2, &cfg.fit_options());
    out.fit_seconds = start.elapsed().as_secs_f64();
    let fit = match fit {
        Ok(f) => f,
        Err(e) => {
            out.result = Err(("fit", e.to_string()));
            return out;
        }
    };
    let start = Instant::now();
    let run = forecast_loop(&fit, &prep.residuals, prep.oos_start);
    out.forecast_seconds = start.elapsed().as_secs_f64();
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            out.result = Err(("forecast", e.to_string()));
            return out;
        }
    };
    if let Some(t) = run.diverged_at {
        out.result = Err(("forecast", format!("forecasts diverged at row {t}")));
        return out;
    }
    let fit_seconds = cfg.timings.then_some(out.fit_seconds);
    let report = fit.report(fit_seconds).and_then(|r| Ok(serde_json::to_value(r)?));
    out.result = match report {
        Ok(report) => {
            let (rmsfe, mafe) = rmsfe_mafe(&run.records);
            Ok(CellSuccess {
                report,
                metrics: MetricsRow {
                    model: cell.spec.model.to_string(),
                    matrix: cell.matrix_name(),
                    k: fit.k(),
                    bic: fit.bic(),
                    rmsfe,
                    mafe,
                    fit_seconds,
                },
                records: run.records,
            })
        }
        Err(e) => Err(("report", e.to_string())),
    };
    out
}

#[derive(Debug, Clone, Serialize)]
struct CellManifest {
    model: String,
    matrix: String,
    status: &'static str,
    fit_seconds: f64,
    forecast_seconds: f64,
}

/// Counts of a finished run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub cells: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub output: PathBuf,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn forecasts_csv(tickers: &[String], successes: &[(&Cell, &CellSuccess)]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for (cell, s) in successes {
        for r in &s.records {
            for (i, ticker) in tickers.iter().enumerate() {
                rows.push(vec![
                    r.date.to_string(),
                    cell.spec.model.to_string(),
                    cell.matrix_name(),
                    ticker.clone(),
                    r.hhat[i].to_string(),
                    r.proxy[i].to_string(),
                ]);
            }
        }
    }
    csv_bytes(&["date", "model", "matrix", "ticker", "hhat", "proxy"], rows)
}

/// Runs the whole experiment. `config_text` is hashed into the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str) -> Result<RunSummary> {
    let wall = Instant::now();
    let prep = prepare(cfg)?;
    let weights = build_weights(cfg, &prep);
    let cells = grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    let outcomes: Vec<CellOutcome> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, cfg, &prep, &weights)).collect());

    let mut col = Collector::new(&cfg.output)?;
    write_weights(&mut col, &weights)?;

    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    let mut successes = Vec::new();
    let mut cell_manifest = Vec::new();
    for (cell, o) in cells.iter().zip(&outcomes) {
        cell_manifest.push(CellManifest {
            model: cell.spec.model.to_string(),
            matrix: cell.matrix_name(),
            status: if o.result.is_ok() { "ok" } else { "failed" },
            fit_seconds: o.fit_seconds,
            forecast_seconds: o.forecast_seconds,
        });
        match &o.result {
            Ok(s) => {
                let json = serde_json::to_vec_pretty(&s.report)?;
                col.write(&format!("fits/{}.json", cell.file_stem()), &json)?;
                metrics.push(s.metrics.clone());
                successes.push((cell, s));
            }
            Err((stage, message)) => {
                log::warn!("{} {}: {stage} failed: {message}", cell.spec.model.label(), cell.matrix_name());
                failures.push(vec![
                    cell.spec.model.to_string(),
                    cell.matrix_name(),
                    stage.to_string(),
                    message.clone(),
                ]);
            }
        }
    }

    let mut buf = Vec::new();
    write_metrics_csv(&metrics, &mut buf)?;
    col.write("metrics.csv", &buf)?;
    col.write("failures.csv", &csv_bytes(&["model", "matrix", "stage", "message"], failures.clone())?)?;
    col.write("forecasts.csv", &forecasts_csv(prep.residuals.tickers.as_slice(), &successes)?)?;

    let losses: Vec<CellLosses> = successes
        .iter()
        .map(|(cell, s)| CellLosses {
            model: cell.spec.model.to_string(),
            matrix: cell.matrix.map(|k| k.to_string()),
            rmsfe: s.metrics.rmsfe,
            losses: period_losses(&s.records),
        })
        .collect();
    let dm_error = match dm_matrix(&losses, cfg.harvey) {
        Ok(table) => {
            let mut buf = Vec::new();
            table.write_pvalues_csv(&mut buf)?;
            col.write("dm_pvalues.csv", &buf)?;
            let mut buf = Vec::new();
            table.write_ranking_csv(&mut buf)?;
            col.write("dm_ranking.csv", &buf)?;
            None
        }
        Err(e) => {
            log::warn!("DM comparison skipped: {e}");
            Some(e.to_string())
        }
    };

    let weight_errors: BTreeMap<String, String> = weights
        .iter()
        .filter_map(|(k, w)| w.as_ref().err().map(|e| (k.to_string(), e.to_string())))
        .collect();
    let fit = cfg.fit_options();
    let manifest = serde_json::json!({
        "version": VERSION,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "config": cfg,
        "seed": cfg.seed,
        "multistart_seeds": fit.multistart.seeds(),
        "panel": {
            "n": prep.returns.n(),
            "returns_rows": prep.returns.t(),
            "residual_rows": prep.residuals.t(),
            "oos_start": prep.oos_start,
            "first_oos_date": prep.residuals.dates[prep.oos_start].to_string(),
        },
        "weight_errors": weight_errors,
        "dm_error": dm_error,
        "cells": cell_manifest,
        "wall_seconds": wall.elapsed().as_secs_f64(),
        "files": col.files,
    });
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(cfg.output.join("manifest.json"), bytes)?;

    Ok(RunSummary {
        cells: cells.len(),
        succeeded: metrics.len(),
        failed: failures.len(),
        output: cfg.output.clone(),
    })
}

/// Builds the configured matrices only and writes them under `output/weights`.
pub fn run_weights(cfg: &ExperimentConfig) -> Result<Vec<(WeightKind, Result<WeightMatrix>)>> {
    let prep = prepare(cfg)?;
    let weights = build_weights(cfg, &prep);
    let mut col = Collector::new(&cfg.output)?;
    write_weights(&mut col, &weights)?;
    Ok(weights)
}

/// Draws the synthetic panel described by `cfg`.
pub fn simulate_panel(cfg: &SynthConfig) -> Result<ReturnsPanel> {
    let (n, t, seed) = (cfg.n, cfg.t, cfg.seed);
    let w = || {
        cfg.network
            .as_ref()
            .ok_or_else(|| Error::config("network", "spatial processes need a network"))?
            .build(n)
    };
    let values = match &cfg.dgp {
        DgpSpec::Garch(p) => simulate::simulate_garch(p, n, t, seed)?,
        DgpSpec::Egarch(p) => simulate::simulate_egarch(p, n, t, seed)?,
        DgpSpec::Dcc(p) => simulate::simulate_dcc(p, t, seed)?,
        DgpSpec::Bekk(p) => simulate::simulate_bekk(p, t, seed)?,
        DgpSpec::Proxbekk(p) => simulate::simulate_proxbekk(p, &w()?, t, seed)?,
        DgpSpec::Dstarch(p) => simulate::simulate_dstarch(p, &w()?, t, seed)?,
        DgpSpec::Spgarchx(p) => simulate::simulate_spgarchx(p, &w()?, t, seed)?,
        DgpSpec::Stgarch(p) => simulate::simulate_stgarch(p, &w()?, t, seed)?,
        DgpSpec::Stegarch(p) => {
            let w = w()?;
            simulate::simulate_stegarch(p, StEgarchWeights::same(&w), t, seed)?
        }
    };
    ReturnsPanel::synthetic(values)
}

/// Simulates and writes the panel CSV to `cfg.output`.
pub fn run_simulate(cfg: &SynthConfig) -> Result<ReturnsPanel> {
    let panel = simulate_panel(cfg)?;
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    panel.write_csv(&mut buf)?;
    fs::write(&cfg.output, buf)?;
    Ok(panel)
}
