//! Return panels, the VAR(1) mean model and descriptive diagnostics.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{least_squares, tail_prob, Dist};

/// `T x n` log-returns indexed by date, one column per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    values: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PanelFormat {
    #[default]
    WideCsv,
}

impl ReturnsPanel {
    /// Dates must be strictly increasing and every value finite.
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != tickers.len() {
            return Err(Error::Dimension(format!(
                "{} dates and {} tickers for a {}x{} matrix",
                dates.len(),
                tickers.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        if tickers.is_empty() || dates.is_empty() {
            return Err(Error::InvalidPanel("panel is empty".into()));
        }
        for w in dates.windows(2) {
            if w[1] == w[0] {
                return Err(Error::DuplicateDate(w[0].to_string()));
            }
            if w[1] < w[0] {
                return Err(Error::InvalidPanel("dates are not increasing".into()));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Parse {
                row: row + 2,
                column: col + 2,
                message: "value is not finite".into(),
            });
        }
        Ok(ReturnsPanel { dates, tickers, values })
    }

    /// Synthetic panel dated on consecutive weekdays from 2000-01-03.
    pub fn synthetic(values: DMatrix<f64>) -> Result<Self> {
        let n = values.ncols();
        let tickers = (1..=n).map(|i| format!("A{i:02}")).collect();
        let dates = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(), values.nrows());
        ReturnsPanel::new(dates, tickers, values)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let t = self.t();
        &self.values.as_slice()[i * t..(i + 1) * t]
    }

    /// Size requirements of the multivariate models: `n >= 2`, `T >= 10 n`.
    pub fn check_model_ready(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::InvalidPanel(format!("need at least 2 assets, got {}", self.n())));
        }
        if self.t() < 10 * self.n() {
            return Err(Error::InvalidPanel(format!(
                "need T >= 10 n = {}, got T = {}",
                10 * self.n(),
                self.t()
            )));
        }
        Ok(())
    }

    /// Log-returns `ln(P_t / P_{t-1})` from a price panel.
    pub fn from_prices(prices: &ReturnsPanel) -> Result<Self> {
        let (t, n) = (prices.t(), prices.n());
        if t < 2 {
            return Err(Error::InvalidPanel("need at least two price rows".into()));
        }
        if let Some(pos) = prices.values.iter().position(|p| *p <= 0.0) {
            return Err(Error::Domain(format!(
                "non-positive price for {} on {}",
                prices.tickers[pos / t],
                prices.dates[pos % t]
            )));
        }
        let values = DMatrix::from_fn(t - 1, n, |r, c| (prices.values[(r + 1, c)] / prices.values[(r, c)]).ln());
        ReturnsPanel::new(prices.dates[1..].to_vec(), prices.tickers.clone(), values)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t() {
            return Err(Error::Dimension(format!("row range {start}..{end} of {}", self.t())));
        }
        ReturnsPanel::new(
            self.dates[start..end].to_vec(),
            self.tickers.clone(),
            self.values.rows(start, end - start).into_owned(),
        )
    }

    /// Reorders the columns: column `j` of the result is column `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if !is_permutation(perm, self.n()) {
            return Err(Error::Dimension("not a permutation of the tickers".into()));
        }
        let values = DMatrix::from_fn(self.t(), self.n(), |r, c| self.values[(r, perm[c])]);
        let tickers = perm.iter().map(|&p| self.tickers[p].clone()).collect();
        ReturnsPanel::new(self.dates.clone(), tickers, values)
    }

    /// Writes the wide CSV layout read by [`parse_wide_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.t() {
            let mut rec = vec![self.dates[r].format("%Y-%m-%d").to_string()];
            rec.extend((0..self.n()).map(|c| format!("{}", self.values[(r, c)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn is_permutation(perm: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    perm.len() == n
        && perm.iter().all(|&p| {
            if p >= n || seen[p] {
                return false;
            }
            seen[p] = true;
            true
        })
}

pub(crate) fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Parses a wide CSV: header `date,<ticker>...`, ISO dates, one row per
/// date. Rows may come in any order and are sorted ascending. Reported row
/// numbers are 1-based file lines (the header is line 1) and columns are
/// 1-based.
pub fn parse_wide_csv<R: Read>(input: R) -> Result<ReturnsPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::InvalidPanel("file is empty".into())),
    };
    if header.get(0).map(|s| s.trim_start_matches('\u{feff}')) != Some("date") {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "first header cell must be `date`".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if tickers.is_empty() {
        return Err(Error::InvalidPanel("no ticker columns".into()));
    }
    for (i, t) in tickers.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: i + 2,
                message: "empty ticker name".into(),
            });
        }
        if tickers[..i].contains(t) {
            return Err(Error::Parse {
                row: 1,
                column: i + 2,
                message: format!("duplicate ticker {t}"),
            });
        }
    }
    let n = tickers.len();

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let line = idx + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                row: line,
                column: rec.len().min(n + 1),
                message: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            row: line,
            column: 1,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let mut vals = Vec::with_capacity(n);
        for (c, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(Error::Gap {
                    row: line,
                    ticker: tickers[c].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 2,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 2,
                    message: format!("`{cell}` is not finite"),
                });
            }
            vals.push(v);
        }
        rows.push((date, vals));
    }
    if rows.is_empty() {
        return Err(Error::InvalidPanel("no data rows".into()));
    }
    rows.sort_by_key(|r| r.0);
    let t = rows.len();
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    let values = DMatrix::from_fn(t, n, |r, c| rows[r].1[c]);
    ReturnsPanel::new(dates, tickers, values)
}

pub fn load_panel(path: &Path, format: PanelFormat) -> Result<ReturnsPanel> {
    match format {
        PanelFormat::WideCsv => parse_wide_csv(std::fs::File::open(path)?),
    }
}

/// Mean-model residuals on dates `2..T`.
#[derive(Debug, Clone)]
pub struct ResidualPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// `(T-1) x n`.
    pub values: DMatrix<f64>,
    /// `Phi[(i, j)]` loads `y_{t-1}(j)` in the equation for asset `i`.
    pub phi: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl ResidualPanel {
    /// Treats `panel` itself as residuals of a zero mean model.
    pub fn from_returns(panel: &ReturnsPanel) -> Self {
        let n = panel.n();
        ResidualPanel {
            dates: panel.dates.clone(),
            tickers: panel.tickers.clone(),
            values: panel.values.clone(),
            phi: DMatrix::zeros(n, n),
            intercept: DVector::zeros(n),
        }
    }

    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        let t = self.t();
        &self.values.as_slice()[i * t..(i + 1) * t]
    }
}

/// Equation-by-equation least squares of `y_t = c + Phi y_{t-1} + e_t`.
pub fn fit_var1(panel: &ReturnsPanel) -> Result<ResidualPanel> {
    var1_residuals(panel, panel.t())
}

/// VAR(1) estimated on the first `fit_rows` rows, residuals on all rows.
pub fn var1_residuals(panel: &ReturnsPanel, fit_rows: usize) -> Result<ResidualPanel> {
    let (t, n) = (panel.t(), panel.n());
    if fit_rows > t {
        return Err(Error::Dimension(format!("{fit_rows} estimation rows in a panel of {t}")));
    }
    if fit_rows < n + 2 {
        return Err(Error::SingularDesign(format!("T = {fit_rows} is below n + 2 = {}", n + 2)));
    }
    let y = &panel.values;
    let design = |rows: usize| DMatrix::from_fn(rows - 1, n + 1, |r, c| if c == 0 { 1.0 } else { y[(r, c - 1)] });
    let ls = least_squares(&design(fit_rows), &y.rows(1, fit_rows - 1).into_owned())?;
    let values = if fit_rows == t {
        ls.resid
    } else {
        y.rows(1, t - 1) - design(t) * &ls.coef
    };
    let intercept = DVector::from_fn(n, |i, _| ls.coef[(0, i)]);
    let phi = DMatrix::from_fn(n, n, |i, j| ls.coef[(j + 1, i)]);
    Ok(ResidualPanel {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        values,
        phi,
        intercept,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssetDiagnostics {
    pub ticker: String,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    /// Fourth standardised moment (not in excess of 3).
    pub kurtosis: f64,
    pub arch_lm_stat: f64,
    pub arch_lm_pvalue: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PanelDiagnostics {
    pub arch_lags: usize,
    pub assets: Vec<AssetDiagnostics>,
}

impl PanelDiagnostics {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ticker", "mean", "std_dev", "min", "max", "skewness", "kurtosis", "arch_lm_stat", "arch_lm_pvalue"])?;
        for a in &self.assets {
            w.write_record(&[
                a.ticker.clone(),
                a.mean.to_string(),
                a.std_dev.to_string(),
                a.min.to_string(),
                a.max.to_string(),
                a.skewness.to_string(),
                a.kurtosis.to_string(),
                a.arch_lm_stat.to_string(),
                a.arch_lm_pvalue.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Engle's LM statistic `T' R^2` from regressing squared demeaned values
/// on a constant and `lags` of themselves, with its chi-squared p-value.
/// A constant squared series carries no ARCH evidence: statistic 0, p 1.
pub fn arch_lm(x: &[f64], lags: usize) -> Result<(f64, f64)> {
    let t = x.len();
    if lags == 0 || t <= lags + 2 {
        return Err(Error::InvalidParam(format!("ARCH-LM with {lags} lags needs more than {} observations", lags + 2)));
    }
    let mean = x.iter().sum::<f64>() / t as f64;
    let e2: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    let rows = t - lags;
    let y = DMatrix::from_fn(rows, 1, |r, _| e2[r + lags]);
    let ybar = y.iter().sum::<f64>() / rows as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    if tss <= 1e-14 * ybar.abs().max(f64::MIN_POSITIVE) * ybar.abs() * rows as f64 {
        return Ok((0.0, 1.0));
    }
    let design = DMatrix::from_fn(rows, lags + 1, |r, c| if c == 0 { 1.0 } else { e2[r + lags - c] });
    let ls = least_squares(&design, &y)?;
    let r2 = (1.0 - ls.rss[0] / tss).max(0.0);
    let stat = rows as f64 * r2;
    Ok((stat, tail_prob(Dist::ChiSquared(lags as f64), stat)?))
}

/// Sample moments and ARCH-LM test per asset. Skewness and kurtosis are
/// ratios of central moments with divisor `T`; the standard deviation uses
/// `T - 1`.
pub fn diagnostics(panel: &ReturnsPanel, arch_lags: usize) -> Result<PanelDiagnostics> {
    if arch_lags == 0 {
        return Err(Error::InvalidParam("arch_lags must be positive".into()));
    }
    if panel.t() <= arch_lags + 2 {
        return Err(Error::InvalidPanel(format!("T must exceed arch_lags + 2 = {}", arch_lags + 2)));
    }
    let mut assets = Vec::with_capacity(panel.n());
    for i in 0..panel.n() {
        let x = panel.column(i);
        let t = x.len() as f64;
        let mean = x.iter().sum::<f64>() / t;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in x {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= t;
        m3 /= t;
        m4 /= t;
        let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        if m2.sqrt() <= 1e-12 * scale || m2 == 0.0 {
            return Err(Error::DegenerateSeries(panel.tickers[i].clone()));
        }
        let (stat, pvalue) = arch_lm(x, arch_lags)?;
        assets.push(AssetDiagnostics {
            ticker: panel.tickers[i].clone(),
            mean,
            std_dev: (m2 * t / (t - 1.0)).sqrt(),
            min: x.iter().cloned().fold(f64::INFINITY, f64::min),
            max: x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            skewness: m3 / m2.powf(1.5),
            kurtosis: m4 / (m2 * m2),
            arch_lm_stat: stat,
            arch_lm_pvalue: pvalue,
        });
    }
    Ok(PanelDiagnostics { arch_lags, assets })
}
