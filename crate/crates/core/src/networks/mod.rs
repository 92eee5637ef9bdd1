//! Financial-network weight matrices.
//!
//! Three distance-based fully connected matrices (Euclidean, correlation,
//! Piccolo), their Granger-filtered and 5-NN variants, and an EGARCH
//! volatility spillover matrix. All are row-normalised; rows that end up
//! empty stay zero.

pub mod distance;
pub mod granger;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::FitOptions;
use crate::univariate::egarch11_qmle;

pub use distance::{
    ar_bic, correlation_matrix, distance_correlation, distance_euclidean, distance_piccolo, piccolo_from_coefficients,
    DistanceMatrix, Metric,
};
pub use granger::{granger_f_test, granger_matrix, select_var_lag, GrangerFilter, DEFAULT_MAX_LAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Euclidean,
    Corr,
    Piccolo,
    EG,
    CG,
    PG,
    ENn,
    CNn,
    PNn,
    Spill,
    /// Matrices supplied or generated outside the ten constructions.
    Custom,
}

impl WeightKind {
    pub const ALL: [WeightKind; 10] = [
        WeightKind::Euclidean,
        WeightKind::Corr,
        WeightKind::Piccolo,
        WeightKind::EG,
        WeightKind::CG,
        WeightKind::PG,
        WeightKind::ENn,
        WeightKind::CNn,
        WeightKind::PNn,
        WeightKind::Spill,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightKind::Euclidean => "euclidean",
            WeightKind::Corr => "corr",
            WeightKind::Piccolo => "piccolo",
            WeightKind::EG => "e_g",
            WeightKind::CG => "c_g",
            WeightKind::PG => "p_g",
            WeightKind::ENn => "e_nn",
            WeightKind::CNn => "c_nn",
            WeightKind::PNn => "p_nn",
            WeightKind::Spill => "spill",
            WeightKind::Custom => "custom",
        }
    }

    /// Granger-filtered and spillover matrices are directed networks.
    pub fn is_directed(&self) -> bool {
        matches!(self, WeightKind::EG | WeightKind::CG | WeightKind::PG | WeightKind::Spill)
    }

    fn base_metric(&self) -> Option<Metric> {
        match self {
            WeightKind::Euclidean | WeightKind::EG | WeightKind::ENn => Some(Metric::Euclidean),
            WeightKind::Corr | WeightKind::CG | WeightKind::CNn => Some(Metric::Correlation),
            WeightKind::Piccolo | WeightKind::PG | WeightKind::PNn => Some(Metric::Piccolo),
            WeightKind::Spill | WeightKind::Custom => None,
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightKind::ALL
            .iter()
            .chain(std::iter::once(&WeightKind::Custom))
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("unknown weight matrix kind `{s}`")))
    }
}

/// Nonnegative `n x n` weights with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: DMatrix<f64>,
    pub kind: WeightKind,
    pub directed: bool,
    pub row_stochastic: bool,
    pub tickers: Vec<String>,
    /// Rows with no positive weight after filtering.
    pub zero_rows: Vec<usize>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    kind: WeightKind,
    directed: bool,
    row_stochastic: bool,
    alpha: Option<f64>,
    k: Option<usize>,
    zero_rows: Vec<&'a str>,
    normalization: &'static str,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Wraps an arbitrary matrix, row-normalising it.
    pub fn custom(w: DMatrix<f64>, directed: bool) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::Dimension("weight matrix must be square".into()));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam("weights must be finite and nonnegative".into()));
        }
        let mut w = w;
        w.fill_diagonal(0.0);
        let (w, zero_rows) = row_normalize(w);
        Ok(WeightMatrix {
            w,
            kind: WeightKind::Custom,
            directed,
            row_stochastic: true,
            tickers: distance::default_tickers(n),
            zero_rows,
            alpha: None,
            k: None,
        })
    }

    /// Equal weights `1 / (n - 1)` off the diagonal.
    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParam("complete graph needs n >= 2".into()));
        }
        WeightMatrix::custom(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }), false)
    }

    /// Circulant graph linking each node to its `k` nearest positions on a
    /// ring: offsets `+-1..=+-(k / 2)`, plus the opposite node when `k` is
    /// odd and `n` even. The result is symmetric.
    pub fn ring(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::InvalidParam(format!("ring needs 0 < k < n, got k = {k}, n = {n}")));
        }
        if k % 2 == 1 && n % 2 == 1 {
            return Err(Error::InvalidParam("odd k on a ring needs even n".into()));
        }
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for off in 1..=k / 2 {
                w[(i, (i + off) % n)] = 1.0;
                w[(i, (i + n - off) % n)] = 1.0;
            }
            if k % 2 == 1 {
                w[(i, (i + n / 2) % n)] = 1.0;
            }
        }
        WeightMatrix::custom(w, false)
    }

    pub fn with_tickers(mut self, tickers: &[String]) -> Self {
        self.tickers = tickers.to_vec();
        self
    }

    pub fn max_asymmetry(&self) -> f64 {
        crate::numerics::linalg::max_asymmetry(&self.w)
    }

    /// Zero diagonal, nonnegativity, and row sums in `{0, 1}` within `1e-12`.
    pub fn check_contract(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            if self.w[(i, i)] != 0.0 {
                return Err(Error::InvalidParam(format!("{}: nonzero diagonal at {i}", self.kind)));
            }
            let mut s = 0.0;
            for j in 0..n {
                let v = self.w[(i, j)];
                if !(v >= 0.0) {
                    return Err(Error::InvalidParam(format!("{}: negative weight at ({i}, {j})", self.kind)));
                }
                s += v;
            }
            if self.row_stochastic && s != 0.0 && (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParam(format!("{}: row {i} sums to {s}", self.kind)));
            }
        }
        Ok(())
    }

    /// `ticker,<tickers...>` header and one row per asset.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["ticker".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.tickers[i].clone()];
            rec.extend((0..self.n()).map(|j| self.w[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        let sidecar = Sidecar {
            kind: self.kind,
            directed: self.directed,
            row_stochastic: self.row_stochastic,
            alpha: self.alpha,
            k: self.k,
            zero_rows: self.zero_rows.iter().map(|&i| self.tickers[i].as_str()).collect(),
            normalization: if self.kind == WeightKind::Spill {
                "raw weights 1 - p, rows rescaled to sum to one"
            } else {
                "rows rescaled to sum to one"
            },
        };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }
}

/// Reads the `ticker,<tickers...>` layout written by
/// [`WeightMatrix::write_csv`]. Row labels must repeat the header order.
/// Rows are renormalised; the matrix is directed when it is not symmetric.
pub fn read_weight_csv<R: Read>(input: R) -> Result<WeightMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = rdr.records();
    let parse_err = |row: usize, column: usize, message: String| Error::Parse { row, column, message };
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(0, 0, "empty weight file".into())),
    };
    if header.get(0).map(str::trim) != Some("ticker") {
        return Err(parse_err(0, 0, "first header cell must be `ticker`".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = tickers.len();
    if n < 2 {
        return Err(parse_err(0, 1, "need at least two tickers".into()));
    }
    let mut w = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = i + 1;
        if i >= n {
            return Err(parse_err(row, 0, format!("more than {n} rows")));
        }
        if rec.len() != n + 1 {
            return Err(parse_err(row, rec.len(), format!("expected {} fields", n + 1)));
        }
        if rec[0].trim() != tickers[i] {
            return Err(parse_err(row, 0, format!("row label `{}` does not match `{}`", rec[0].trim(), tickers[i])));
        }
        for j in 0..n {
            let cell = rec[j + 1].trim();
            w[(i, j)] = cell
                .parse::<f64>()
                .map_err(|e| parse_err(row, j + 1, format!("`{cell}`: {e}")))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(rows + 1, 0, format!("expected {n} rows, found {rows}")));
    }
    let directed = crate::numerics::linalg::max_asymmetry(&w) > 1e-12;
    Ok(WeightMatrix::custom(w, directed)?.with_tickers(&tickers))
}

/// Rescales rows with a positive sum to one; returns the zero rows.
pub fn row_normalize(mut w: DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let mut zero_rows = Vec::new();
    for i in 0..w.nrows() {
        let s: f64 = w.row(i).iter().sum();
        if s > 0.0 {
            w.row_mut(i).iter_mut().for_each(|v| *v /= s);
        } else {
            zero_rows.push(i);
        }
    }
    (w, zero_rows)
}

fn kind_for(metric: Metric, variant: u8) -> WeightKind {
    use WeightKind::*;
    match (metric, variant) {
        (Metric::Euclidean, 0) => Euclidean,
        (Metric::Correlation, 0) => Corr,
        (Metric::Piccolo, 0) => Piccolo,
        (Metric::Euclidean, 1) => EG,
        (Metric::Correlation, 1) => CG,
        (Metric::Piccolo, 1) => PG,
        (Metric::Euclidean, _) => ENn,
        (Metric::Correlation, _) => CNn,
        (Metric::Piccolo, _) => PNn,
    }
}

/// `w_ij = (1 / d_ij) / sum_k (1 / d_ik)` off the diagonal.
pub fn inverse_distance_weights(d: &DistanceMatrix) -> Result<WeightMatrix> {
    let n = d.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dij = d.d[(i, j)];
            if !(dij > 0.0) || !(1.0 / dij).is_finite() {
                return Err(Error::ZeroDistance {
                    first: d.tickers[i.min(j)].clone(),
                    second: d.tickers[i.max(j)].clone(),
                });
            }
            w[(i, j)] = 1.0 / dij;
        }
    }
    let (w, zero_rows) = row_normalize(w);
    Ok(WeightMatrix {
        w,
        kind: kind_for(d.metric, 0),
        directed: false,
        row_stochastic: true,
        tickers: d.tickers.clone(),
        zero_rows,
        alpha: None,
        k: None,
    })
}

/// Masks `w` with the Granger indicator and renormalises rows. Rows left
/// without any link stay zero and are listed in `zero_rows`.
pub fn apply_granger(w: &WeightMatrix, g: &GrangerFilter) -> Result<WeightMatrix> {
    let n = w.n();
    if g.g.shape() != (n, n) {
        return Err(Error::Dimension(format!("{n}x{n} weights, {:?} filter", g.g.shape())));
    }
    let masked = DMatrix::from_fn(n, n, |i, j| w.w[(i, j)] * f64::from(g.g[(i, j)]));
    let (masked, zero_rows) = row_normalize(masked);
    for &i in &zero_rows {
        log::warn!("Granger filter leaves {} without neighbours", w.tickers[i]);
    }
    let kind = match w.kind.base_metric() {
        Some(m) if w.kind == kind_for(m, 0) => kind_for(m, 1),
        _ => w.kind,
    };
    Ok(WeightMatrix {
        w: masked,
        kind,
        directed: true,
        row_stochastic: true,
        tickers: w.tickers.clone(),
        zero_rows,
        alpha: Some(g.alpha),
        k: w.k,
    })
}

/// `w_ij = 1 / k` for the `k` nearest neighbours of `i`; ties go to the
/// lower index.
pub fn knn_weights(d: &DistanceMatrix, k: usize) -> Result<WeightMatrix> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidParam(format!("k-NN needs 0 < k < n, got k = {k}, n = {n}")));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d.d[(i, a)].total_cmp(&d.d[(i, b)]).then(a.cmp(&b)));
        for &j in &order[..k] {
            w[(i, j)] = 1.0 / k as f64;
        }
    }
    Ok(WeightMatrix {
        w,
        kind: kind_for(d.metric, 2),
        directed: false,
        row_stochastic: true,
        tickers: d.tickers.clone(),
        zero_rows: Vec::new(),
        alpha: None,
        k: Some(k),
    })
}

/// Spillover weights from p-values: `1 - p_ij` where `p_ij < alpha`,
/// zero elsewhere, rows rescaled to one.
pub fn spillover_from_pvalues(g: &GrangerFilter, tickers: &[String]) -> WeightMatrix {
    let n = g.pvals.nrows();
    let raw = DMatrix::from_fn(n, n, |i, j| {
        if i != j && g.pvals[(i, j)] < g.alpha {
            1.0 - g.pvals[(i, j)]
        } else {
            0.0
        }
    });
    let (w, zero_rows) = row_normalize(raw);
    WeightMatrix {
        w,
        kind: WeightKind::Spill,
        directed: true,
        row_stochastic: true,
        tickers: tickers.to_vec(),
        zero_rows,
        alpha: Some(g.alpha),
        k: None,
    }
}

/// EGARCH(1,1) per asset, then Granger tests on the fitted volatilities.
pub fn spillover_matrix(
    res: &DMatrix<f64>,
    tickers: &[String],
    alpha: f64,
    max_lag: usize,
    opts: &FitOptions,
) -> Result<WeightMatrix> {
    let (t, n) = res.shape();
    let sigma: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fit = egarch11_qmle(&res.as_slice()[i * t..(i + 1) * t], opts)
                .map_err(|e| Error::fit(format!("EGARCH for {}", tickers[i]), e.to_string()))?;
            Ok(fit.path.h.iter().map(|h| h.sqrt()).collect())
        })
        .collect::<Result<_>>()?;
    let vol = DMatrix::from_fn(t, n, |r, c| sigma[c][r]);
    let g = granger_matrix(&vol, tickers, alpha, max_lag)?;
    Ok(spillover_from_pvalues(&g, tickers))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NetworkOptions {
    pub alpha: f64,
    pub k: usize,
    pub max_ar: usize,
    pub max_lag: usize,
    /// Computes the correlation distance on residuals instead of returns.
    pub corr_on_residuals: bool,
    pub fit: FitOptions,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        NetworkOptions {
            alpha: 0.05,
            k: 5,
            max_ar: 5,
            max_lag: DEFAULT_MAX_LAG,
            corr_on_residuals: false,
            fit: FitOptions::default(),
        }
    }
}

/// Builds weight matrices for one panel, caching shared intermediates.
pub struct NetworkBuilder<'a> {
    returns: &'a DMatrix<f64>,
    residuals: &'a DMatrix<f64>,
    tickers: Vec<String>,
    opts: NetworkOptions,
    distances: [Option<DistanceMatrix>; 3],
    granger: Option<GrangerFilter>,
}

impl<'a> NetworkBuilder<'a> {
    pub fn new(returns: &'a DMatrix<f64>, residuals: &'a DMatrix<f64>, tickers: &[String], opts: NetworkOptions) -> Self {
        NetworkBuilder {
            returns,
            residuals,
            tickers: tickers.to_vec(),
            opts,
            distances: [None, None, None],
            granger: None,
        }
    }

    pub fn distance(&mut self, metric: Metric) -> Result<&DistanceMatrix> {
        let slot = metric as usize;
        if self.distances[slot].is_none() {
            let d = match metric {
                Metric::Euclidean => distance_euclidean(self.residuals, &self.tickers)?,
                Metric::Correlation => {
                    let x = if self.opts.corr_on_residuals { self.residuals } else { self.returns };
                    distance_correlation(x, &self.tickers)?
                }
                Metric::Piccolo => distance_piccolo(self.residuals, &self.tickers, self.opts.max_ar)?,
            };
            self.distances[slot] = Some(d);
        }
        Ok(self.distances[slot].as_ref().unwrap())
    }

    pub fn granger(&mut self) -> Result<&GrangerFilter> {
        if self.granger.is_none() {
            self.granger = Some(granger_matrix(self.residuals, &self.tickers, self.opts.alpha, self.opts.max_lag)?);
        }
        Ok(self.granger.as_ref().unwrap())
    }

    pub fn build(&mut self, kind: WeightKind) -> Result<WeightMatrix> {
        use WeightKind::*;
        match kind {
            Euclidean | Corr | Piccolo => inverse_distance_weights(self.distance(kind.base_metric().unwrap())?),
            EG | CG | PG => {
                let base = inverse_distance_weights(self.distance(kind.base_metric().unwrap())?)?;
                apply_granger(&base, self.granger()?)
            }
            ENn | CNn | PNn => {
                let k = self.opts.k;
                knn_weights(self.distance(kind.base_metric().unwrap())?, k)
            }
            Spill => spillover_matrix(self.residuals, &self.tickers, self.opts.alpha, self.opts.max_lag, &self.opts.fit),
            Custom => Err(Error::InvalidParam("custom matrices are not built from data".into())),
        }
    }
}
