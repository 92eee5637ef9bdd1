//! Uniform front end over the estimators: fit, count parameters, report,
//! and produce one-step log-variance forecasts along a panel.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::bic;
use crate::mgarch::{
    bekk_fit, bekk_k, bekk_variance_path, dcc_fit, dcc_k, dcc_variance_path, proxbekk_fit, proxbekk_k,
    proxbekk_variance_path, BekkFit, DccFit, ProxBekkFit,
};
use crate::networks::{WeightKind, WeightMatrix};
use crate::numerics::FitOptions;
use crate::spatial::{
    dstarch_fit_with, dstarch_k, dstarch_log_path, logarch_fit, logarch_k, logarch_log_path, spgarchx_fit_with,
    spgarchx_k, spgarchx_variance_path, stegarch_fit, stegarch_k, stegarch_log_forecast_path, stgarch_fit, stgarch_k,
    stgarch_variance_path, DstarchFit, GmmRoute, SpGarchXFit, SpGarchXOptions, StEgarchFit, StEgarchWeights,
    StGarchFit,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dcc,
    Bekk,
    Abekk,
    /// Proximity BEKK.
    Stbekk,
    Dstarch,
    /// DST-ARCH with `rho = 0`: per-asset log-ARCH(1).
    Logarch,
    Spgarchx,
    Stgarch,
    Stegarch,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Dcc,
        ModelKind::Bekk,
        ModelKind::Abekk,
        ModelKind::Stbekk,
        ModelKind::Dstarch,
        ModelKind::Logarch,
        ModelKind::Spgarchx,
        ModelKind::Stgarch,
        ModelKind::Stegarch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Dcc => "dcc",
            ModelKind::Bekk => "bekk",
            ModelKind::Abekk => "abekk",
            ModelKind::Stbekk => "stbekk",
            ModelKind::Dstarch => "dstarch",
            ModelKind::Logarch => "logarch",
            ModelKind::Spgarchx => "spgarchx",
            ModelKind::Stgarch => "stgarch",
            ModelKind::Stegarch => "stegarch",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Dcc => "DCC",
            ModelKind::Bekk => "BEKK",
            ModelKind::Abekk => "ABEKK",
            ModelKind::Stbekk => "STBEKK",
            ModelKind::Dstarch => "DSTARCH",
            ModelKind::Logarch => "LogARCH",
            ModelKind::Spgarchx => "SpGARCH-X",
            ModelKind::Stgarch => "STGARCH",
            ModelKind::Stegarch => "STEGARCH",
        }
    }

    /// Spatial models run once per weight matrix; the rest run once.
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            ModelKind::Stbekk | ModelKind::Dstarch | ModelKind::Spgarchx | ModelKind::Stgarch | ModelKind::Stegarch
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("unknown model `{s}`")))
    }
}

fn yes() -> bool {
    true
}

/// One model entry of an experiment, with the options that apply to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelKind,
    /// DST-ARCH only.
    #[serde(default)]
    pub gmm_route: GmmRoute,
    /// Proximity BEKK only: six scalars shared by all assets.
    #[serde(default = "yes")]
    pub homogeneous: bool,
    /// STEGARCH only: separate matrix for the contemporaneous log-variances.
    #[serde(default)]
    pub w2: Option<WeightKind>,
    /// SpGARCH-X only.
    #[serde(default)]
    pub max_outer: Option<usize>,
    /// SpGARCH-X only.
    #[serde(default)]
    pub outer_tol: Option<f64>,
}

impl ModelSpec {
    pub fn new(model: ModelKind) -> Self {
        ModelSpec {
            model,
            gmm_route: GmmRoute::Auto,
            homogeneous: true,
            w2: None,
            max_outer: None,
            outer_tol: None,
        }
    }

    pub fn k(&self, n: usize) -> usize {
        match self.model {
            ModelKind::Dcc => dcc_k(n),
            ModelKind::Bekk => bekk_k(n, false),
            ModelKind::Abekk => bekk_k(n, true),
            ModelKind::Stbekk => proxbekk_k(n, self.homogeneous),
            ModelKind::Dstarch => dstarch_k(n),
            ModelKind::Logarch => logarch_k(n),
            ModelKind::Spgarchx => spgarchx_k(n),
            ModelKind::Stgarch => stgarch_k(n),
            ModelKind::Stegarch => stegarch_k(n),
        }
    }

    fn outer(&self) -> SpGarchXOptions {
        let d = SpGarchXOptions::default();
        SpGarchXOptions {
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            tol: self.outer_tol.unwrap_or(d.tol),
            spatial: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Estimate {
    Dcc(DccFit),
    Bekk(BekkFit),
    ProxBekk(ProxBekkFit),
    Dstarch(DstarchFit),
    SpGarchX(SpGarchXFit),
    StGarch(StGarchFit),
    StEgarch(StEgarchFit),
}

#[derive(Debug, Clone)]
pub struct ModelFit {
    pub spec: ModelSpec,
    pub n: usize,
    /// Observations entering the likelihood (periods `2..T`).
    pub t_eff: usize,
    pub weights: Option<WeightMatrix>,
    pub weights2: Option<WeightMatrix>,
    pub estimate: Estimate,
}

/// Fits `spec` on the residual panel `eps`. Spatial models need `w`;
/// STEGARCH uses `w2` for the log-variance lag when given.
pub fn fit_model(
    spec: &ModelSpec,
    eps: &DMatrix<f64>,
    w: Option<&WeightMatrix>,
    w2: Option<&WeightMatrix>,
    opts: &FitOptions,
) -> Result<ModelFit> {
    let need_w = || {
        w.ok_or_else(|| Error::InvalidParam(format!("{} needs a weight matrix", spec.model.label())))
    };
    let estimate = match spec.model {
        ModelKind::Dcc => Estimate::Dcc(dcc_fit(eps, opts)?),
        ModelKind::Bekk => Estimate::Bekk(bekk_fit(eps, false, opts)?),
        ModelKind::Abekk => Estimate::Bekk(bekk_fit(eps, true, opts)?),
        ModelKind::Stbekk => Estimate::ProxBekk(proxbekk_fit(eps, need_w()?, spec.homogeneous, opts)?),
        ModelKind::Dstarch => Estimate::Dstarch(dstarch_fit_with(eps, need_w()?, spec.gmm_route)?),
        ModelKind::Logarch => Estimate::Dstarch(logarch_fit(eps)?),
        ModelKind::Spgarchx => Estimate::SpGarchX(spgarchx_fit_with(eps, need_w()?, &spec.outer(), opts)?),
        ModelKind::Stgarch => Estimate::StGarch(stgarch_fit(eps, need_w()?, opts)?),
        ModelKind::Stegarch => {
            let w1 = need_w()?;
            let weights = StEgarchWeights { w1, w2: w2.unwrap_or(w1) };
            Estimate::StEgarch(stegarch_fit(eps, weights, opts)?)
        }
    };
    let spatial = spec.model.is_spatial();
    Ok(ModelFit {
        spec: spec.clone(),
        n: eps.ncols(),
        t_eff: eps.nrows().saturating_sub(1),
        weights: if spatial { w.cloned() } else { None },
        weights2: if spec.model == ModelKind::Stegarch { w2.cloned() } else { None },
        estimate,
    })
}

impl ModelFit {
    pub fn model(&self) -> ModelKind {
        self.spec.model
    }

    pub fn k(&self) -> usize {
        self.spec.k(self.n)
    }

    pub fn loglik(&self) -> f64 {
        match &self.estimate {
            Estimate::Dcc(f) => f.loglik,
            Estimate::Bekk(f) => f.loglik,
            Estimate::ProxBekk(f) => f.loglik,
            Estimate::Dstarch(f) => f.loglik,
            Estimate::SpGarchX(f) => f.loglik,
            Estimate::StGarch(f) => f.loglik,
            Estimate::StEgarch(f) => f.loglik,
        }
    }

    pub fn bic(&self) -> f64 {
        bic(self.loglik(), self.k(), self.t_eff)
    }

    pub fn converged(&self) -> bool {
        match &self.estimate {
            Estimate::Dcc(f) => f.converged,
            Estimate::Bekk(f) => f.converged,
            Estimate::ProxBekk(f) => f.converged,
            Estimate::Dstarch(f) => f.converged,
            Estimate::SpGarchX(f) => f.converged,
            Estimate::StGarch(f) => f.converged,
            Estimate::StEgarch(f) => f.converged,
        }
    }

    /// Seeds of the perturbed optimizer starts; empty for the GMM fits.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.estimate {
            Estimate::Dcc(f) => f.seeds.clone(),
            Estimate::Bekk(f) => f.seeds.clone(),
            Estimate::ProxBekk(f) => f.seeds.clone(),
            Estimate::Dstarch(_) => Vec::new(),
            Estimate::SpGarchX(f) => f.seeds.clone(),
            Estimate::StGarch(f) => f.seeds.clone(),
            Estimate::StEgarch(f) => f.seeds.clone(),
        }
    }

    pub fn params_json(&self) -> Result<serde_json::Value> {
        Ok(match &self.estimate {
            Estimate::Dcc(f) => serde_json::to_value(&f.params)?,
            Estimate::Bekk(f) => serde_json::to_value(&f.params)?,
            Estimate::ProxBekk(f) => serde_json::to_value(&f.params)?,
            Estimate::Dstarch(f) => serde_json::to_value(&f.params)?,
            Estimate::SpGarchX(f) => serde_json::to_value(&f.params)?,
            Estimate::StGarch(f) => serde_json::to_value(f.params)?,
            Estimate::StEgarch(f) => serde_json::to_value(f.params)?,
        })
    }

    fn weights(&self) -> Result<&WeightMatrix> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::InvalidParam(format!("{} fit carries no weight matrix", self.model().label())))
    }

    /// One-step forecasts of the log conditional variance along `eps`,
    /// `(T+1) x n`, with the fit's parameters and initial state held fixed.
    /// Row `t` uses data through row `t - 1`; the last row forecasts the
    /// period after `eps`. For the log-ARCH models the forecast is the
    /// conditional mean of `ln e^2` itself.
    pub fn log_variance_path(&self, eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if eps.ncols() != self.n {
            return Err(Error::Dimension(format!("fit has {} assets, panel has {}", self.n, eps.ncols())));
        }
        let var = match &self.estimate {
            Estimate::Dcc(f) => dcc_variance_path(eps, &f.params, &f.h0),
            Estimate::Bekk(f) => bekk_variance_path(eps, &f.params, &f.sigma1_matrix()),
            Estimate::ProxBekk(f) => proxbekk_variance_path(eps, &f.params, self.weights()?, &f.sigma1_matrix())?,
            Estimate::Dstarch(f) => {
                return match self.model() {
                    ModelKind::Logarch => logarch_log_path(eps, &f.params),
                    _ => dstarch_log_path(eps, &f.params, self.weights()?),
                };
            }
            Estimate::SpGarchX(f) => spgarchx_variance_path(eps, &f.params, self.weights()?, &f.h0),
            Estimate::StGarch(f) => stgarch_variance_path(eps, &f.params, self.weights()?, &f.h0),
            Estimate::StEgarch(f) => {
                let w1 = self.weights()?;
                let w = StEgarchWeights { w1, w2: self.weights2.as_ref().unwrap_or(w1) };
                return stegarch_log_forecast_path(eps, &f.params, w, &f.log_h0);
            }
        };
        Ok(var.map(f64::ln))
    }

    pub fn report(&self, fit_seconds: Option<f64>) -> Result<FitReport> {
        Ok(FitReport {
            model: self.model(),
            label: self.model().label(),
            matrix: self.weights.as_ref().map(|w| w.kind),
            matrix2: self.weights2.as_ref().map(|w| w.kind),
            params: self.params_json()?,
            k: self.k(),
            loglik: self.loglik(),
            bic: self.bic(),
            t_eff: self.t_eff,
            fit_seconds,
            converged: self.converged(),
            seeds: self.seeds(),
            estimate: serde_json::to_value(&self.estimate)?,
        })
    }
}

/// JSON form of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub label: &'static str,
    pub matrix: Option<WeightKind>,
    pub matrix2: Option<WeightKind>,
    pub params: serde_json::Value,
    pub k: usize,
    pub loglik: f64,
    pub bic: f64,
    pub t_eff: usize,
    pub fit_seconds: Option<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
    /// Full estimator output, including initial states.
    pub estimate: serde_json::Value,
}
