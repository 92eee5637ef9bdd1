//! Spatiotemporal volatility models driven by a weight matrix.

pub mod dstarch;
pub mod spgarchx;
pub mod stegarch;
pub mod stgarch;

pub use dstarch::{
    dstarch_fit, dstarch_fit_with, dstarch_forecast, dstarch_k, dstarch_log_path, dstarch_loglik, log_squares, logarch_fit,
    logarch_k, logarch_log_path, DstarchFit, DstarchParams, GmmRoute,
};
pub use spgarchx::{
    spgarchx_fit, spgarchx_fit_with, spgarchx_forecast, spgarchx_k, spgarchx_loglik, spgarchx_variance_path, SpGarchXFit,
    SpGarchXOptions, SpGarchXParams,
};
pub use stegarch::{
    stegarch_filtered, stegarch_fit, stegarch_forecast, stegarch_k, stegarch_log_forecast_path, stegarch_loglik,
    StEgarchFit, StEgarchParams, StEgarchWeights,
};
pub use stgarch::{stgarch_fit, stgarch_forecast, stgarch_k, stgarch_loglik, stgarch_variance_path, StGarchFit, StGarchParams};
