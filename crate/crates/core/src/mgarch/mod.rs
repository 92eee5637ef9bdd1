//! Multivariate benchmarks: DCC, diagonal BEKK and proximity-structured
//! BEKK.

pub mod bekk;
pub mod dcc;
pub mod proximity;

pub use bekk::{bekk_fit, bekk_fit_with, bekk_forecast_var, bekk_k, bekk_loglik, bekk_variance_path, BekkDiagParams, BekkFit, FixedDynamics};
pub use dcc::{dcc_fit, dcc_forecast_var, dcc_k, dcc_loglik, dcc_variance_path, DccFit, DccParams};
pub use proximity::{proxbekk_fit, proxbekk_forecast_var, proxbekk_k, proxbekk_loglik, proxbekk_variance_path, ProxBekkFit, ProxBekkParams};
