pub mod config;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod mgarch;
pub mod model;
pub mod networks;
pub mod numerics;
pub mod panel;
pub mod simulate;
pub mod spatial;
pub mod univariate;

pub use error::{Error, Result};
