//! Multi-modal remaining-useful-life regression for turbofan degradation data.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod spectral;
pub mod temporal;
pub mod textknow;
pub mod tmaf;
pub mod vlma;

pub use error::{Error, Result};

/// Double-precision instantiations used by the harness and the CLI.
pub type Tensor = numkit::Tensor<f64>;
pub type ParamStore = numkit::ParamStore<f64>;
pub type Model = model::Model<f64>;
pub type Vlma = vlma::Vlma<f64>;
