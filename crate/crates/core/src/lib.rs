pub mod algebra;
pub mod error;
pub mod metrics;
pub mod model;
pub mod opt_krotov;
pub mod opt_montecarlo;
pub mod opt_variational;
pub mod propagation;

pub use error::{Error, Result};
