//! Distribution-calibrated multi-head ordinal classifiers with test-time
//! aggregation for label-shifted test sets.
//!
//! Training fits one shared trunk and `K` heads, each calibrated towards a
//! different one-dominating-class label distribution. At test time the heads
//! are mixed with simplex weights adapted on unlabeled test data by a
//! consistency objective between augmented views.

pub mod autodiff;
pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod ordinal;
pub mod rng;
pub mod tta;

pub use error::{Error, Result};
