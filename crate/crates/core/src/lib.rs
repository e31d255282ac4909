//! Two-stage daily electricity consumption forecasting.
//!
//! Stage one is a piecewise linear regression on calendar features that
//! removes trend and periodic structure; stage two is a dilated causal
//! convolutional network trained on the stage-one residuals. The forecast is
//! the sum of both stages.

pub mod calendar;
pub mod cli;
pub mod error;
pub mod filter;
pub mod forecast;
pub mod linalg;
pub mod net;
pub mod series;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
