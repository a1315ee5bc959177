//! Generalized linear model ratemaking for motor insurance portfolios.

pub mod cli;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod ingest;
pub mod selection;
pub mod special;
pub mod synth;
pub mod tariff;

pub use error::{Error, Result};
