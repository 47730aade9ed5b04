//! Detection of the time frame of significant change in time-response data.
//!
//! A parametric curve (4pLL or beta) is fitted by least squares, a two-level
//! parametric bootstrap yields a lower simultaneous confidence band for the
//! absolute first derivative, and the periods where that band exceeds a
//! relevance threshold λ are reported together with bootstrap percentile
//! intervals for their start, end and peak.

pub mod analysis;
pub mod bootstrap;
pub mod ci;
pub mod data;
pub mod detection;
pub mod error;
pub mod fitting;
pub mod io;
pub mod models;
pub mod rng;
pub mod simulate;

pub use bootstrap::{lower_band, BootstrapConfig, ConfidenceBand};
pub use data::{Dataset, TimeDesign};
pub use detection::{extract_regions, test_h0, ChangeReport, Threshold};
pub use error::{Error, Result};
pub use fitting::{fit_ols, FitOptions, FitResult};
pub use models::{Family, ModelSpec, ParamVector};
