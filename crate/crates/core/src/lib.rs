//! Matrix product state generative modelling of Heston price paths and Monte
//! Carlo pricing of path-dependent options on the generated paths.
//!
//! Pipeline: [`heston`] simulates training paths, [`model`] discretizes them
//! and defines the Born-rule MPS distribution, [`train`] fits it with two-site
//! sweeps, [`sampling`] draws exact samples, and [`pricing`] prices options
//! on either path source. [`pipeline`] wires the steps behind the CLI.

pub mod error;
pub mod heston;
pub mod model;
pub mod paths;
pub mod pipeline;
pub mod pricing;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{DiscretizationMap, Mps, SiteTensor};
pub use paths::{PathSet, PricePaths, SymbolPaths};
