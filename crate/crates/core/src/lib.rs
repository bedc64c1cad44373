//! Lower-bound estimation of a fixed model's true error from a small labeled
//! test set and an optimized set of synthetic samples.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod baselines;
pub mod bound;
pub mod cli;
pub mod counts;
pub mod data;
pub mod error;
pub mod generator;
pub mod io;
pub mod models;
pub mod osyn;
pub mod partition;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LabeledSample = data::LabeledSample<f64>;
pub type Dataset = data::Dataset<f64>;
pub type ModelHandle = data::ModelHandle<f64>;
pub type ModelLoss = data::ModelLoss<f64>;
pub type LossTable = data::LossTable<f64>;
pub type Partition = partition::Partition<f64>;
pub type RegionMass = generator::RegionMass<f64>;
pub type GmmParams = generator::GmmParams<f64>;
pub type ShiftedGmm = generator::ShiftedGmm<f64>;
pub type FileGenerator = generator::FileGenerator<f64>;
pub type RegionStats = bound::RegionStats<f64>;
pub type BoundParams = bound::BoundParams<f64>;
pub type OsynResult = osyn::OsynResult<f64>;
