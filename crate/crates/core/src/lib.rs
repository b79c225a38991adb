// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod levy;
pub mod linalg;
pub mod path;
pub mod sampled;
pub mod scalar;
pub mod simulate;
pub mod spectral;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Real;

pub use estimators::{EstimationResult, EstimatorKind, MinimizeOptions, ParamSpace};
pub use levy::{LevySpec, NigParams};
pub use path::SamplePath;
pub use sampled::{ContinuousModel, SampledModel};
pub use zoo::ModelFamily;

pub type ContinuousModelF64 = ContinuousModel<f64>;
pub type ContinuousModelF32 = ContinuousModel<f32>;
pub type SampledModelF64 = SampledModel<f64>;
pub type SampledModelF32 = SampledModel<f32>;
pub type SamplePathF64 = SamplePath<f64>;
pub type SamplePathF32 = SamplePath<f32>;
pub type ParamSpaceF64 = ParamSpace<f64>;
pub type ParamSpaceF32 = ParamSpace<f32>;
