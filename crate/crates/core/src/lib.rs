//! Multifractal analysis of self-similar measures on the real line.
//!
//! The numerical core is generic over the floating point type (see
//! [`Scalar`]); the aliases at the crate root fix it to `f64`, which is what
//! the command-line front end and the file formats use.

pub mod bisect;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod fit;
pub mod format;
pub mod ifs;
pub mod lq;
pub mod measure;
pub mod moran;
pub mod scalar;
pub mod spectrum;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Ifs = ifs::IfsModel<f64>;
pub type Ifs32 = ifs::IfsModel<f32>;
pub type Cylinder = ifs::CylinderData<f64>;
pub type DimensionReport = spectrum::DimensionReport<f64>;
pub type SpectrumTable = spectrum::SpectrumTable<f64>;
pub type SpectrumPoint = spectrum::SpectrumPoint<f64>;
pub type LocalDimTrace = measure::LocalDimTrace<f64>;
pub type BlockSchedule = divergence::BlockSchedule<f64>;
pub type QuotientTrace = divergence::QuotientTrace<f64>;
pub type MoranSpec = moran::MoranSpec<f64>;
pub type TauEstimate = lq::TauEstimate<f64>;
