pub mod error;
pub mod frame_calculus;
pub mod geometry;
pub mod jet;
pub mod kinetic_sde;
pub mod linalg;
pub mod operator_assembly;
pub mod scalar;
pub mod spectral_engine;
pub mod sweep_analysis;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Manifold64 = geometry::ManifoldModel<f64>;
pub type Manifold32 = geometry::ManifoldModel<f32>;
pub type CospherePoint64 = geometry::CospherePoint<f64>;
pub type FramePoint64 = frame_calculus::FramePoint<f64>;
pub type FramePoint32 = frame_calculus::FramePoint<f32>;
pub type Block64 = operator_assembly::SpectralBlock<f64>;
pub type Block32 = operator_assembly::SpectralBlock<f32>;
pub type PathState64 = kinetic_sde::PathState<f64>;
