//! Normalized Ricci flow on asymptotically hyperbolic warped products.

pub mod error;
pub mod fit;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod initial_data;
pub mod normal_form;
pub mod runner;
pub mod scalar;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid64 = grid::RadialGrid<f64>;
pub type Grid32 = grid::RadialGrid<f32>;
pub type Field64 = grid::ScalarField<f64>;
pub type Field32 = grid::ScalarField<f32>;
pub type Metric64 = geometry::WarpedMetric<f64>;
pub type Metric32 = geometry::WarpedMetric<f32>;
pub type Bundle64 = geometry::CurvatureBundle<f64>;
pub type Bundle32 = geometry::CurvatureBundle<f32>;
pub type Trajectory64 = flow::FlowTrajectory<f64>;
pub type Trajectory32 = flow::FlowTrajectory<f32>;
