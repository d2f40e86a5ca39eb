//! Joint optimization of a single printable billboard texture that skews the
//! steering predictions of a differentiable driving model across a whole
//! drive-by frame sequence, plus the metrics and synthetic-scene tooling to
//! evaluate it.
//!
//! The numeric core is generic over the scalar type via [`real::Real`];
//! the aliases below pin the `f64` lane the CLI and the test suite use.

pub mod color;
pub mod error;
pub mod gamut;
pub mod geometry;
pub mod gradcheck;
pub mod graph;
pub mod image_io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optimizer;
pub mod perturbation;
pub mod real;
pub mod scene;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` lane aliases.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = graph::Graph<f64>;
pub type Model64 = model::SteeringModel<f64>;
pub type Quad64 = geometry::Quad<f64>;
pub type Homography64 = geometry::Homography<f64>;
pub type Gamut64 = gamut::Gamut<f64>;
pub type Rgb64 = color::Rgb<f64>;
pub type Scene64 = scene::Scene<f64>;
pub type Perturbation64 = perturbation::Perturbation<f64>;
pub type EvalResult64 = metrics::EvalResult<f64>;
