//! Bayesian optimization over search spaces with branching and nested
//! hyperparameters.
//!
//! The numeric core ([`kernel`], [`linalg`], [`gp`], [`acquisition`]) is
//! generic over the floating point type through [`Scalar`]; the loop, the
//! benchmark harness, sensitivity analysis and the command line work in
//! `f64`. The aliases below name the `f64` instantiations.

pub mod acquisition;
pub mod bench;
pub mod cli;
pub mod config;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod space;
pub mod study;

pub use scalar::Scalar;
pub use space::{Configuration, SearchSpace, Value};
pub use study::{Objective, Study, StudyOptions};

pub type Gp = gp::TrainedGp<f64>;
pub type Params = kernel::KernelParams<f64>;
pub type Point = kernel::EncodedPoint<f64>;
pub type Data = gp::Dataset<f64>;
