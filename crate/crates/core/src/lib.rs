#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod collision;
pub mod config;
pub mod engine;
pub mod fourier;
pub mod error;
pub mod initial;
pub mod limit;
pub mod real;
pub mod rng;
pub mod runner;
pub mod spectral;
pub mod spine;
pub mod stats;

pub use error::{Error, Result};
pub use real::Real;

/// Double-precision instantiations.
pub type Model = collision::CollisionModel<f64>;
pub type Ic = initial::InitialCondition<f64>;
pub type Plan = engine::SimulationPlan<f64>;
pub type Grid = fourier::CfGrid<f64>;

/// Single-precision instantiations.
pub type Model32 = collision::CollisionModel<f32>;
pub type Ic32 = initial::InitialCondition<f32>;
pub type Plan32 = engine::SimulationPlan<f32>;
pub type Grid32 = fourier::CfGrid<f32>;
