//! Mean-field laboratory for station-based car-sharing networks.
//!
//! Three station models are covered: unbounded stations with reservations,
//! capacity-capped stations without reservations, and capped stations with
//! reservations. Each can be explored as a finite particle system, through its
//! mean-field Kolmogorov equations, at equilibrium, and (for the unbounded
//! model) through a Volterra description of the reservation departure rate.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod delta;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod model;
pub mod ode;
pub mod sim;
pub mod transient;

pub use error::{Error, Result};
pub use model::{
    dist_distance, total_mass, Capacity, JointDist, MarginalDist, ModelKind, ModelParams,
    StationLaw, Tolerances, TruncationGrid,
};
