//! Transient analysis of the reservation model through the departure rate of its
//! reservation queue.

pub mod bessel;
pub mod rate;
pub mod schemes;
pub mod volterra;

pub use bessel::bessel_i;
pub use rate::{estimate_rate, v_theory, RateEstimate, RateFitOptions};
pub use schemes::{
    default_step, lower_scheme, solve_delta_system, solve_delta_system_with, upper_scheme,
    SchemeOptions, SchemeRun,
};
pub use volterra::{
    kernel_d, psi_forcing, solve_h, solve_h_with, QueueInit, RateFunction, VolterraOptions,
    VolterraSolution,
};
