//! Robust tube-based LPV model predictive control for autonomous lane keeping.
//!
//! The crate is organized bottom-up:
//!
//! * [`polytope`] halfspace/vertex polytopes and the set algebra used by the
//!   invariant-set and tube computations,
//! * [`optim`] dense QP/LP and small SDP solvers,
//! * [`vehicle`] lateral LPV error model and longitudinal double integrator,
//! * [`synthesis`] LMI gain design, robust invariant set, artifact file,
//! * [`tube_mpc`] the lateral homothetic-tube controller,
//! * [`longitudinal`] the speed-tracking MPC,
//! * [`sim`] closed-loop cascade simulation, CSV logging and metrics,
//! * [`config`] scenario configuration.

pub mod config;
pub mod error;
pub mod longitudinal;
pub mod optim;
pub mod polytope;
pub mod sim;
pub mod synthesis;
pub mod tube_mpc;
pub mod vehicle;

pub use error::{Error, Result};
