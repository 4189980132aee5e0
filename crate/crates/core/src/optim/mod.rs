//! In-repo convex solvers: dense QP/LP interior point and a small SDP barrier
//! method for LMI feasibility.

pub mod qp;
pub mod sdp;

pub use qp::{solve_lp, solve_qp, solve_qp_with, KktResiduals, QpOptions, QpProblem, QpSolution, QpStatus};
pub use sdp::{solve_lmi_feasibility, LmiBlock, LmiOutcome, LmiProblem};
