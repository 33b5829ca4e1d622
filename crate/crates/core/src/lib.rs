//! Slosh-free trajectory tracking for serial manipulators.
//!
//! The pipeline turns a position-only reference into a pose reference whose
//! container axis follows the specific force (a virtual quadrotor), tracks
//! it with a cascaded PD law in task space, and maps the resulting
//! acceleration command to joint space through a small convex QP that
//! respects position, velocity, acceleration and jerk limits.
//!
//! Module map:
//! * [`kinematics`] - forward kinematics, Jacobian and kinematic Hessian
//! * [`reference`] - C4 reference trajectories and the flatness orientation map
//! * [`task_control`] - SE(3) pose error and the cascaded PD law
//! * [`qp`] - Goldfarb-Idnani dense QP solver
//! * [`joint_control`] - resolved-acceleration QP with task slacks
//! * [`simulation`] - closed-loop kinematic simulation
//! * [`metrics`] - pointwise errors and run benchmarks
//! * [`sweep`], [`export`], [`selfcheck`] - batch runs, file output, model checks

// `!(x > tol)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod joint_control;
pub mod kinematics;
pub mod metrics;
pub mod parallel;
pub mod qp;
pub mod reference;
pub mod selfcheck;
pub mod simulation;
pub mod so3;
pub mod sweep;
pub mod task_control;

pub use error::{Error, Result};
