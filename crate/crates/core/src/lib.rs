//! Joint CPU/bandwidth allocation and hyper-learning-rate control for several
//! federated learning services sharing one edge network.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] describes the network, devices and services, and draws seeded
//!   random instances of them.
//! * [`learning`] holds the convergence algebra of the FEDL training scheme
//!   (global/local round counts and the closed-form optimal hyper-learning rate).
//! * [`cost`] evaluates per-round time and energy and the overall objective for an
//!   [`Allocation`](cost::Allocation).
//! * [`solver`] is a small log-barrier interior-point solver for dense smooth convex
//!   programs, with a KKT checker and a grid oracle for tiny instances.
//! * [`subproblems`] assembles the CPU and bandwidth subproblems (centralized and
//!   per-service decentralized forms) as [`ConvexProgram`](solver::ConvexProgram)s.
//! * [`orchestrator`] runs the centralized block-coordinate pass, the decentralized
//!   Jacobi-proximal ADMM (plus Gauss-Seidel and early-stopping variants) and the
//!   heuristic baselines.
//! * [`fedl`] is a toy FEDL trainer on synthetic strongly convex tasks, used to check
//!   the convergence model that the cost model consumes.

// NaN-rejecting comparisons and index loops over parallel arrays are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cost;
pub mod error;
pub mod fedl;
pub mod learning;
pub mod orchestrator;
pub mod scenario;
pub mod solver;
pub mod subproblems;

pub use error::{Error, Result};

/// Version tag embedded in every serialized document.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
