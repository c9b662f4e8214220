//! Bilevel feature selection for the feature-based newsvendor.
//!
//! The crate is organized bottom-up:
//!
//! * [`lp`]: bounded revised simplex with primal and dual certificates.
//! * [`milp`]: branch-and-bound over [`lp`] relaxations with indicator
//!   constraints compiled to big-M rows, time limits and gap reporting.
//! * [`datagen`]: seeded synthetic instances, hold-out and shuffle-split
//!   partitions.
//! * [`erm`]: empirical-risk-minimization order rules (plain, L1, L0) and
//!   grid-search calibration of the regularization weight.
//! * [`bfs`]: single-level MILP reformulations of bilevel feature selection
//!   (hold-out and cross-validated) plus an exhaustive-enumeration oracle.
//! * [`metrics`]: newsvendor cost, recovery accuracy, cost deviation and the
//!   one-sided Wilcoxon signed-rank test.
//! * [`harness`]: configuration-driven experiment sweeps, persistence and
//!   figure-data emission.

pub mod bfs;
pub mod datagen;
pub mod erm;
pub mod error;
pub mod harness;
pub mod lp;
pub mod metrics;
pub mod milp;
pub mod par;

pub use error::{Error, Result};
