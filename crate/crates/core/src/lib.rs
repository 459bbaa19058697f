//! Shape-constrained Gaussian-process emulation on tensor grids of hat
//! functions, with sequential selection of knots and active variables.
//!
//! The pieces, bottom up:
//!
//! * [`basis`] — hat functions, subdivisions and coefficient grids;
//! * [`kernel`] — covariance families, knot covariance, likelihood fitting;
//! * [`constraints`] — interpolation and shape constraints as linear systems;
//! * [`solver`] — a dual active-set quadratic program solver and MAP estimates;
//! * [`maxmod`] — the greedy refinement loop;
//! * [`sampler`] — truncated-Gaussian posterior sampling;
//! * [`bench`] — test functions, designs and error metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod bench;
pub mod constraints;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod maxmod;
pub mod sampler;
pub mod solver;

pub use error::{Error, Result};
