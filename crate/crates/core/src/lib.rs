//! Cost-regularized unbalanced optimal transport with inner-product costs
//! `c_M(x, y) = -<M x, y>`, `||M||_F <= r`.
//!
//! The crate provides a log-domain unbalanced Sinkhorn solver, a block
//! coordinate descent solver that alternates plan and cost-map updates, an
//! entropic Monge-map estimator built on top of the solution, and the
//! evaluation harness (subsampling, k-NN label transfer, transported mass)
//! used to assess cross-space alignments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bcd;
pub mod data_io;
pub mod divergence;
pub mod entropic_map;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod sinkhorn;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate, CouplingMatrix, DiscreteMeasure, EntropySpec, LinearCostMap, MInit, PointCloud,
    SolveConfig, SolveResult,
};
