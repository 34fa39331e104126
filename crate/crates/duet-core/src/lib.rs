//! Simultaneous cell-type deconvolution and spatial-domain detection for
//! spot-level spatially resolved transcriptomics.
//!
//! Spot counts are modeled as Poisson with identity link: the mean of gene
//! `g` in spot `i` is `s_i * b_g' theta_i`, with `theta_i` a cell-type
//! composition on the unit simplex and `s_i` a free size factor. The
//! estimator minimizes the pooled negative log-likelihood plus a weighted
//! group-norm fusion penalty on composition differences of nearby spots; the
//! penalty's nondifferentiability fuses compositions exactly, so spatial
//! domains fall out of the solution as connected groups of equal rows.
//!
//! The solver is a two-block coordinate descent: closed-form size-factor
//! updates alternate with a proximal ADMM over the simplex-constrained
//! compositions ([`solver::fit`]). Penalty strength is chosen by Poisson
//! data thinning or an information criterion ([`select`]), with a
//! warm-started solution path over a log-spaced grid. [`weights`] builds
//! the fusion graph from pilot estimates, [`sim`] generates synthetic
//! benchmarks, [`metrics`] scores them, and [`io`]/[`render`] cover files
//! and figures.

pub mod admm;
pub mod cluster;
pub mod error;
pub mod io;
pub mod metrics;
pub mod poisson;
pub mod render;
pub mod select;
pub mod sim;
pub mod simplex;
pub mod solver;
pub mod types;
pub mod validate;
pub mod weights;

pub use error::{DuetError, Result};
pub use types::{
    ClusterAssignment, CompositionMatrix, ExpressionMatrix, FitResult, ReferenceMatrix,
    SizeFactors,
};
