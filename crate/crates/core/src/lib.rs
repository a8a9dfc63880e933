//! Learning the residual ("bi-directed") dependence structure of a latent
//! measurement model for binary data.
//!
//! An expert partition assigns every observed binary item to one latent
//! factor. Conditional on the factors, items are coupled through a
//! cumulative distribution network of Frank copulas, one per bi-directed
//! edge. Structure and parameters are learned by maximizing a penalized
//! pairwise composite likelihood, optionally sharpened by Laplace posteriors
//! over the copula parameters of each pair of factors.
//!
//! Module map:
//!
//! - [`model`]: partitions, mixed graphs, parameters, datasets.
//! - [`normal`], [`copula`]: scalar primitives (normal CDF/quantile, Frank
//!   copula, probit link, intercept elimination).
//! - [`cdn`]: conditional CDFs, exact PMFs by flip-variable elimination,
//!   bivariate closed forms, exact sampling.
//! - [`quadrature`]: latent grids with cached rectangle weights, theta grids.
//! - [`score`]: sufficient statistics, pair scores, PCL and the Q bound.
//! - [`laplace`]: Laplace posteriors over group-pair copula parameters.
//! - [`learner`]: the single-shot, greedy and bound-based learners, embedding.
//! - [`synthetic`], [`metrics`], [`io`], [`benchmark`]: simulation study
//!   plumbing.

pub mod benchmark;
pub mod cdn;
pub mod copula;
pub mod error;
pub mod io;
pub mod laplace;
pub mod learner;
pub mod metrics;
pub mod model;
pub mod normal;
mod optim;
pub mod quadrature;
pub mod score;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
