//! Regression with categorical covariates whose levels are fused into
//! clusters.
//!
//! Each categorical variable is penalised by a minimax concave penalty (MCP)
//! applied to the gaps between consecutive order statistics of its
//! coefficients. The univariate problem is solved to global optimality by a
//! dynamic program over piecewise-quadratic functions ([`univariate`]); the
//! multivariate problem is fitted by block coordinate descent with that
//! solver as the block update ([`fit`]).
//!
//! The crate also ships the verification oracles ([`verify`]), a simulation
//! harness ([`evalsim`]), CSV and model-file I/O ([`data_io`]) and the
//! command-line front end ([`cli`]).

pub mod cli;
pub mod data_io;
pub mod error;
pub mod evalsim;
pub mod fit;
pub mod penalty;
pub mod pwq;
pub mod univariate;
pub mod verify;

pub use error::{Error, Result};
pub use fit::{
    Coefficients, Design, Family, FitConfig, PathEntry, SolutionPath,
};
pub use penalty::McpParams;
pub use univariate::{solve_exact, UnivariateSolution, WeightedMeans};
