//! Drift estimation for Ornstein-Uhlenbeck processes driven by Gaussian noise
//! whose covariance has a mixed partial of the form
//! `C_beta |t - s|^(2 beta - 2) + Psi(t, s)` with `|Psi| <= C'_beta (ts)^(beta - 1)`.
//!
//! The crate covers the covariance kernels, the discrete Hilbert-space
//! calculus behind the estimators, exact-in-law path simulation, the
//! estimators themselves and Monte Carlo verdicts on their limit theorems.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod hilbert;
pub mod kernels;
pub mod montecarlo;
pub mod simulate;

pub use error::{Error, Result};
pub use hilbert::{Grid, GramMatrix, GridFunction2};
pub use kernels::KernelSpec;

// The guide in book/ is compiled here so its snippets run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub struct Kernels;
    #[doc = include_str!("../../../book/src/hilbert.md")]
    pub struct Hilbert;
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;
    #[doc = include_str!("../../../book/src/estimators.md")]
    pub struct Estimators;
    #[doc = include_str!("../../../book/src/montecarlo.md")]
    pub struct MonteCarlo;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
