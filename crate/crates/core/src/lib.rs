//! Covariate-informed Bayesian dynamic functional connectivity.
//!
//! A multi-subject hidden Markov model whose transition probabilities depend
//! on time-varying covariates through a multinomial logit, with one sparse
//! Gaussian graphical model per latent state. State precisions carry a
//! graphical-horseshoe prior; the transition coefficients are updated by
//! Polya-Gamma augmentation; edges are selected after sampling by thresholding
//! shrinkage factors under Bayesian false discovery rate control.
//!
//! The [`mcmc::Sampler`] runs the Gibbs sweep; [`mcmc::summarize`] turns the
//! stored draws into state graphs, state paths and covariate effects.
//! [`simgen`] produces synthetic data with known truth and [`metrics`] scores
//! estimates against it.

pub mod cli;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod ghs;
pub mod mcmc;
pub mod metrics;
pub mod output;
pub mod selection;
pub mod simgen;
pub mod states;
pub mod transition;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/transitions.md")]
    pub mod transitions {}
    #[doc = include_str!("../../../book/src/horseshoe.md")]
    pub mod horseshoe {}
    #[doc = include_str!("../../../book/src/selection.md")]
    pub mod selection {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    pub mod fitting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
