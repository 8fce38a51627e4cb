//! Optimal treatment regimes among compliers under non-compliance, with a
//! sensitivity model for the unidentified complier share.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod learner;
pub mod model;
pub mod nuisance;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod value;
pub mod weights;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/strata.md")]
    pub struct Strata;
    #[doc = include_str!("../../../book/src/sensitivity.md")]
    pub struct Sensitivity;
    #[doc = include_str!("../../../book/src/weights.md")]
    pub struct Weights;
    #[doc = include_str!("../../../book/src/learning.md")]
    pub struct Learning;
    #[doc = include_str!("../../../book/src/value.md")]
    pub struct Value;
    #[doc = include_str!("../../../book/src/harness.md")]
    pub struct Harness;
}
