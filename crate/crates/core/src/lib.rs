//! Projected gradient ascent with momentum for block-diagonal (modular) hybrid
//! MIMO receive beamformers, and deep unfolding of its hyperparameters.
//!
//! The crate is organised bottom-up: dense complex linear algebra
//! ([`linalg`]), channel datasets ([`channel`]), the sum-rate objective and its
//! gradient ([`objective`]), feasible-set projections ([`constraints`]), the
//! unrolled optimizer ([`optimizer`]), hyperparameter learning ([`learning`]),
//! non-learned baselines ([`baselines`]) and experiment drivers ([`harness`]).

// `!(x >= 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod autodiff;
pub mod baselines;
pub mod constraints;
pub mod error;
pub mod harness;
pub mod learning;
pub mod linalg;
pub mod objective;
pub mod optimizer;
pub mod seeding;

pub use error::{Error, Result};
pub use linalg::{BlockStructure, ComplexMatrix, C64};
