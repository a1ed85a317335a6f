//! Coverage-aware adaptive sampling.
//!
//! [`coverage`] holds the closed-form and numerical coverage mathematics,
//! [`scoring`] and [`clustering`] turn a candidate pool into cluster posterior
//! weights, and [`controller`] decides when to stop sampling. [`synthetic`]
//! and [`wire`] provide backends; [`experiment`], [`config`] and [`report`]
//! run and record campaigns.

// Negated comparisons are how parameter checks reject NaN alongside
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod candidate;
pub mod clustering;
pub mod config;
pub mod controller;
pub mod coverage;
pub mod distribution;
pub mod error;
pub mod experiment;
pub mod quadrature;
pub mod report;
pub mod scoring;
pub mod seed;
pub mod synthetic;
pub mod vector;
pub mod wire;

pub use error::{Error, Result};
