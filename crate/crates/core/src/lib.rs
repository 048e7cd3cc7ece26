//! Deterministic edge-network simulator and learning library for scheduling
//! tree-of-thoughts generation steps across a base station and edge service
//! providers.
//!
//! The crate models a layered thought DAG, a Rayleigh-faded wireless
//! channel, token-driven generation quality/delay laws, and an exact
//! scheduling timeline, then trains a diffusion-policy soft actor-critic
//! scheduler against classical and learning baselines on top of that
//! simulator.

// Numeric code here favors explicit index loops over iterator chains and
// NaN-rejecting comparisons such as `!(x > 0.0)`.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod diffusion;
pub mod dsac;
pub mod env;
pub mod error;
pub mod genai;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod tot;

pub use error::{Error, Result};
