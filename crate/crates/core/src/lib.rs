//! Cost-limit conditioned trajectory diffusion for offline safe planning.
//!
//! The crate is `no_std` (with `alloc`) and contains the whole algorithmic
//! path: toy constrained environments, segment labeling and feasible
//! trajectory relabeling, a small MLP approximator with exact gradients, the
//! DDPM forward/reverse process, score composition (classifier-free guidance
//! over cost limits plus reward-gradient refinement), a receding-horizon
//! planner and the sampling-time diagnostics. File formats, configuration and
//! the command line live in the `sdgd` companion crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod approx;
pub mod dataset;
pub mod diagnostics;
pub mod diffusion;
pub mod env;
mod error;
pub mod gradcheck;
pub mod guidance;
pub mod math;
pub mod planner;
pub mod stats;

pub use error::{Error, Result};
