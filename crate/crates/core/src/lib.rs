//! Achievable rate regions of multi-user MISO interference channels under
//! single-user detection, built from closed-form beamformers and checked
//! against brute-force oracles.

pub mod cli;
pub mod error;
pub mod model;
pub mod mreduce;
pub mod numlin;
pub mod oracle;
pub mod rankone;
pub mod region;
pub mod twouser;

pub use error::{Error, Result};
