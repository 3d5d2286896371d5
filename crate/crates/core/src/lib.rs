//! Secrecy-rate maximization for a two-user NOMA downlink whose base station
//! carries movable (fluid) transmit antennas.
//!
//! The cell-center user is the intended receiver of `s1`; the cell-edge user
//! is served `s2` but may eavesdrop on `s1`. The optimizer alternates between
//! secure beamforming with fixed antenna positions and per-antenna position
//! updates with fixed beamformers, each stage solving a sequence of convex
//! restrictions built from tangent bounds.

pub mod ao;
pub mod baselines;
pub mod beamforming;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod position;
pub mod qcqp;
pub mod rates;
pub mod surrogates;

pub use error::{Error, Result};
