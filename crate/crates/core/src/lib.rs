//! Reconstruction of noisy or occluded 2D+time pulsatile flow fields with
//! physics-informed neural fields.
//!
//! The crate covers the full synthetic pipeline: analytic Womersley flow
//! generation, speckle-style corruption and occlusion, a particle-image
//! velocimetry surrogate, coordinate-encoded neural field models with
//! Navier-Stokes-constrained training, and multi-metric verification
//! (field/cycle/profile MSE and cylindrically integrated flow rate).

pub mod autodiff;
pub mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod model;
pub mod piv;
pub mod rng;
pub mod synthdata;
pub mod training;
pub mod verify;

#[cfg(test)]
pub(crate) mod testkit;
