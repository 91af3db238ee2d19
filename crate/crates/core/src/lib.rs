//! Spectral periodic-domain calculus, constitutive laws, relative-energy
//! functionals and time integrators for Euler-Korteweg type systems.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod constitutive;
pub mod dynamics;
pub mod error;
mod fft;
pub mod grid;
pub mod mollify;
pub mod rate;
pub mod relative;

pub use constitutive::{
    set2_check, BumpSpec, CapillarityLaw, EnergyLaw, FluidState, Material, Set2Failure, Set2Verdict,
};
pub use error::{Error, Result};
pub use grid::{ScalarField, TensorField, TorusGrid, VectorField};
pub use mollify::MollifierSpec;
pub use rate::{fit_rate, RateFit};
pub use relative::RelativeEnergyReport;
