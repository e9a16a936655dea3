//! Simulation and numerical verification of the spherically coupled Nanbu
//! particle system with Maxwell collisions.
//!
//! Two copies `U` and `V` of a conservative N-particle Boltzmann system are
//! driven by the same collision clock, the same collision pairs and the same
//! scattering angles; post-collisional directions are coupled by parallel
//! transport on the sphere of collisional directions. The coupling distance
//! `<|U - V|^2>_N` is then almost surely nonincreasing, and its expected
//! decrease rate (the coupling creation) is explicit.
//!
//! Modules:
//!
//! * [`geometry`]: unit vectors, Wallis integrals, isotropic steps and the
//!   spherical coupling of two collisional directions.
//! * [`kernels`]: angular collision kernels, Grad's cut-off, Levy intensity.
//! * [`particles`]: particle states, (coupled) collisions and event-driven
//!   time evolution.
//! * [`observables`]: coupling distance, coupling creation, parallelogram
//!   functional, condition numbers, moments and empirical Wasserstein-2.
//! * [`inequalities`]: builders for structured and adversarial coupled
//!   states, including the two counterexample families.
//! * [`experiment`]: configuration, validation and reproducible scenario runs
//!   writing CSV and JSON artifacts.
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability; `cargo run --example` lists them.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod inequalities;
pub mod kernels;
pub mod linalg;
pub mod observables;
pub mod particles;
pub mod quadrature;
pub mod seeds;
mod vecops;

pub use error::{Error, Result};
pub use geometry::UnitVector;
pub use kernels::AngularKernel;
pub use particles::{CoupledState, ParticleState};
