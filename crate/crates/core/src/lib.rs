//! Floquet dynamics of Dirac points in periodically driven honeycomb media.
//!
//! The crate builds the periodic Schrödinger operator `−Δ + V` for a
//! honeycomb potential, locates its Dirac points, and studies the effective
//! two-component Dirac system obtained when a time-periodic vector potential
//! is switched on. Modules:
//!
//! * [`lattice`], [`potential`]: geometry and honeycomb potentials.
//! * [`bloch`]: plane-wave Bloch Hamiltonians, bands, Dirac points.
//! * [`dirac`]: the driven 2×2 Dirac Hamiltonian, monodromies, Floquet gaps.
//! * [`flow`]: full wave dynamics on a supercell and the envelope comparison.
//! * [`projection`]: Poisson averaging and spectral projections.
//! * [`cli`]: configuration-driven entry points shared by the binary.

pub mod bloch;
pub mod cli;
pub mod dirac;
pub mod error;
pub mod fit;
pub mod flow;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod projection;

pub use error::{Error, Result};
