//! Simulation of defocused transmission-electron projection images of weak,
//! sparse 3D objects and reconstruction of their electrostatic potential.
//!
//! Forward models: the projection approximation, first-Born contrast (thin
//! slices and the continuum limit) and a phase-grating multislice. Inverse
//! methods: filtered back-projection of straight-ray data, diffraction
//! tomography on Ewald paraboloids, and a transport-of-intensity variant
//! that symmetrises opposite views before back-projection.

pub mod born_forward;
pub mod ct_baseline;
pub mod dt_recon;
pub mod error;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod phantom;
pub mod propagation;
pub mod tie_recon;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use numerics::{Beam, Field2, Grid2, Grid3, Volume3};
pub use phantom::{Atom, Phantom};
