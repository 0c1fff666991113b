//! Frequency locking of relative periodic orbits in S¹-equivariant systems
//! under modulated-wave forcing.
//!
//! The pipeline: [`system`] defines `x' = f(x) + γ g(x, βt, αt)`, [`orbit`]
//! finds the modulated wave and its Floquet data, [`adjoint`] the normalized
//! adjoint solutions, [`averaging`] the averaged forcings, [`curves`] the
//! locking curves and cones, [`verify`] checks locking by simulation and
//! [`sweep`] maps verdicts over parameter grids.

pub mod adjoint;
pub mod averaging;
pub mod curves;
pub mod error;
pub mod io;
pub mod ode;
pub mod orbit;
pub mod sweep;
pub mod system;
pub mod trig;
pub mod verify;

pub use error::{Error, Result};
