//! Steady two-dimensional gravity water waves with vorticity in height-function
//! (Dubreil-Jacotin) variables, and diagnostics for the relative flow force
//! flux function `Φ`.

pub mod asymptotics;
pub mod background;
pub mod banded;
pub mod dispersion;
pub mod error;
pub mod field;
pub mod flow_force;
pub mod physical;
pub mod quadrature;
pub mod solver;
pub mod stencil;

pub use error::{Result, WaveError};
