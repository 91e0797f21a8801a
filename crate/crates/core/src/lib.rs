//! Pseudospectral simulation, feedback stabilization and exact steering for
//! the Korteweg–de Vries equation on the periodic domain.

pub mod control;
pub mod controllability;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod io;
pub mod spectral;

pub use error::{KdvError, Result};
