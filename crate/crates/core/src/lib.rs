//! Numerical laboratory for smooth Lorentzian geometry.

pub mod cone;
pub mod config;
pub mod error;
pub mod experiments;
pub mod ext;
pub mod grid;
pub mod pde;
pub mod report;
pub mod bochner;
pub mod busemann;
pub mod causal;
pub mod spacetime;

pub use error::{LabError, Result};
pub use ext::ExtReal;
