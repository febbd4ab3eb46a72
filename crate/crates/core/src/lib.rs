//! Spectral Galerkin simulation of stochastic compressible non-Newtonian flow, with
//! diagnostics for energy inequalities, density and Orlicz bounds, stopping times and
//! empirical Young measures.

pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod noise;
pub mod solver;
pub mod spectral;
pub mod young;

pub use error::{Error, Result};
