//! Staggered minimizing-movement simulator for thermo-viscoelastodynamics
//! with a second-gradient regularization on a square grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod material;
pub mod mechanics;
pub mod thermal;
pub mod driver;
pub mod audit;
pub mod oracles;
pub mod config;
pub mod io;
pub mod study;
pub mod cli;

pub use error::{Error, Result};
pub use grid::{Grid2D, ScalarField, VectorField};
pub use material::MaterialParams;
