//! Periodic homogenization of elasto-dielectric composites carrying
//! microscopic space charges.
//!
//! The crate solves the periodic cell problems on the unit torus, assembles
//! the effective permittivity, charge coupling, elasticity and
//! electrostriction tensors, evaluates the dilute single-inclusion
//! asymptotics, solves the homogenized boundary-value problems on boxes and
//! compares them with fine-scale solves at finite period.

pub mod boxfem;
pub mod cell;
pub mod dilute;
pub mod dst;
pub mod effective;
pub mod error;
pub mod fem;
pub mod macro_solver;
pub mod microstructure;
pub mod pcg;
pub mod tensor;
pub mod torus;
pub mod twoscale;

pub use error::{Error, Result};
