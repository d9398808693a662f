//! Scaled-zonotope tube MPC toolkit.

pub mod complexity;
pub mod containment;
pub mod error;
pub mod invariance;
pub mod linalg;
pub mod program;
pub mod sets;
pub mod solver;
pub mod tube;

pub use error::{Error, Result};
