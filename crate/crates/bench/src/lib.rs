//! Simulation, domain-of-attraction and runtime harnesses.

pub mod benchmark;
pub mod doa;
pub mod sampling;
pub mod sim;
pub mod systems;
