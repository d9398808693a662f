//! Zonotopes, polyhedra and boxes.

mod polyhedron;
mod zonotope;

pub use polyhedron::{IntervalBox, LpMax, Polyhedron, DEFAULT_TOL};
pub use zonotope::{polygon_area, ScalingVector, Zonotope};
