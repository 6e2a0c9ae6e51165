//! Synthetic scene generation, the alternating reconstruction loop,
//! geometry/reflectance metrics, and their report types.

mod shapes;

pub use shapes::{icosphere, superquadric};
