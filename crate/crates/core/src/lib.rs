//! Meshfree generalized finite difference operators on 2D point clouds,
//! including diffusion operators derived from the discrete Laplacian.

pub mod benchmark;
pub mod diffusion;
pub mod error;
pub mod mls;
pub mod operator;
pub mod pointcloud;
pub mod solver;
pub mod sparse;
pub mod spatial;
pub mod verification;
pub mod voronoi;

pub use error::{GfdmError, Result};
