//! Deep energy method solvers for 3D elasticity and hyperelasticity.
//!
//! Displacements on a structured node grid are produced by a network
//! backbone (MLP or Chebyshev graph convolution) and trained by minimizing the
//! discrete potential energy. Spatial gradients come either from network
//! input derivatives at the nodes or from trilinear hexahedral shape functions
//! at Gauss points.

pub mod assembly;
pub mod diffengine;
pub mod error;
pub mod graph;
pub mod grid;
pub mod materials;
pub mod models;
pub mod reference;
pub mod sparse;
pub mod tensor;
pub mod training;

pub use error::{DemError, Result};
pub use tensor::Tensor;
