//! Minimal dense-array numeric core: tensors, a reverse-mode tape, Adam,
//! a seeded random source and the parameter checkpoint container.

mod adam;
pub mod checkpoint;
mod graph;
mod params;
mod rng;
mod scalar;
mod sparse;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Session, Var};
pub use params::ParamStore;
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use sparse::{bilinear_map, SparseMap};
pub use tensor::Tensor;
