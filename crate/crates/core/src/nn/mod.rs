//! Differentiable building blocks: the autodiff tape, parameter
//! collections, the optimizer, and gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;

pub use adam::{clip_global_norm, Adam};
pub use gradcheck::check_gradients;
pub use graph::{Graph, VarId};
pub use params::{Bound, Params};
