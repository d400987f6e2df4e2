//! Minimal differentiable-network substrate with analytic backward passes.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod net;
pub mod param;
pub mod tensor;

pub use adam::Adam;
pub use layers::{BnMode, LayerKind, LayerSpec};
pub use net::{Module, Slot};
pub use param::Param;
pub use tensor::Tensor4;
