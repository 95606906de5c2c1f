//! Minimal f64 neural-network engine: tensors on a tape, reverse-mode
//! gradients, and the layers the encoders and projector are built from.

mod gemm;
mod graph;
mod kernels;
mod layers;
mod params;

pub use gemm::{gemm, Mat, MatMut};
pub use graph::{Grads, Graph, Var};
pub use kernels::{attention_forward, ConvGeom};
pub use layers::{BatchNorm, Conv2d, Init, LayerNorm, Linear};
pub use params::{init, Buffer, BufferId, Param, ParamId, ParamKind, ParamStore};

/// Applies collected running-statistic updates to the store.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(BufferId, crate::tensor::Tensor)>) {
    for (id, value) in updates {
        *store.buffer_mut(id) = value;
    }
}
