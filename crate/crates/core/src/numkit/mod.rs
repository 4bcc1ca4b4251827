//! Minimal dense numerics: tensors, a reverse-mode tape, layers and Adam.
//!
//! Everything runs in `f64`; checkpoints store `f32`.

mod adam;
mod checkpoint;
mod graph;
mod nn;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Var};
pub use nn::{multi_head_attention, AttentionParams, LayerNorm, Linear, Mlp, TransformerLayer};
pub use params::{Ctx, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
