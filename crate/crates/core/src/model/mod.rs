//! Causal transformer language model and its persistence.

mod checkpoint;
mod config;
mod encode;
mod infer;
mod transformer;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::ModelConfig;
pub use encode::{encode_example, encode_parts, encode_prompt, join_context, Batch, EncodedExample};
pub use infer::KvCache;
pub use transformer::{param_layout, Model};
