//! GPT2-style decoder and its checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod gpt;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use gpt::{sequence_flags, AttnNorm, BatchRef, Block, ForwardOptions, ForwardOutput, GptModel};
