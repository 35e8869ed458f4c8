//! Byte-level corpus, batching, evaluation and sampling.

pub mod corpus;
pub mod eval;
pub mod sampler;
pub mod synth;

pub use corpus::{detokenize, load_corpus, split_documents, tokenize, Corpus, Split};
pub use eval::{evaluate, generate, EvalReport, SampleOptions};
pub use sampler::{Batch, BatchSampler};
pub use synth::synthetic_corpus;

/// End-of-text token id; byte values occupy 0–255.
pub const EOT: u16 = 256;

/// Vocabulary size of the byte tokenizer: 256 bytes plus EOT.
pub const VOCAB_SIZE: usize = 257;
