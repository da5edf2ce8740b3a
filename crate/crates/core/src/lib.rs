//! Attention-variant laboratory: standard multi-head scaled dot-product
//! attention next to Optimized, Efficient and Super attention, with a
//! reverse-mode tape, a cost model, constructive equivalence oracles, a toy
//! training harness and a latency benchmark.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod cost;
pub mod error;
pub mod matrix;
pub mod oracles;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod train;

pub use attention::{AttentionConfig, AttentionTensors, AttentionWeights, VariantKind};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use ops::{Counting, Eager, Ops};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
