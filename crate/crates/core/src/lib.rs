//! Training engine for attention-based multiple instance learning with a
//! memory-bounded gradient-accumulation strategy.
//!
//! The crate is organized around six pieces:
//!
//! - [`tensor`] / [`tape`]: dense `f64` arrays and a recording tape for
//!   reverse-mode differentiation with a countable activation footprint.
//! - [`model`]: the MLP encoder plus non-gated attention pooling classifier.
//! - [`train`]: gradient strategies (full-bag, chunked accumulation,
//!   uniform subsampling), the Adam optimizer, and the training loop.
//! - [`data`]: synthetic bag datasets and an IDX digit-file loader.
//! - [`eval`]: bag accuracy, attention-based instance AUC, and the
//!   experiment matrix runner.
//! - [`verify`]: executable property suites (finite differences,
//!   gradient equivalence, memory scaling, AUC oracle).

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    attention_pool, bag_label, bce_loss, encode, encode_infer, forward_bag, BagForwardResult,
    EncoderParams, Mode, ModelConfig, ParamSet, PoolerParams,
};
pub use tape::{LeafKind, NodeId, Scope, Tape};
pub use tensor::Tensor;
pub use train::{
    accum_grad, adam_step, full_bag_grad, sample_train_grad, train, AdamState, GradSet, StepReport,
    Strategy, TrainConfig, TrainOutcome,
};
