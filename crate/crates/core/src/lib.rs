//! Step discovery and ordered step localization for instructional video
//! embeddings.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`align`]: DTW and drop-aware DTW kernels with an exhaustive oracle.
//! * [`model`]: a pre-norm transformer decoder whose learnable queries turn a
//!   video into a fixed number of ordered step slots, plus the reverse-mode
//!   differentiation tape used to train it.
//! * [`losses`]: the alignment-supervised contrastive objective and its
//!   regularizers.
//! * [`train`]: AdamW with linear warm-up and cosine decay.
//! * [`infer`]: step localization, zero-shot localization from step texts,
//!   and the order-agnostic nearest-slot baseline.
//! * [`eval`]: framewise metrics, k-means, Hungarian matching and the
//!   evaluation protocols.
//! * [`synth`]: a deterministic generator of planted instructional videos.

pub mod align;
pub mod error;
pub mod eval;
pub mod infer;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod matrix;
pub mod model;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
pub use types::{
    Correspondence, DatasetSample, EmbeddingSequence, GtSegment, MatchMode, Segment,
    SegmentLabeling, SequenceKind, BACKGROUND,
};
