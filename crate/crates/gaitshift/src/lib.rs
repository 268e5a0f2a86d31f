//! Unsupervised cross-domain adaptation of a gait set encoder.
//!
//! A small set encoder is pretrained with a triplet loss on a labeled source
//! domain, then adapted to an unlabeled target domain: each target sample's
//! nearest neighbors in embedding space form its neighborhood, samples are
//! ranked by the entropy of their similarity distribution over a memory
//! bank, and training proceeds in rounds over a growing, entropy-ordered
//! fraction of anchors with the anchor-neighborhood loss.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod discovery;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod pipeline;

pub use error::{GaitError, Result};
