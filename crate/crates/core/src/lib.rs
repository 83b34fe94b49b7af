//! Continual learning with score-ranked subnetworks.
//!
//! Each task trains a top-c% binary subnetwork of one shared network while
//! weights claimed by earlier tasks stay frozen. Task masks are packed into
//! per-weight symbols and Huffman-compressed. A soft-mask variant drives a
//! few-shot class-incremental pipeline with prototype classification.

pub mod analysis;
pub mod codec;
pub mod data;
pub mod error;
pub mod fscil;
pub mod mask;
pub mod nn;
pub mod rng;
pub mod til;

pub use error::{Error, Result};
