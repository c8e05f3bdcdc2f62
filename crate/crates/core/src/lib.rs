//! Self-supervised ordering of 3-D point clouds.
//!
//! The pipeline scores every point by its contribution to a max-pooled
//! global feature, turns the scores into a soft permutation with entropic
//! optimal transport, and trains the whole stack end to end with a
//! hierarchical contrastive loss over nested prefixes of the ordered cloud.
//! No labels are used anywhere in training.
//!
//! The crate is `no_std`-compatible (`alloc` required); the `std` feature
//! (on by default) only switches float math to the native intrinsics.
//! File formats and the command-line front end live in the companion
//! `pointrank-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backbone;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod hcl;
pub mod scorer;
pub mod sorter;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use graph::{EngineError, Graph, NodeId};
pub use tensor::Tensor2;

/// Derive an independent 64-bit seed from a base seed and a stream index
/// (splitmix64 finalizer). Used wherever one configured seed has to fan out
/// into per-cloud / per-epoch streams without correlation.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
