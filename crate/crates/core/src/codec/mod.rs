//! Lossless storage of task masks and capacity accounting.

mod bundle;
mod capacity;
mod huffman;
pub mod maskfile;
mod pack;

pub use bundle::{
    decode_masks, decode_masks_flat, encode_mask_layers, encode_masks, huffman_decode, huffman_encode,
    EncodedTicketBundle,
};
pub use capacity::{cap_formula, capacity, CapacityReport};
pub use huffman::{code_lengths, Code, Codebook};
pub use pack::{pack_layers, pack_symbols, unpack_symbols, MAX_TASKS};
