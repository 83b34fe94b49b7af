use serde::Serialize;

use super::bundle::{encode_masks, EncodedTicketBundle};
use crate::error::{Error, Result};
use crate::mask::{BitMask, TaskMask};

/// Model capacity including the cost of storing every task mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityReport {
    /// Fraction of weights never selected by any task.
    pub sparsity: f64,
    /// `1 - payload_bits / (T * numel)`.
    pub compression_rate: f64,
    pub num_tasks: usize,
    /// `(1 - S) + (1 - α) T / 32`
    pub cap_formula: f64,
    /// `(1 - S) + payload_bits / (32 * numel)`
    pub cap_measured: f64,
    pub payload_bits: u64,
    pub numel: u64,
}

/// Capacity with 32-bit weights: `(1 - S) + (1 - α) T / 32`.
pub fn cap_formula(sparsity: f64, compression_rate: f64, num_tasks: usize) -> f64 {
    (1.0 - sparsity) + (1.0 - compression_rate) * num_tasks as f64 / 32.0
}

/// Capacity of `masks`; encodes them when no bundle is supplied.
pub fn capacity(masks: &[TaskMask], bundle: Option<&EncodedTicketBundle>) -> Result<CapacityReport> {
    if masks.is_empty() {
        return Ok(CapacityReport {
            sparsity: 1.0,
            compression_rate: 0.0,
            num_tasks: 0,
            cap_formula: 0.0,
            cap_measured: 0.0,
            payload_bits: 0,
            numel: 0,
        });
    }
    let owned;
    let bundle = match bundle {
        Some(b) => {
            if b.num_tasks as usize != masks.len() {
                return Err(Error::dim("capacity bundle tasks", masks.len(), b.num_tasks));
            }
            b
        }
        None => {
            owned = encode_masks(masks)?;
            &owned
        }
    };
    let mut union: Vec<BitMask> = masks[0].layers.clone();
    for m in &masks[1..] {
        for (u, l) in union.iter_mut().zip(&m.layers) {
            *u = u.or(l)?;
        }
    }
    let numel: usize = union.iter().map(BitMask::len).sum();
    if numel as u64 != bundle.numel() {
        return Err(Error::dim("capacity numel", numel, bundle.numel()));
    }
    let used: usize = union.iter().map(BitMask::count_ones).sum();
    let sparsity = 1.0 - used as f64 / numel as f64;
    let alpha = bundle.compression_rate();
    let t = masks.len();
    Ok(CapacityReport {
        sparsity,
        compression_rate: alpha,
        num_tasks: t,
        cap_formula: cap_formula(sparsity, alpha, t),
        cap_measured: (1.0 - sparsity) + bundle.payload_bits as f64 / (32.0 * numel as f64),
        payload_bits: bundle.payload_bits,
        numel: numel as u64,
    })
}
