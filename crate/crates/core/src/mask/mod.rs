//! Mask construction: top-c% selection, accumulated unions, soft masks and
//! reuse statistics.

mod bits;
mod select;
mod stats;

pub use bits::BitMask;
pub use select::{
    accumulate, inject_inference_noise, make_soft_mask, selected_count, topc_mask, validate_capacity, AccumMask,
    Mask, SoftMask, TaskMask,
};
pub use stats::{mask_stats, ReuseFractions, ReuseReport};

pub(crate) use stats::category_sets;
