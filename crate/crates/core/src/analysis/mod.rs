//! Post-hoc diagnostics: mask overlap, reuse ablation and a gradient
//! smoothness probe.

mod ablation;
mod correlation;
mod smoothness;

pub use ablation::{ablate_reused, ablated_mask, ReuseCategory};
pub use correlation::{jaccard, mask_correlation, CorrelationMatrix};
pub use smoothness::{lipschitz_probe, probe_pairs, ProbeRow, SmoothnessProbe};
