//! Few-shot class-incremental learning with soft subnetworks and
//! nearest-class-mean inference.

mod proto;
mod run;
mod train;

pub use crate::data::{fewshot_sessions, SessionSpec};
pub use proto::{
    compute_prototypes, cosine_distance, features_of, ncm_classify, ncm_from_feature, ncm_predict, prototype_loss,
    prototypes_from_features, Prototype, PrototypeStore,
};
pub use run::{check_disjoint, run_fscil, FscilRun, SessionRow};
pub use train::{train_base, train_incremental, BaseOutcome, FscilConfig, BASE_HEAD};
