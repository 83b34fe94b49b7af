//! Datasets, loaders and task/session generators.

mod csv_file;
mod dataset;
pub mod idx;
mod sessions;
mod streams;

pub use csv_file::load_csv;
pub use dataset::{Dataset, Normalization, TrainTest};
pub use idx::{load_idx, load_mnist_dir};
pub use sessions::{fewshot_sessions, SessionSpec};
pub use streams::{
    apply_permutation, gaussian_task, permuted_tasks, split_tasks, synth_gaussian_tasks, task_permutation,
    StreamDescriptor, TaskData, TaskStream,
};
