//! Batch pipeline: a per-camera filtering stage, a synchronization barrier
//! and a per-frame reconstruction stage, run as a retrying task DAG with
//! content fingerprints so interrupted runs resume where they stopped.

mod executor;
mod graph;
mod manifest;
mod sync;
mod tasks;

pub use executor::*;
pub use graph::*;
pub use manifest::*;
pub use sync::*;
pub use tasks::{run_task, TaskContext};
