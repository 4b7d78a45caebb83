//! Class-incremental learning with exemplar replay amplified by per-class
//! feature generators.
//!
//! A backbone `f = f2 ∘ f1` and a growing linear classifier learn a stream of
//! tasks with disjoint class sets. At the end of each task a small herding
//! memory of exemplars is kept, and one generator per new class learns to mix
//! an exemplar's semantic content (channel means of its `f1` map) with the
//! texture statistics (Gram matrix) of unlabeled images. During later tasks
//! the frozen generators turn every replayed exemplar into several diverse
//! feature-level counterparts.

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod losses;
pub mod memory;
pub mod nets;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
