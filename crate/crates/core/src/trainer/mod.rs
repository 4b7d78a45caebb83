//! The two-phase incremental loop, baseline strategies and evaluation.

mod config;
mod learner;
mod metrics;
mod ops;
mod state;

pub use config::{Strategy, TrainConfig};
pub use learner::{run_incremental, IncrementalLearner, Phase};
pub use metrics::{average, RunMetrics};
pub use ops::{
    evaluate, features_detached, f1_detached, generate_for_batch, mix_images, mixup_baseline, replay_generate,
    EVAL_CHUNK,
};
pub use state::{RngState, LEARNER_STATE_RECORD};
