//! Task-boundary checkpoints of an [`IncrementalLearner`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learner::{IncrementalLearner, Phase, Real};
use super::{RunMetrics, TrainConfig};
use crate::data::{TaskStream, UnlabeledPool};
use crate::error::{Error, Result};
use crate::memory::{ExemplarMemory, MemoryManifest};
use crate::nets::{BackboneConfig, FeatureGenerator, GeneratorBank, Network, SplitBackbone};
use crate::tensor::{Checkpoint, Parameter, Tensor};

/// Name of the byte record holding everything that is not a tensor.
pub const LEARNER_STATE_RECORD: &str = "meta.state";

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(r: &ChaCha8Rng) -> Self {
        Self {
            seed: r.get_seed(),
            stream: r.get_stream(),
            word_pos: r.get_word_pos(),
        }
    }

    fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerState {
    next_task: usize,
    backbone: BackboneConfig,
    train: TrainConfig,
    head_rows: Vec<usize>,
    /// `(class, task it was created in, depth)`.
    generators: Vec<(usize, usize, usize)>,
    has_old: bool,
    memory: MemoryManifest,
    rngs: Vec<RngState>,
    metrics: RunMetrics,
}

fn push_params<'p>(ck: &mut Checkpoint, prefix: &str, params: impl IntoIterator<Item = &'p Parameter<Real>>) -> Result<()> {
    for p in params {
        ck.push_tensor(&format!("{prefix}/{}", p.name()), p.value())?;
    }
    Ok(())
}

fn load_params<'p>(ck: &Checkpoint, prefix: &str, params: impl IntoIterator<Item = &'p mut Parameter<Real>>) -> Result<()> {
    for p in params {
        let t: Tensor<Real> = ck.tensor(&format!("{prefix}/{}", p.name()))?;
        if t.shape() != p.value().shape() {
            return Err(Error::Format(format!(
                "record {prefix}/{} has shape {:?}, expected {:?}",
                p.name(),
                t.shape(),
                p.value().shape()
            )));
        }
        *p.value_mut() = t;
    }
    Ok(())
}

impl<'a> IncrementalLearner<'a> {
    /// Serialises the full training state. Only valid between tasks.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        if !matches!(self.phase, Phase::AwaitingTask | Phase::Finished) {
            return Err(Error::Protocol(format!(
                "checkpoints are taken between tasks, not in phase {:?}",
                self.phase
            )));
        }
        let mut ck = Checkpoint::new();
        push_params(&mut ck, "net", self.net.params())?;
        if let Some(old) = &self.old {
            push_params(&mut ck, "old", old.params())?;
        }
        push_params(&mut ck, "bank", self.bank.params())?;
        let state = LearnerState {
            next_task: self.task,
            backbone: self.net.backbone.config().clone(),
            train: self.cfg.clone(),
            head_rows: self.net.head.task_rows().to_vec(),
            generators: self
                .bank
                .classes()
                .map(|c| {
                    let g = self.bank.get(c).expect("listed class");
                    (c, self.bank.created_at(c).unwrap_or(0), g.depth())
                })
                .collect(),
            has_old: self.old.is_some(),
            memory: self.memory.manifest(),
            rngs: self.rngs.all().iter().map(|r| RngState::capture(r)).collect(),
            metrics: self.metrics.clone(),
        };
        ck.push_bytes(LEARNER_STATE_RECORD, serde_json::to_vec(&state)?)?;
        Ok(ck)
    }

    /// Rebuilds a learner from [`to_checkpoint`](Self::to_checkpoint) output.
    /// The stream and pool must be the ones the checkpoint was taken on.
    pub fn from_checkpoint(ck: &Checkpoint, stream: &'a TaskStream, pool: &'a UnlabeledPool) -> Result<Self> {
        let state: LearnerState = serde_json::from_slice(ck.bytes(LEARNER_STATE_RECORD)?)
            .map_err(|e| Error::Format(format!("learner state: {e}")))?;
        if state.next_task > stream.num_tasks() {
            return Err(Error::Format("checkpoint is ahead of the task stream".into()));
        }
        if state.rngs.len() != 6 {
            return Err(Error::Format("checkpoint has the wrong number of RNG streams".into()));
        }
        let budget = state.memory.budget;
        let mut learner = IncrementalLearner::new(stream, pool, state.backbone.clone(), budget, state.train.clone())?;

        let feature_dim = learner.net.head.feature_dim();
        let k: usize = state.head_rows.iter().sum();
        let head = if k > 0 {
            let w: Tensor<Real> = ck.tensor("net/head.weight")?;
            if w.shape() != [k, feature_dim] {
                return Err(Error::Format("head weight does not match its task rows".into()));
            }
            Some(Parameter::new("head.weight", w))
        } else {
            None
        };
        let mut net = Network::<Real> {
            backbone: learner.net.backbone.clone(),
            head: learner.net.head.clone(),
        };
        load_params(ck, "net", net.backbone.params_mut())?;
        if let Some(w) = head {
            net.head.restore(w, state.head_rows.clone())?;
        }
        learner.net = net;

        learner.old = if state.has_old {
            let mut old: SplitBackbone<Real> = learner.net.backbone.clone();
            load_params(ck, "old", old.params_mut())?;
            old.params_mut().into_iter().for_each(|p| p.set_frozen(true));
            Some(old)
        } else {
            None
        };

        let (channels, _, _) = learner.net.backbone.f1_shape();
        let mut bank = GeneratorBank::new();
        for &(c, created, depth) in &state.generators {
            let mut g = FeatureGenerator::<Real>::new(c, channels, depth, state.train.seed);
            load_params(ck, "bank", g.params_mut())?;
            g.set_frozen(true);
            bank.insert(g, created);
        }
        learner.bank = bank;

        learner.memory = ExemplarMemory::from_manifest(&state.memory, |id| stream.train_sample(id).cloned())?;
        for (slot, saved) in learner.rngs.all_mut().into_iter().zip(&state.rngs) {
            *slot = saved.restore();
        }
        learner.task = state.next_task;
        learner.phase = if state.next_task == stream.num_tasks() {
            Phase::Finished
        } else {
            Phase::AwaitingTask
        };
        learner.metrics = state.metrics;
        Ok(learner)
    }
}

