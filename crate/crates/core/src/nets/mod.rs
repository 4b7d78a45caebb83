//! Split backbone `f = f2 ∘ f1`, the growable classifier, and the per-class
//! feature generators plugged between `f1` and `f2`.

mod backbone;
mod classifier;
mod generator;

pub use backbone::{BackboneConfig, SplitBackbone};
pub use classifier::GrowableClassifier;
pub use generator::{FeatureGenerator, GeneratorBank, DEFAULT_GENERATOR_DEPTH};

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Parameter, Scalar, Tape, Tensor, Var};

/// Backbone plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub backbone: SplitBackbone<T>,
    pub head: GrowableClassifier<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new<R: Rng + ?Sized>(cfg: BackboneConfig, rng: &mut R) -> Result<Self> {
        let backbone = SplitBackbone::new(cfg, rng)?;
        let head = GrowableClassifier::new(backbone.feature_dim());
        Ok(Self { backbone, head })
    }

    /// `Φ(f2(h))` for a feature map taken at the plug point.
    pub fn logits_from_map(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let feats = self.backbone.forward_f2(tape, h)?;
        self.head.forward(tape, feats)
    }

    pub fn logits(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.backbone.forward_f1(tape, x)?;
        self.logits_from_map(tape, h)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut ps = self.backbone.params();
        ps.extend(self.head.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut ps = self.backbone.params_mut();
        ps.extend(self.head.params_mut());
        ps
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params_mut().into_iter().for_each(|p| p.set_frozen(frozen));
    }

    /// Predicted class per input (argmax, ties toward the lowest index).
    pub fn predict(&self, images: Tensor<T>) -> Result<Vec<usize>> {
        let mut tape = Tape::no_grad();
        let x = tape.constant(images);
        let z = self.logits(&mut tape, x)?;
        let logits = tape.value(z);
        let k = logits.shape()[1];
        Ok(logits.data().chunks(k).map(argmax).collect())
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
