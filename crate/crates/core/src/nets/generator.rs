use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{he_uniform_tensor, Parameter, Scalar, Tape, Tensor, Var};

/// Residual blocks per generator unless configured otherwise.
pub const DEFAULT_GENERATOR_DEPTH: usize = 2;

/// RNG stream offset for generator initialisation; stream `BASE + class`.
const GENERATOR_STREAM_BASE: u64 = 1 << 32;

/// `G_c`: concatenates the semantic map and the style map along channels
/// (semantic first), runs `d` residual blocks on the `2C` channels and fuses
/// back to `C` channels with a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGenerator<T> {
    class_id: usize,
    channels: usize,
    blocks: Vec<[Parameter<T>; 2]>,
    fusion: Parameter<T>,
}

impl<T: Scalar> FeatureGenerator<T> {
    /// Seeded construction. The generator starts as a pass-through of the
    /// semantic map: the second conv of every residual block is zero and the
    /// fusion selects the first `C` channels. Only the first conv of each
    /// block is drawn at random.
    pub fn new(class_id: usize, channels: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GENERATOR_STREAM_BASE + class_id as u64);
        let wide = 2 * channels;
        let blocks = (0..depth)
            .map(|b| {
                let name = |j: usize| format!("gen{class_id}.block{b}.conv{j}");
                [
                    Parameter::new(name(1), he_uniform_tensor(&mut rng, &[wide, wide, 3, 3], wide * 9)),
                    Parameter::new(name(2), Tensor::zeros(&[wide, wide, 3, 3])),
                ]
            })
            .collect();
        let mut select = Tensor::zeros(&[channels, wide, 1, 1]);
        for c in 0..channels {
            select.data_mut()[c * wide + c] = T::one();
        }
        let fusion = Parameter::new(format!("gen{class_id}.fusion"), select);
        Self {
            class_id,
            channels,
            blocks,
            fusion,
        }
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// `h_mix = G_c(h_sem, h_style)`.
    pub fn generate(&self, tape: &mut Tape<T>, h_sem: Var, h_style: Var) -> Result<Var> {
        let (a, b) = (tape.value(h_sem).shape(), tape.value(h_style).shape());
        if a != b || a.len() != 4 || a[1] != self.channels {
            return Err(Error::shape(format!(
                "generator for {} channels got maps {a:?} and {b:?}",
                self.channels
            )));
        }
        let mut x = tape.concat_channels(h_sem, h_style)?;
        for [w1, w2] in &self.blocks {
            let (w1, w2) = (tape.param(w1), tape.param(w2));
            let y = tape.conv2d(x, w1, 1, 1)?;
            let y = tape.relu(y);
            let y = tape.conv2d(y, w2, 1, 1)?;
            let s = tape.add(x, y)?;
            x = tape.relu(s);
        }
        let w = tape.param(&self.fusion);
        tape.conv2d(x, w, 1, 0)
    }

    /// Generation outside any training graph.
    pub fn generate_detached(&self, h_sem: &Tensor<T>, h_style: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let (a, b) = (tape.constant(h_sem.clone()), tape.constant(h_style.clone()));
        let out = self.generate(&mut tape, a, b)?;
        Ok(tape.value(out).clone())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut ps: Vec<&Parameter<T>> = self.blocks.iter().flat_map(|b| b.iter()).collect();
        ps.push(&self.fusion);
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut ps: Vec<&mut Parameter<T>> = self.blocks.iter_mut().flat_map(|b| b.iter_mut()).collect();
        ps.push(&mut self.fusion);
        ps
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.params_mut().into_iter().for_each(|p| p.set_frozen(frozen));
    }
}

/// One generator per class that has exemplars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorBank<T> {
    generators: BTreeMap<usize, FeatureGenerator<T>>,
    created_at: BTreeMap<usize, usize>,
}

impl<T: Scalar> GeneratorBank<T> {
    pub fn new() -> Self {
        Self {
            generators: BTreeMap::new(),
            created_at: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.generators.contains_key(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.generators.keys().copied()
    }

    pub fn created_at(&self, class: usize) -> Option<usize> {
        self.created_at.get(&class).copied()
    }

    /// Creates one seeded generator per class. Initial weights depend only on
    /// `(seed, class)`, not on creation order.
    pub fn create_generators(
        &mut self,
        classes: &[usize],
        channels: usize,
        depth: usize,
        task_index: usize,
        seed: u64,
    ) -> Result<()> {
        for (i, c) in classes.iter().enumerate() {
            if self.contains(*c) || classes[..i].contains(c) {
                return Err(Error::contract(format!("generator for class {c} already exists")));
            }
        }
        for &c in classes {
            self.generators.insert(c, FeatureGenerator::new(c, channels, depth, seed));
            self.created_at.insert(c, task_index);
        }
        Ok(())
    }

    pub fn get(&self, class: usize) -> Result<&FeatureGenerator<T>> {
        self.generators
            .get(&class)
            .ok_or_else(|| Error::Lookup(format!("no generator for class {class}")))
    }

    pub fn get_mut(&mut self, class: usize) -> Result<&mut FeatureGenerator<T>> {
        self.generators
            .get_mut(&class)
            .ok_or_else(|| Error::Lookup(format!("no generator for class {class}")))
    }

    pub(crate) fn insert(&mut self, generator: FeatureGenerator<T>, task_index: usize) {
        self.created_at.insert(generator.class_id, task_index);
        self.generators.insert(generator.class_id, generator);
    }

    pub fn freeze_all(&mut self) {
        self.generators.values_mut().for_each(|g| g.set_frozen(true));
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.generators.values().flat_map(|g| g.params()).collect()
    }
}
