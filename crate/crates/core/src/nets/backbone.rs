use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_output_size, he_uniform_tensor, Parameter, Scalar, Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub image_size: usize,
    /// Output channels of each 3×3 conv stage. The first stage keeps the
    /// spatial size, every later stage halves it.
    pub widths: Vec<usize>,
    /// Number of stages in `f1`; generators operate on its output.
    pub plug_point: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            image_size: 16,
            widths: vec![16, 32, 64],
            plug_point: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("model.widths", "needs at least one positive stage width"));
        }
        if self.plug_point == 0 || self.plug_point >= self.widths.len() {
            return Err(Error::config(
                "model.plug_point",
                format!("must lie in 1..{} so that f1 and f2 are both non-empty", self.widths.len()),
            ));
        }
        if self.in_channels == 0 || self.image_size == 0 {
            return Err(Error::config("model", "input channels and image size must be positive"));
        }
        self.spatial_after(self.widths.len())?;
        Ok(())
    }

    fn stride(stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            2
        }
    }

    fn spatial_after(&self, stages: usize) -> Result<usize> {
        (0..stages).try_fold(self.image_size, |s, i| conv2d_output_size(s, 3, Self::stride(i), 1))
    }

    /// `(C, H, W)` of the map at the plug point.
    pub fn f1_shape(&self) -> (usize, usize, usize) {
        let s = self.spatial_after(self.plug_point).expect("validated");
        (self.widths[self.plug_point - 1], s, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBackbone<T> {
    cfg: BackboneConfig,
    stages: Vec<Parameter<T>>,
}

impl<T: Scalar> SplitBackbone<T> {
    pub fn new<R: Rng + ?Sized>(cfg: BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        let mut c_in = cfg.in_channels;
        for (i, &c_out) in cfg.widths.iter().enumerate() {
            let w = he_uniform_tensor(rng, &[c_out, c_in, 3, 3], c_in * 9);
            stages.push(Parameter::new(format!("backbone.stage{i}.weight"), w));
            c_in = c_out;
        }
        Ok(Self { cfg, stages })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn f1_shape(&self) -> (usize, usize, usize) {
        self.cfg.f1_shape()
    }

    pub fn feature_dim(&self) -> usize {
        *self.cfg.widths.last().expect("validated")
    }

    fn stage(&self, tape: &mut Tape<T>, i: usize, x: Var) -> Result<Var> {
        let w = tape.param(&self.stages[i]);
        let y = tape.conv2d(x, w, BackboneConfig::stride(i), 1)?;
        Ok(tape.relu(y))
    }

    /// `h = f1(x)` for an `[N, in_channels, S, S]` batch.
    pub fn forward_f1(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        let want = [self.cfg.in_channels, self.cfg.image_size, self.cfg.image_size];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::shape(format!("backbone input {s:?}, expected [N, {want:?}]")));
        }
        (0..self.cfg.plug_point).try_fold(x, |h, i| self.stage(tape, i, h))
    }

    /// `f2(h)`: the remaining stages followed by global average pooling.
    pub fn forward_f2(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let s = tape.value(h).shape();
        let (c, hh, ww) = self.f1_shape();
        if s.len() != 4 || s[1..] != [c, hh, ww] {
            return Err(Error::shape(format!("plug-point map {s:?}, expected [N, {c}, {hh}, {ww}]")));
        }
        let y = (self.cfg.plug_point..self.stages.len()).try_fold(h, |h, i| self.stage(tape, i, h))?;
        tape.global_avg_pool(y)
    }

    /// `f(x)` evaluated as one pass over all stages, without the split.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = (0..self.stages.len()).try_fold(x, |h, i| self.stage(tape, i, h))?;
        tape.global_avg_pool(y)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.stages.iter().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.stages.iter_mut().collect()
    }
}
