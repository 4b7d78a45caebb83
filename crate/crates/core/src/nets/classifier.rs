use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{he_uniform, Parameter, Scalar, Tape, Tensor, Var};

/// Bias-free linear classifier whose output grows by whole tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowableClassifier<T> {
    feature_dim: usize,
    weight: Option<Parameter<T>>,
    /// Number of rows added by each `grow` call.
    task_rows: Vec<usize>,
}

pub(crate) const HEAD_WEIGHT: &str = "head.weight";

impl<T: Scalar> GrowableClassifier<T> {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            weight: None,
            task_rows: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.task_rows.iter().sum()
    }

    pub fn task_rows(&self) -> &[usize] {
        &self.task_rows
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Appends `new_classes` freshly initialised rows; existing rows are kept
    /// bit for bit, as is their momentum state.
    pub fn grow<R: Rng + ?Sized>(&mut self, new_classes: usize, rng: &mut R) -> Result<()> {
        if new_classes == 0 {
            return Err(Error::contract("grow_head needs at least one new class"));
        }
        let f = self.feature_dim;
        let fresh: Vec<T> = he_uniform(rng, new_classes * f, f);
        let k = self.num_classes() + new_classes;
        let next = match self.weight.take() {
            None => Parameter::new(HEAD_WEIGHT, Tensor::new(vec![k, f], fresh)?),
            Some(old) => {
                let mut data = old.value().data().to_vec();
                data.extend_from_slice(&fresh);
                let mut p = Parameter::new(HEAD_WEIGHT, Tensor::new(vec![k, f], data)?);
                if let Some(v) = old.velocity() {
                    let mut vd = v.data().to_vec();
                    vd.resize(k * f, T::zero());
                    p.set_velocity(Some(Tensor::new(vec![k, f], vd)?));
                }
                p.set_frozen(old.is_frozen());
                p
            }
        };
        self.weight = Some(next);
        self.task_rows.push(new_classes);
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape<T>, feats: Var) -> Result<Var> {
        let w = self
            .weight
            .as_ref()
            .ok_or_else(|| Error::contract("classifier has no classes yet"))?;
        let w = tape.param(w);
        tape.linear(feats, w, None)
    }

    pub fn weight(&self) -> Option<&Parameter<T>> {
        self.weight.as_ref()
    }

    pub(crate) fn restore(&mut self, weight: Parameter<T>, task_rows: Vec<usize>) -> Result<()> {
        let k: usize = task_rows.iter().sum();
        if weight.value().shape() != [k, self.feature_dim] {
            return Err(Error::Format(format!(
                "head weight {:?} does not match {k} classes × {}",
                weight.value().shape(),
                self.feature_dim
            )));
        }
        self.weight = Some(weight);
        self.task_rows = task_rows;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.weight.iter().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.weight.iter_mut().collect()
    }
}
