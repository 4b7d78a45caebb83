use super::{Gradients, Scalar, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    velocity: Option<Tensor<T>>,
    frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            velocity: None,
            frozen: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn velocity(&self) -> Option<&Tensor<T>> {
        self.velocity.as_ref()
    }

    pub fn set_velocity(&mut self, v: Option<Tensor<T>>) {
        self.velocity = v;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen parameters enter tapes as constants and never receive gradients.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        if frozen {
            self.grad = None;
        }
    }

    /// Adds this parameter's gradient from `grads`, if it was on the tape.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        if self.frozen {
            return;
        }
        if let Some(g) = grads.param(&self.name) {
            match &mut self.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, &b)| *a += b),
                None => self.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Sum of absolute gradient entries (0 when no gradient is held).
    pub fn grad_abs_sum(&self) -> f64 {
        self.grad
            .as_ref()
            .map(|g| g.data().iter().map(|v| v.as_f64().abs()).sum())
            .unwrap_or(0.0)
    }
}

/// Classical momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`, then clears grads.
/// Frozen parameters are skipped. A trainable parameter without a gradient
/// is a contract error and leaves every parameter untouched.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Parameter<T>], lr: f64, momentum: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.frozen && p.grad.is_none()) {
        return Err(Error::contract(format!("parameter `{}` has no gradient", p.name)));
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for p in params.iter_mut().filter(|p| !p.frozen) {
        let g = p.grad.take().expect("checked above");
        let v = match p.velocity.take() {
            Some(mut v) => {
                v.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(vi, &gi)| *vi = mu * *vi + gi);
                v
            }
            None => g,
        };
        p.value
            .data_mut()
            .iter_mut()
            .zip(v.data())
            .for_each(|(w, &vi)| *w -= lr * vi);
        p.velocity = Some(v);
    }
    Ok(())
}

/// Rescales the gradients of trainable parameters so that their joint L2
/// norm is at most `max_norm`. Returns the norm before rescaling.
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Parameter<T>], max_norm: f64) -> f64 {
    let total = params
        .iter()
        .filter(|p| !p.frozen)
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let s = T::from_f64(max_norm / total);
        for p in params.iter_mut().filter(|p| !p.frozen) {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    total
}
