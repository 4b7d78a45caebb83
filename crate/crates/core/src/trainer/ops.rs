//! Replay-side sample producers and evaluation.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::{images_to_tensor, ImageShape, LabeledSample, UnlabeledPool};
use crate::error::{Error, Result};
use crate::exec;
use crate::nets::{GeneratorBank, Network, SplitBackbone};
use crate::tensor::{Scalar, Tape, Tensor};

/// Samples per prediction chunk during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// `f1` of a batch outside any training graph.
pub fn f1_detached<T: Scalar>(backbone: &SplitBackbone<T>, images: Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(images);
    let h = backbone.forward_f1(&mut tape, x)?;
    Ok(tape.value(h).clone())
}

/// Full backbone features outside any training graph.
pub fn features_detached<T: Scalar>(backbone: &SplitBackbone<T>, images: Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(images);
    let h = backbone.forward(&mut tape, x)?;
    Ok(tape.value(h).clone())
}

/// `n` generated feature maps for one exemplar, one per unlabeled draw.
/// Every map inherits the exemplar's label. Returns `[n, C, H, W]`, or
/// `None` when `n = 0`.
pub fn replay_generate<T: Scalar, R: Rng + ?Sized>(
    exemplar: &LabeledSample,
    shape: ImageShape,
    backbone: &SplitBackbone<T>,
    bank: &GeneratorBank<T>,
    pool: &UnlabeledPool,
    n: usize,
    rng: &mut R,
) -> Result<Option<Tensor<T>>> {
    let generator = bank.get(exemplar.label)?;
    if n == 0 {
        return Ok(None);
    }
    let drawn = pool.sample_unlabeled(n, rng)?;
    let h_u = f1_detached(backbone, images_to_tensor(shape, drawn)?)?;
    let repeated = std::iter::repeat_n(exemplar.image.as_slice(), n);
    let h_m = f1_detached(backbone, images_to_tensor(shape, repeated)?)?;
    generator.generate_detached(&h_m, &h_u).map(Some)
}

/// Generated maps for a batch of exemplars with `n` draws each, laid out
/// exemplar-major (`j·n + r`). Unlabeled indices must have length `|ex|·n`.
pub fn generate_for_batch<T: Scalar>(
    exemplars: &[&LabeledSample],
    unlabeled: &[usize],
    n: usize,
    shape: ImageShape,
    backbone: &SplitBackbone<T>,
    bank: &GeneratorBank<T>,
    pool: &UnlabeledPool,
) -> Result<Tensor<T>> {
    if unlabeled.len() != exemplars.len() * n || n == 0 {
        return Err(Error::contract("need n > 0 unlabeled draws per exemplar"));
    }
    let h_m = f1_detached(backbone, images_to_tensor(shape, exemplars.iter().map(|e| e.image.as_slice()))?)?;
    let h_u = f1_detached(backbone, images_to_tensor(shape, unlabeled.iter().map(|&i| pool.image(i)))?)?;
    let item = h_m.shape()[1..].to_vec();
    let item_len: usize = item.iter().product();
    let mut data = vec![T::zero(); exemplars.len() * n * item_len];
    let mut classes: Vec<usize> = exemplars.iter().map(|e| e.label).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let generator = bank.get(c)?;
        let members: Vec<usize> = (0..exemplars.len()).filter(|&j| exemplars[j].label == c).collect();
        let slots: Vec<usize> = members.iter().flat_map(|&j| (0..n).map(move |r| j * n + r)).collect();
        let sem = Tensor::from_items(&item, slots.iter().map(|&k| h_m.batch_item(k / n)))?;
        let sty = Tensor::from_items(&item, slots.iter().map(|&k| h_u.batch_item(k)))?;
        let mixed = generator.generate_detached(&sem, &sty)?;
        for (i, &k) in slots.iter().enumerate() {
            data[k * item_len..(k + 1) * item_len].copy_from_slice(mixed.batch_item(i));
        }
    }
    let mut dims = vec![exemplars.len() * n];
    dims.extend_from_slice(&item);
    Tensor::new(dims, data)
}

/// Pixel-level MixUp `β·x_m + (1 − β)·x_u` with a single `β` per pair.
pub fn mix_images(exemplar: &[f32], unlabeled: &[f32], beta: f32) -> Result<Vec<f32>> {
    if exemplar.len() != unlabeled.len() {
        return Err(Error::shape("mixup pair with different image sizes"));
    }
    Ok(exemplar
        .iter()
        .zip(unlabeled)
        .map(|(&a, &b)| beta * a + (1.0 - beta) * b)
        .collect())
}

/// MixUp of equal-sized batches with `β ~ Beta(α, α)` per pair. Labels stay
/// those of the exemplars. Returns the mixed images and the drawn `β`s.
pub fn mixup_baseline<R: Rng + ?Sized>(
    exemplars: &[&[f32]],
    unlabeled: &[&[f32]],
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<f32>>, Vec<f64>)> {
    if exemplars.len() != unlabeled.len() {
        return Err(Error::shape(format!(
            "{} exemplars against {} unlabeled images",
            exemplars.len(),
            unlabeled.len()
        )));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::config("train.mixup_alpha", e.to_string()))?;
    let mut mixed = Vec::with_capacity(exemplars.len());
    let mut betas = Vec::with_capacity(exemplars.len());
    for (x, u) in exemplars.iter().zip(unlabeled) {
        let b: f64 = beta.sample(rng);
        mixed.push(mix_images(x, u, b as f32)?);
        betas.push(b);
    }
    Ok((mixed, betas))
}

/// Top-1 accuracy over `samples`; prediction chunks run through [`exec`].
pub fn evaluate<T: Scalar>(net: &Network<T>, shape: ImageShape, samples: &[&LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("evaluation on an empty test set"));
    }
    let chunks: Vec<&[&LabeledSample]> = samples.chunks(EVAL_CHUNK).collect();
    let correct = exec::map_range(chunks.len(), |i| -> Result<usize> {
        let chunk = chunks[i];
        let x = images_to_tensor(shape, chunk.iter().map(|s| s.image.as_slice()))?;
        let pred = net.predict(x)?;
        Ok(pred.iter().zip(chunk).filter(|(p, s)| **p == s.label).count())
    });
    let mut total = 0;
    for c in correct {
        total += c?;
    }
    Ok(total as f64 / samples.len() as f64)
}
