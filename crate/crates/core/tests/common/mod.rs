//! Independent oracles shared by the integration and acceptance suites.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use diverse_replay::data::{make_synthetic_stream, SyntheticSpec, TaskStream, UnlabeledPool};
use diverse_replay::nets::BackboneConfig;
use diverse_replay::tensor::{Tape, Var};
use diverse_replay::trainer::{Strategy, TrainConfig};
use diverse_replay::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct seven-loop convolution with zero padding.
pub fn conv2d_direct(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let xv = x.data();
    let wv = w.data();
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xv[((b * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * wv[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// `x·wᵀ + b` by triple loop.
pub fn linear_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[0];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut acc = b[j];
            for p in 0..f {
                acc += x.data()[i * f + p] * w.data()[j * f + p];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

/// Gram matrices by explicit double loop over channel pairs.
pub fn gram_direct(h: &Tensor<f64>, normalize: bool) -> Vec<f64> {
    let (n, c, hh, ww) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let hw = hh * ww;
    let div = if normalize { hw as f64 } else { 1.0 };
    let mut out = vec![0.0; n * c * c];
    for b in 0..n {
        for i in 0..c {
            for j in 0..c {
                let mut acc = 0.0;
                for p in 0..hw {
                    acc += h.data()[(b * c + i) * hw + p] * h.data()[(b * c + j) * hw + p];
                }
                out[(b * c + i) * c + j] = acc / div;
            }
        }
    }
    out
}

pub fn gap_direct(h: &Tensor<f64>) -> Vec<f64> {
    let (n, c, hh, ww) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..hh {
                for x in 0..ww {
                    acc += h.data()[((b * c + ch) * hh + y) * ww + x];
                }
            }
            out[b * c + ch] = acc / (hh * ww) as f64;
        }
    }
    out
}

/// Mean cross-entropy through an explicit log-sum-exp.
pub fn cross_entropy_lse(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

/// Central-difference gradient check. `build` maps the input variables to a
/// scalar loss; returns the worst relative error over all input entries.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    const EPS: f64 = 1e-5;
    let eval = |ts: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += EPS;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Greedy herding by brute force: at each step try every unused index and
/// keep the one whose running mean is closest to the class mean.
pub fn herding_oracle(features: &[Vec<f64>], quota: usize) -> Vec<usize> {
    let n = features.len();
    let d = features.first().map_or(0, |f| f.len());
    let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..quota.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let k = chosen.len() + 1;
            let dist: f64 = (0..d)
                .map(|j| {
                    let s = chosen.iter().map(|&c| features[c][j]).sum::<f64>() + features[i][j];
                    (mean[j] - s / k as f64).powi(2)
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Four classes split `[2, 1, 1]` on 8×8 images; small enough for many
/// full runs per test.
pub fn tiny_stream(seed: u64) -> (TaskStream, UnlabeledPool) {
    let spec = SyntheticSpec {
        classes: 4,
        train_per_class: 24,
        test_per_class: 10,
        image_size: 8,
        frequencies: vec![1.5],
        pool_size: 64,
        ..SyntheticSpec::default()
    };
    let (stream, pool, _) = make_synthetic_stream(&spec, 2, seed).unwrap();
    (stream, pool)
}

pub fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        in_channels: 1,
        image_size: 8,
        widths: vec![4, 6, 8],
        plug_point: 2,
    }
}

pub fn tiny_train(strategy: Strategy, seed: u64) -> TrainConfig {
    TrainConfig {
        strategy,
        task_epochs: 3,
        gen_epochs: 2,
        batch_size: 8,
        exemplar_batch: 4,
        gen_batch: 4,
        seed,
        ..TrainConfig::default()
    }
}

pub mod grad_cases;
