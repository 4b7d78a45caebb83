//! Generator objectives (semantic, semantic-decoupling, cycle, generated-sample
//! cross-entropy) and the anti-forgetting task objective.
//!
//! Each objective exists twice: a plain scalar form used for reporting and
//! coefficient probes, and a tape form used for training. Both forms read
//! their coefficients from the same weight structs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{FeatureGenerator, Network};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Channel Gram matrix of a single `C×H×W` map.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T> {
    matrix: Tensor<T>,
    normalized: bool,
}

impl<T: Scalar> GramMatrix<T> {
    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// `W[i,j] = rᵢᵀ rⱼ` over flattened channel rows, divided by `H·W` when
/// `normalize` is set. Accepts `[C, H, W]` or a single-item `[1, C, H, W]`.
pub fn gram<T: Scalar>(h: &Tensor<T>, normalize: bool) -> Result<GramMatrix<T>> {
    let h4 = match h.shape() {
        [c, hh, ww] => h.clone().reshape(&[1, *c, *hh, *ww])?,
        [1, _, _, _] => h.clone(),
        s => return Err(Error::shape(format!("gram expects one C×H×W map, got {s:?}"))),
    };
    let c = h4.shape()[1];
    let mut tape = Tape::no_grad();
    let x = tape.constant(h4);
    let g = tape.gram(x, normalize)?;
    Ok(GramMatrix {
        matrix: tape.value(g).clone().reshape(&[c, c])?,
        normalized: normalize,
    })
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Semantic contrastive loss `‖v_ref − v_mix‖₂` (not squared).
pub fn loss_sc<T: Scalar>(v_ref: &[T], v_mix: &[T]) -> Result<f64> {
    if v_ref.len() != v_mix.len() {
        return Err(Error::shape(format!(
            "semantic vectors of length {} and {}",
            v_ref.len(),
            v_mix.len()
        )));
    }
    Ok(euclid(v_ref, v_mix))
}

/// Semantic-decoupling contrastive loss `‖W_a − W_b‖_F`.
pub fn loss_sdc<T: Scalar>(a: &GramMatrix<T>, b: &GramMatrix<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("gram matrices {0}×{0} and {1}×{1}", a.dim(), b.dim())));
    }
    if a.normalized != b.normalized {
        return Err(Error::shape("gram matrices use different normalisations"));
    }
    Ok(euclid(a.matrix.data(), b.matrix.data()))
}

/// Cycle loss `‖v_cyc − v_mix‖₂ + λ·‖W_cyc − W_m‖_F`.
pub fn loss_cycle<T: Scalar>(
    v_cyc: &[T],
    v_mix: &[T],
    w_cyc: &GramMatrix<T>,
    w_m: &GramMatrix<T>,
    lambda: f64,
) -> Result<f64> {
    Ok(loss_sc(v_cyc, v_mix)? + lambda * loss_sdc(w_cyc, w_m)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorLossWeights {
    pub lambda: f64,
    pub lambda_cyc: f64,
}

impl Default for GeneratorLossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_cyc: 1.0,
        }
    }
}

impl GeneratorLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda", self.lambda), ("lambda_cyc", self.lambda_cyc)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.generator_loss.{k}"), "must be finite and ≥ 0"));
            }
        }
        Ok(())
    }

    /// Coefficients of `(ce, sc, sdc, sc_cyc, sdc_cyc)` in the generator loss.
    pub fn coefficients(&self) -> [f64; 5] {
        [1.0, 1.0, self.lambda, self.lambda_cyc, self.lambda_cyc * self.lambda]
    }
}

/// Per-triplet components of the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorLossTerms {
    pub ce: f64,
    pub sc: f64,
    pub sdc: f64,
    pub sc_cyc: f64,
    pub sdc_cyc: f64,
}

impl GeneratorLossTerms {
    fn as_array(&self) -> [f64; 5] {
        [self.ce, self.sc, self.sdc, self.sc_cyc, self.sdc_cyc]
    }

    /// `ce + sc + λ·sdc + λ_cyc·(sc_cyc + λ·sdc_cyc)`.
    pub fn total(&self, w: &GeneratorLossWeights) -> f64 {
        self.as_array()
            .iter()
            .zip(w.coefficients())
            .map(|(t, c)| t * c)
            .sum()
    }
}

/// Mini-batch generator loss: the mean of the per-triplet totals.
pub fn loss_generator_batch(terms: &[GeneratorLossTerms], w: &GeneratorLossWeights) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(|t| t.total(w)).sum::<f64>() / terms.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskLossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for TaskLossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl TaskLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.task_loss.{k}"), "must be finite and ≥ 0"));
            }
        }
        Ok(())
    }

    /// Coefficients of `(cls, cls_memory, cls_generated, distill)`.
    pub fn coefficients(&self) -> [f64; 4] {
        [1.0, self.alpha1, self.alpha1, self.alpha2]
    }
}

/// Components of the anti-forgetting objective. With an empty memory the last
/// three are zero by convention.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskLossTerms {
    pub cls: f64,
    pub cls_memory: f64,
    pub cls_generated: f64,
    pub distill: f64,
}

impl TaskLossTerms {
    /// `cls + α₁·(cls_memory + cls_generated) + α₂·distill`.
    pub fn total(&self, w: &TaskLossWeights) -> f64 {
        [self.cls, self.cls_memory, self.cls_generated, self.distill]
            .iter()
            .zip(w.coefficients())
            .map(|(t, c)| t * c)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillReduction {
    Sum,
    #[default]
    Mean,
}

/// Cosine distillation `Σₖ (1 − cos(f_old(xₖ), f(xₖ)))`, or its mean.
pub fn loss_distill<T: Scalar>(
    feats_old: &Tensor<T>,
    feats_new: &Tensor<T>,
    reduction: DistillReduction,
) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let (a, b) = (tape.constant(feats_old.clone()), tape.constant(feats_new.clone()));
    let l = distillation(&mut tape, a, b, reduction)?;
    Ok(tape.value(l).item().as_f64())
}

// ---- tape forms ----

/// Row-wise `‖v_a − v_b‖₂` for `[N, C]` semantic vectors.
pub fn semantic_distance<T: Scalar>(tape: &mut Tape<T>, v_a: Var, v_b: Var) -> Result<Var> {
    tape.row_l2_distance(v_a, v_b)
}

/// Per-sample Frobenius distance between `[N, C, C]` Gram stacks.
pub fn gram_distance<T: Scalar>(tape: &mut Tape<T>, w_a: Var, w_b: Var) -> Result<Var> {
    let s = tape.value(w_a).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("gram stack {s:?}")));
    }
    let flat = [s[0], s[1] * s[2]];
    let a = tape.reshape(w_a, &flat)?;
    let b = tape.reshape(w_b, &flat)?;
    tape.row_l2_distance(a, b)
}

/// Cosine distillation on the tape (scalar).
pub fn distillation<T: Scalar>(tape: &mut Tape<T>, old: Var, new: Var, reduction: DistillReduction) -> Result<Var> {
    let cos = tape.row_cosine(old, new)?;
    let n = tape.value(cos).len();
    let ones = tape.constant(Tensor::full(&[n], T::one()));
    let dist = tape.sub(ones, cos)?;
    Ok(match reduction {
        DistillReduction::Sum => tape.sum(dist),
        DistillReduction::Mean => tape.mean(dist),
    })
}

/// `Σ cᵢ·termᵢ` over present terms whose coefficient is non-zero. Absent and
/// zero-weighted terms are left out of the graph entirely.
pub fn weighted_objective<T: Scalar>(tape: &mut Tape<T>, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let active: Vec<(Var, T)> = terms
        .iter()
        .filter_map(|&(v, c)| v.filter(|_| c != 0.0).map(|v| (v, T::from_f64(c))))
        .collect();
    if active.is_empty() {
        return Err(Error::contract("objective has no active terms"));
    }
    if active.len() == 1 && active[0].1 == T::one() {
        return Ok(active[0].0);
    }
    tape.weighted_sum(&active)
}

/// The anti-forgetting objective on the tape. `None` terms follow the
/// empty-memory convention and contribute nothing.
pub fn task_objective<T: Scalar>(
    tape: &mut Tape<T>,
    cls: Var,
    cls_memory: Option<Var>,
    cls_generated: Option<Var>,
    distill: Option<Var>,
    w: &TaskLossWeights,
) -> Result<Var> {
    let c = w.coefficients();
    weighted_objective(
        tape,
        &[(Some(cls), c[0]), (cls_memory, c[1]), (cls_generated, c[2]), (distill, c[3])],
    )
}

/// `h_cyc = G_c(h_mix, h_m)`: the generated map supplies semantics and the
/// exemplar map supplies the semantically-irrelevant statistics.
pub fn cycle_pass<T: Scalar>(tape: &mut Tape<T>, generator: &FeatureGenerator<T>, h_mix: Var, h_m: Var) -> Result<Var> {
    generator.generate(tape, h_mix, h_m)
}

/// Graph handles for one group of same-class triplets.
#[derive(Debug, Clone, Copy)]
pub struct TripletLossVars {
    pub h_mix: Var,
    pub ce: Var,
    pub sc: Var,
    pub sdc: Option<Var>,
    pub sc_cyc: Option<Var>,
    pub sdc_cyc: Option<Var>,
    /// Per-triplet generator loss, shape `[N]`.
    pub total: Var,
}

/// Inputs for [`generator_losses`]: `f1` maps of exemplars, unlabeled samples
/// and same-class references, all `[N, C, H, W]` and already on the tape.
#[derive(Debug, Clone, Copy)]
pub struct TripletMaps {
    pub h_m: Var,
    pub h_u: Var,
    pub h_k: Var,
}

/// Per-triplet generator losses for triplets sharing the class `labels[0]`.
///
/// `net` supplies `f2` and `Φ` for the cross-entropy on generated maps; its
/// parameters are expected to be frozen. Terms whose coefficient is zero are
/// not built (the cycle pass is skipped when `λ_cyc = 0`).
pub fn generator_losses<T: Scalar>(
    tape: &mut Tape<T>,
    generator: &FeatureGenerator<T>,
    net: &Network<T>,
    maps: TripletMaps,
    labels: &[usize],
    weights: &GeneratorLossWeights,
    gram_normalize: bool,
) -> Result<TripletLossVars> {
    let c = weights.coefficients();
    let h_mix = generator.generate(tape, maps.h_m, maps.h_u)?;
    let logits = net.logits_from_map(tape, h_mix)?;
    let ce = tape.cross_entropy(logits, labels)?;

    let v_mix = tape.global_avg_pool(h_mix)?;
    let v_k = tape.global_avg_pool(maps.h_k)?;
    let sc = semantic_distance(tape, v_k, v_mix)?;

    let sdc = if c[2] != 0.0 {
        let w_u = tape.gram(maps.h_u, gram_normalize)?;
        let w_mix = tape.gram(h_mix, gram_normalize)?;
        Some(gram_distance(tape, w_u, w_mix)?)
    } else {
        None
    };

    let (sc_cyc, sdc_cyc) = if c[3] != 0.0 {
        let h_cyc = cycle_pass(tape, generator, h_mix, maps.h_m)?;
        let v_cyc = tape.global_avg_pool(h_cyc)?;
        let sc_cyc = semantic_distance(tape, v_cyc, v_mix)?;
        let sdc_cyc = if c[4] != 0.0 {
            let w_cyc = tape.gram(h_cyc, gram_normalize)?;
            let w_m = tape.gram(maps.h_m, gram_normalize)?;
            Some(gram_distance(tape, w_cyc, w_m)?)
        } else {
            None
        };
        (Some(sc_cyc), sdc_cyc)
    } else {
        (None, None)
    };

    let total = weighted_objective(
        tape,
        &[(Some(ce), c[0]), (Some(sc), c[1]), (sdc, c[2]), (sc_cyc, c[3]), (sdc_cyc, c[4])],
    )?;
    Ok(TripletLossVars {
        h_mix,
        ce,
        sc,
        sdc,
        sc_cyc,
        sdc_cyc,
        total,
    })
}

impl TripletLossVars {
    /// Reads back per-triplet component values.
    pub fn terms<T: Scalar>(&self, tape: &Tape<T>) -> Vec<GeneratorLossTerms> {
        let get = |v: Option<Var>, i: usize| v.map(|v| tape.value(v).data()[i].as_f64()).unwrap_or(0.0);
        (0..tape.value(self.ce).len())
            .map(|i| GeneratorLossTerms {
                ce: get(Some(self.ce), i),
                sc: get(Some(self.sc), i),
                sdc: get(self.sdc, i),
                sc_cyc: get(self.sc_cyc, i),
                sdc_cyc: get(self.sdc_cyc, i),
            })
            .collect()
    }
}
