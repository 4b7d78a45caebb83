//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and returns the gradient of a scalar with
//! respect to every node that requires one.

use std::collections::HashMap;

use super::conv::Conv2dSpec;
use super::param::Parameter;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    WeightedSum(Vec<(Var, T)>),
    Relu(Var),
    Conv2d { x: Var, w: Var, spec: Conv2dSpec },
    Linear { x: Var, w: Var, b: Option<Var> },
    GlobalAvgPool(Var),
    ConcatChannels(Var, Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Gram { x: Var, scale: T },
    RowL2Dist(Var, Var),
    RowCosine(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Mean(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    no_grad: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn row_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [n, f] => Ok((*n, *f)),
        _ => Err(Error::shape(format!("expected a [N, F] matrix, got {shape:?}"))),
    }
}

fn nchw(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        _ => Err(Error::shape(format!("expected an [N, C, H, W] map, got {shape:?}"))),
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            no_grad: false,
        }
    }

    /// A tape on which nothing requires a gradient; used for evaluation and
    /// for frozen modules whose outputs enter other graphs as constants.
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// A leaf that receives a gradient (unless the tape is `no_grad`).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = !self.no_grad;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a parameter on the tape. Frozen parameters become constants.
    /// Repeated uses of the same parameter share one node.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(p.name()) {
            return v;
        }
        let v = if p.is_frozen() {
            self.constant(p.value().clone())
        } else {
            self.variable(p.value().clone())
        };
        self.params.insert(p.name().to_string(), v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let src = self.value(a);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&x| x * c).collect(),
        };
        self.push(t, Op::Scale(a, c), &[a])
    }

    /// `Σ cᵢ·xᵢ` over equally-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::shape("weighted_sum of zero terms"))?;
        let shape = self.value(first).shape().to_vec();
        let mut data = vec![T::zero(); self.value(first).len()];
        for &(v, c) in terms {
            self.same_shape(first, v, "weighted_sum")?;
            for (acc, &x) in data.iter_mut().zip(self.value(v).data()) {
                *acc += c * x;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::WeightedSum(terms.to_vec()), &inputs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        };
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let spec = Conv2dSpec::from_shapes(self.value(x).shape(), self.value(w).shape(), stride, padding)?;
        let out = spec.forward(self.value(x).data(), self.value(w).data());
        let t = Tensor::new(spec.output_shape(), out)?;
        Ok(self.push(t, Op::Conv2d { x, w, spec }, &[x, w]))
    }

    /// `x·wᵀ + b` for `x: [N, F]`, `w: [K, F]`, `b: [K]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = row_dims(self.value(x).shape())?;
        let (k, fw) = row_dims(self.value(w).shape())?;
        if f != fw {
            return Err(Error::shape(format!("linear: input width {f}, weight width {fw}")));
        }
        let mut out = vec![T::zero(); n * k];
        T::gemm(n, f, k, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [k] {
                return Err(Error::shape(format!("linear: bias {:?} for {k} outputs", bias.shape())));
            }
            for row in out.chunks_mut(k) {
                for (y, &bb) in row.iter_mut().zip(bias.data()) {
                    *y += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::Linear { x, w, b }, &inputs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x).shape())?;
        let hw = T::from_f64((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / hw)
            .collect();
        Ok(self.push(Tensor::new(vec![n, c], data)?, Op::GlobalAvgPool(x), &[x]))
    }

    /// Concatenates two maps along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = nchw(self.value(a).shape())?;
        let (nb, cb, hb, wb) = nchw(self.value(b).shape())?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat_channels: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (pa + pb));
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * pa..(i + 1) * pa]);
            data.extend_from_slice(&self.value(b).data()[i * pb..(i + 1) * pb]);
        }
        Ok(self.push(Tensor::new(vec![n, ca + cb, h, w], data)?, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Rows `rows[i]` of the leading axis, in the given order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = t.shape()[0];
        if rows.is_empty() {
            return Err(Error::shape("select_rows needs at least one row"));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {r} of {n}")));
        }
        let per = t.len() / n;
        let mut data = Vec::with_capacity(rows.len() * per);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * per..(r + 1) * per]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        Ok(self.push(Tensor::new(shape, data)?, Op::SelectRows(a, rows.to_vec()), &[a]))
    }

    /// Concatenates along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows needs at least one input"))?;
        let item = self.value(*first).shape()[1..].to_vec();
        let mut n = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != item[..] {
                return Err(Error::shape(format!("concat_rows: {:?} vs item {item:?}", t.shape())));
            }
            n += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&item);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Per-sample channel Gram matrices `[N, C, C]` of an `[N, C, H, W]` map.
    /// With `normalize` every entry is divided by `H·W`.
    pub fn gram(&mut self, x: Var, normalize: bool) -> Result<Var> {
        let (n, c, h, w) = nchw(self.value(x).shape())?;
        let hw = h * w;
        let scale = if normalize { T::one() / T::from_f64(hw as f64) } else { T::one() };
        let mut out = vec![T::zero(); n * c * c];
        for (i, g) in out.chunks_mut(c * c).enumerate() {
            let r = &self.value(x).data()[i * c * hw..(i + 1) * c * hw];
            T::gemm(c, hw, c, r, false, r, true, g, false);
            g.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(self.push(Tensor::new(vec![n, c, c], out)?, Op::Gram { x, scale }, &[x]))
    }

    /// Row-wise Euclidean distance `‖aₙ − bₙ‖₂`, shape `[N]`.
    pub fn row_l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_l2_distance")?;
        let (n, f) = row_dims(self.value(a).shape())?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = (0..n)
            .map(|i| {
                da[i * f..(i + 1) * f]
                    .iter()
                    .zip(&db[i * f..(i + 1) * f])
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<T>()
                    .sqrt()
            })
            .collect();
        Ok(self.push(Tensor::new(vec![n], data)?, Op::RowL2Dist(a, b), &[a, b]))
    }

    /// Row-wise cosine similarity, shape `[N]`. Zero-norm rows are rejected.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_cosine")?;
        let (n, f) = row_dims(self.value(a).shape())?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let (ra, rb) = (&da[i * f..(i + 1) * f], &db[i * f..(i + 1) * f]);
            let (na, nb) = (dot(ra, ra).sqrt(), dot(rb, rb).sqrt());
            if na == T::zero() || nb == T::zero() {
                return Err(Error::Degenerate(format!("zero-norm row {i} in cosine similarity")));
            }
            data.push(dot(ra, rb) / (na * nb));
        }
        Ok(self.push(Tensor::new(vec![n], data)?, Op::RowCosine(a, b), &[a, b]))
    }

    /// Per-sample `−log softmax(logits)[label]`, shape `[N]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = row_dims(self.value(logits).shape())?;
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits).data();
        let data = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = &z[i * k..(i + 1) * k];
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                lse - row[l]
            })
            .collect();
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
        };
        Ok(self.push(Tensor::new(vec![n], data)?, op, &[logits]))
    }

    /// Batch-mean softmax cross-entropy.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let per = self.cross_entropy(logits, labels)?;
        Ok(self.mean(per))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let m = src.data().iter().copied().sum::<T>() / T::from_f64(src.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite(format!("loss value {:?}", lv.item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|data| Tensor { shape: node.value.shape().to_vec(), data }))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(&gi, &x)| gi * x).collect());
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *c).collect());
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if self.wants(v) {
                        self.accumulate(grads, v, g.iter().map(|&x| x * c).collect());
                    }
                }
            }
            Op::SelectRows(a, rows) => {
                if self.wants(*a) {
                    let src = self.value(*a);
                    let per = src.len() / src.shape()[0];
                    let mut d = vec![T::zero(); src.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        d[r * per..(r + 1) * per]
                            .iter_mut()
                            .zip(&g[i * per..(i + 1) * per])
                            .for_each(|(x, &y)| *x += y);
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        self.accumulate(grads, p, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Conv2d { x, w, spec } => {
                if self.wants(*x) {
                    let dx = spec.backward_input(self.value(*w).data(), g);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let dw = spec.backward_kernel(self.value(*x).data(), g);
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, f) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let k = self.value(*w).shape()[0];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    T::gemm(n, k, f, g, false, self.value(*w).data(), false, &mut dx, false);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); k * f];
                    T::gemm(k, n, f, g, true, self.value(*x).data(), false, &mut dw, false);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); k];
                        for row in g.chunks(k) {
                            db.iter_mut().zip(row).for_each(|(a, &r)| *a += r);
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x).shape();
                let hw = s[2] * s[3];
                let inv = T::one() / T::from_f64(hw as f64);
                let mut d = Vec::with_capacity(self.value(*x).len());
                for &gi in g {
                    d.extend(std::iter::repeat_n(gi * inv, hw));
                }
                self.accumulate(grads, *x, d);
            }
            Op::ConcatChannels(a, b) => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let n = sa[0];
                let pa = sa[1] * sa[2] * sa[3];
                let pb = sb[1] * sb[2] * sb[3];
                if self.wants(*a) {
                    let d = (0..n).flat_map(|i| g[i * (pa + pb)..i * (pa + pb) + pa].iter().copied()).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = (0..n)
                        .flat_map(|i| g[i * (pa + pb) + pa..(i + 1) * (pa + pb)].iter().copied())
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Gram { x, scale } => {
                let s = self.value(*x).shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let xv = self.value(*x).data();
                let mut d = vec![T::zero(); n * c * hw];
                for i in 0..n {
                    let gi = &g[i * c * c..(i + 1) * c * c];
                    // dR = (G + Gᵀ)·R·scale
                    let mut sym = vec![T::zero(); c * c];
                    for p in 0..c {
                        for q in 0..c {
                            sym[p * c + q] = (gi[p * c + q] + gi[q * c + p]) * *scale;
                        }
                    }
                    T::gemm(
                        c,
                        c,
                        hw,
                        &sym,
                        false,
                        &xv[i * c * hw..(i + 1) * c * hw],
                        false,
                        &mut d[i * c * hw..(i + 1) * c * hw],
                        false,
                    );
                }
                self.accumulate(grads, *x, d);
            }
            Op::RowL2Dist(a, b) => {
                let f = self.value(*a).shape()[1];
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let dist = node.value.data();
                let mut ga = vec![T::zero(); da.len()];
                for (r, (&gi, &di)) in g.iter().zip(dist).enumerate() {
                    // subgradient 0 at coincident rows
                    if di == T::zero() {
                        continue;
                    }
                    for j in r * f..(r + 1) * f {
                        ga[j] = gi * (da[j] - db[j]) / di;
                    }
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, ga.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowCosine(a, b) => {
                let f = self.value(*a).shape()[1];
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let cos = node.value.data();
                let mut ga = vec![T::zero(); da.len()];
                let mut gb = vec![T::zero(); db.len()];
                for r in 0..g.len() {
                    let (ra, rb) = (&da[r * f..(r + 1) * f], &db[r * f..(r + 1) * f]);
                    let (na2, nb2) = (dot(ra, ra), dot(rb, rb));
                    let inv = T::one() / (na2.sqrt() * nb2.sqrt());
                    for j in 0..f {
                        ga[r * f + j] = g[r] * (rb[j] * inv - cos[r] * ra[j] / na2);
                        gb[r * f + j] = g[r] * (ra[j] * inv - cos[r] * rb[j] / nb2);
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::CrossEntropy { logits, labels } => {
                let k = self.value(*logits).shape()[1];
                let z = self.value(*logits).data();
                let mut d = vec![T::zero(); z.len()];
                for (r, &l) in labels.iter().enumerate() {
                    let row = &z[r * k..(r + 1) * k];
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let denom: T = row.iter().map(|&v| (v - m).exp()).sum();
                    for j in 0..k {
                        let p = (row[j] - m).exp() / denom;
                        let onehot = if j == l { T::one() } else { T::zero() };
                        d[r * k + j] = g[r] * (p - onehot);
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let v = g[0] / T::from_f64(n as f64);
                self.accumulate(grads, *a, vec![v; n]);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter placed on the tape by name.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|&v| self.get(v))
    }
}
