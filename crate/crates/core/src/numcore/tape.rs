//! Reverse-mode differentiation over a Wengert list.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the list in reverse. A node takes part in differentiation only when
//! one of its inputs does, so constant inputs (event frames, targets) cost
//! nothing on the way back.

use std::f64::consts::PI;

use super::kernels::{self, BnForward};
use super::tensor::{Scalar, Tensor};
use super::NumError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arctan surrogate for the spike derivative:
/// `ds/dh = alpha / (2 (1 + (pi/2 * alpha * (h - theta))^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcTanSurrogate {
    pub alpha: f64,
}

impl Default for ArcTanSurrogate {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

impl ArcTanSurrogate {
    pub fn derivative<T: Scalar>(&self, u: T) -> T {
        let alpha = T::lit(self.alpha);
        let z = T::lit(PI / 2.0) * alpha * u;
        alpha / (T::lit(2.0) * (T::one() + z * z))
    }

    /// The smooth function whose derivative is [`Self::derivative`].
    pub fn primitive<T: Scalar>(&self, u: T) -> T {
        let z = T::lit(PI / 2.0 * self.alpha) * u;
        z.atan() / T::lit(PI) + T::lit(0.5)
    }
}

/// How a spike node evaluates its forward value. `Smooth` replaces the
/// heaviside with the surrogate's primitive and exists for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeForward {
    #[default]
    Heaviside,
    Smooth,
}

#[derive(Debug, Clone)]
pub enum BnMode<T> {
    Train { eps: T },
    Eval { mean: Vec<T>, var: Vec<T>, eps: T },
}

/// Batch statistics produced by a train-mode batchnorm node.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    PlifCharge {
        x: Var,
        v: Var,
        w: Var,
    },
    Spike {
        h: Var,
        threshold: T,
        surrogate: ArcTanSurrogate,
    },
    SoftReset {
        h: Var,
        s: Var,
        threshold: T,
    },
    GlobalAvgPool(Var),
    ConcatFeatures(Vec<Var>),
    ConcatBatch(Vec<Var>),
    SliceBatch { input: Var, start: usize },
    PoseLoss {
        pred: Var,
        target: Tensor<T>,
    },
    Sum(Vec<Var>),
    Scale(Var, T),
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    spike_forward: SpikeForward,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            spike_forward: SpikeForward::Heaviside,
        }
    }

    pub fn with_spike_forward(spike_forward: SpikeForward) -> Self {
        Self {
            nodes: Vec::new(),
            spike_forward,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Self::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NumError> {
        let b = bias.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv2d_forward(self.value(input), self.value(weight), b.as_deref(), stride, padding)?;
        let rg = self.requires(input) || self.requires(weight) || bias.is_some_and(|b| self.requires(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: &BnMode<T>,
    ) -> Result<(Var, Option<BatchStats<T>>), NumError> {
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let x = self.value(input);
        let (fwd, train): (BnForward<T>, bool) = match mode {
            BnMode::Train { eps } => (kernels::batchnorm_train(x, g, b, *eps)?, true),
            BnMode::Eval { mean, var, eps } => (kernels::batchnorm_eval(x, g, b, mean, var, *eps)?, false),
        };
        let stats = train.then(|| {
            let (n, _, h, w) = x.dims4("batchnorm").unwrap();
            BatchStats {
                mean: fwd.mean.clone(),
                var: fwd.var.clone(),
                count: n * h * w,
            }
        });
        let rg = self.requires(input) || self.requires(gamma) || self.requires(beta);
        let v = self.push(
            fwd.out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.requires(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// `h = v + sigmoid(w) * (x - v)`; `w` is a one-element tensor.
    pub fn plif_charge(&mut self, x: Var, v: Var, w: Var) -> Result<Var, NumError> {
        let (xs, vs) = (self.value(x), self.value(v));
        if xs.shape() != vs.shape() || self.value(w).len() != 1 {
            return Err(NumError::shape(
                "plif_charge",
                format!("input {:?}, state {:?}, decay {:?}", xs.shape(), vs.shape(), self.value(w).shape()),
            ));
        }
        let a = kernels::sigmoid(self.value(w).data()[0]);
        let data = xs.data().iter().zip(vs.data()).map(|(&x, &v)| v + a * (x - v)).collect();
        let out = Tensor::from_vec(xs.shape(), data)?;
        let rg = self.requires(x) || self.requires(v) || self.requires(w);
        Ok(self.push(out, Op::PlifCharge { x, v, w }, rg))
    }

    pub fn spike(&mut self, h: Var, threshold: T, surrogate: ArcTanSurrogate) -> Var {
        let out = match self.spike_forward {
            SpikeForward::Heaviside => self
                .value(h)
                .map(|h| if h >= threshold { T::one() } else { T::zero() }),
            SpikeForward::Smooth => self.value(h).map(|h| surrogate.primitive(h - threshold)),
        };
        let rg = self.requires(h);
        self.push(
            out,
            Op::Spike {
                h,
                threshold,
                surrogate,
            },
            rg,
        )
    }

    /// `v' = h - threshold * s`
    pub fn soft_reset(&mut self, h: Var, s: Var, threshold: T) -> Var {
        let data = self
            .value(h)
            .data()
            .iter()
            .zip(self.value(s).data())
            .map(|(&h, &s)| h - threshold * s)
            .collect();
        let out = Tensor::from_vec(self.value(h).shape(), data).unwrap();
        let rg = self.requires(h) || self.requires(s);
        self.push(out, Op::SoftReset { h, s, threshold }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NumError> {
        let out = kernels::global_avg_pool(self.value(x))?;
        let rg = self.requires(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Concatenates `N x C_i` tensors along the feature axis.
    pub fn concat_features(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let n = match self.value(parts[0]).shape() {
            &[n, _] => n,
            s => return Err(NumError::shape("concat", format!("expected N x C, got {s:?}"))),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.value(p).shape() {
                &[pn, c] if pn == n => widths.push(c),
                s => return Err(NumError::shape("concat", format!("expected {n} x C, got {s:?}"))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[row * c..(row + 1) * c]);
            }
        }
        let out = Tensor::from_vec(&[n, total], data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(out, Op::ConcatFeatures(parts.to_vec()), rg))
    }

    /// Stacks tensors of equal trailing shape along the leading axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let Some(&first) = parts.first() else {
            return Err(NumError::shape("concat_batch", "no inputs".into()));
        };
        let tail = self.value(first).shape().get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().is_empty() || v.shape()[1..] != tail[..] {
                return Err(NumError::shape("concat_batch", format!("{:?} vs trailing {tail:?}", v.shape())));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend(&tail);
        let out = Tensor::from_vec(&shape, data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(out, Op::ConcatBatch(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let v = self.value(x);
        let Some(&rows) = v.shape().first() else {
            return Err(NumError::shape("slice_batch", "scalar input".into()));
        };
        if start + len > rows {
            return Err(NumError::shape("slice_batch", format!("rows {start}..{} of {rows}", start + len)));
        }
        let inner = v.len() / rows.max(1);
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let out = Tensor::from_vec(&shape, v.data()[start * inner..(start + len) * inner].to_vec())?;
        let rg = self.requires(x);
        Ok(self.push(out, Op::SliceBatch { input: x, start }, rg))
    }

    /// Sum over rows of `||dt||_2 + ||dr * 180/pi||_2` for `N x 6` poses.
    pub fn pose_loss_sum(&mut self, pred: Var, target: Tensor<T>) -> Result<Var, NumError> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape().len() != 2 || p.shape()[1] != 6 {
            return Err(NumError::shape(
                "pose_loss",
                format!("prediction {:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        let deg = T::lit(180.0 / PI);
        let mut total = T::zero();
        for (pr, tr) in p.data().chunks_exact(6).zip(target.data().chunks_exact(6)) {
            let norm = |range: std::ops::Range<usize>, k: T| {
                range
                    .map(|i| {
                        let d = (pr[i] - tr[i]) * k;
                        d * d
                    })
                    .sum::<T>()
                    .sqrt()
            };
            total = total + norm(0..3, T::one()) + norm(3..6, deg);
        }
        let rg = self.requires(pred);
        Ok(self.push(Tensor::scalar(total), Op::PoseLoss { pred, target }, rg))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let mut total = T::zero();
        for &p in parts {
            if self.value(p).len() != 1 {
                return Err(NumError::shape("sum", "only scalars can be summed".into()));
            }
            total = total + self.value(p).data()[0];
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Tensor::scalar(total), Op::Sum(parts.to_vec()), rg))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let out = self.value(x).map(|v| v * k);
        let rg = self.requires(x);
        self.push(out, Op::Scale(x, k), rg)
    }

    /// `sum_i weights_i * x_i`, a scalar.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var, NumError> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(NumError::shape("weighted_sum", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let total = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let rg = self.requires(input);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }, rg))
    }

    /// Propagates `d root / d node` for every node that requires gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NumError> {
        if self.value(root).len() != 1 {
            return Err(NumError::shape("backward", "root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let g = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &dy,
                        *stride,
                        *padding,
                        self.requires(*input),
                    )?;
                    if let Some(dx) = g.input {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if self.requires(*weight) {
                        accumulate(&mut grads[weight.0], g.weight);
                    }
                    if let Some(b) = bias.filter(|b| self.requires(*b)) {
                        let shape = self.value(b).shape().to_vec();
                        accumulate(&mut grads[b.0], Tensor::from_vec(&shape, g.bias)?);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let g = kernels::batchnorm_backward(&dy, xhat, self.value(*gamma).data(), inv_std, *train);
                    if self.requires(*input) {
                        accumulate(&mut grads[input.0], g.input);
                    }
                    for (var, data) in [(*gamma, g.gamma), (*beta, g.beta)] {
                        if self.requires(var) {
                            let shape = self.value(var).shape().to_vec();
                            accumulate(&mut grads[var.0], Tensor::from_vec(&shape, data)?);
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = dy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::PlifCharge { x, v, w } => {
                    let wv = self.value(*w).data()[0];
                    let a = kernels::sigmoid(wv);
                    if self.requires(*x) {
                        accumulate(&mut grads[x.0], dy.map(|g| g * a));
                    }
                    if self.requires(*v) {
                        accumulate(&mut grads[v.0], dy.map(|g| g * (T::one() - a)));
                    }
                    if self.requires(*w) {
                        let da: T = dy
                            .data()
                            .iter()
                            .zip(self.value(*x).data().iter().zip(self.value(*v).data()))
                            .map(|(&g, (&x, &v))| g * (x - v))
                            .sum();
                        let shape = self.value(*w).shape().to_vec();
                        accumulate(&mut grads[w.0], Tensor::full(&shape, da * a * (T::one() - a)));
                    }
                }
                Op::Spike {
                    h,
                    threshold,
                    surrogate,
                } => {
                    let hv = self.value(*h);
                    let data = dy
                        .data()
                        .iter()
                        .zip(hv.data())
                        .map(|(&g, &h)| g * surrogate.derivative(h - *threshold))
                        .collect();
                    accumulate(&mut grads[h.0], Tensor::from_vec(hv.shape(), data)?);
                }
                Op::SoftReset { h, s, threshold } => {
                    if self.requires(*h) {
                        accumulate(&mut grads[h.0], dy.clone());
                    }
                    if self.requires(*s) {
                        accumulate(&mut grads[s.0], dy.map(|g| -*threshold * g));
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let (_, _, h, w) = xv.dims4("global_avg_pool")?;
                    let hw = h * w;
                    let denom = T::from_usize(hw).unwrap();
                    let mut data = Vec::with_capacity(xv.len());
                    for &g in dy.data() {
                        data.extend(std::iter::repeat_n(g / denom, hw));
                    }
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.shape(), data)?);
                }
                Op::ConcatFeatures(parts) => {
                    let n = dy.shape()[0];
                    let total = dy.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        if self.requires(p) {
                            let mut data = Vec::with_capacity(n * c);
                            for row in 0..n {
                                let start = row * total + offset;
                                data.extend_from_slice(&dy.data()[start..start + c]);
                            }
                            accumulate(&mut grads[p.0], Tensor::from_vec(&[n, c], data)?);
                        }
                        offset += c;
                    }
                }
                Op::ConcatBatch(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let v = self.value(p);
                        if self.requires(p) {
                            let g = dy.data()[offset..offset + v.len()].to_vec();
                            accumulate(&mut grads[p.0], Tensor::from_vec(v.shape(), g)?);
                        }
                        offset += v.len();
                    }
                }
                Op::SliceBatch { input, start } => {
                    let full = self.value(*input);
                    let inner = full.len() / full.shape()[0].max(1);
                    let slot = grads[input.0].get_or_insert_with(|| Tensor::zeros(full.shape()));
                    let dst = &mut slot.data_mut()[start * inner..start * inner + dy.len()];
                    for (d, &g) in dst.iter_mut().zip(dy.data()) {
                        *d = *d + g;
                    }
                }
                Op::PoseLoss { pred, target } => {
                    let g = dy.data()[0];
                    let deg = T::lit(180.0 / PI);
                    let pv = self.value(*pred);
                    let mut data = vec![T::zero(); pv.len()];
                    for ((pr, tr), out) in pv
                        .data()
                        .chunks_exact(6)
                        .zip(target.data().chunks_exact(6))
                        .zip(data.chunks_exact_mut(6))
                    {
                        for (range, k) in [(0..3, T::one()), (3..6, deg)] {
                            let norm = range
                                .clone()
                                .map(|i| (pr[i] - tr[i]) * (pr[i] - tr[i]))
                                .sum::<T>()
                                .sqrt();
                            // zero subgradient at an exact match
                            if norm > T::zero() {
                                for i in range {
                                    out[i] = g * k * (pr[i] - tr[i]) / norm;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[pred.0], Tensor::from_vec(pv.shape(), data)?);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        if self.requires(p) {
                            accumulate(&mut grads[p.0], dy.clone());
                        }
                    }
                }
                Op::Scale(x, k) => {
                    accumulate(&mut grads[x.0], dy.map(|g| g * *k));
                }
                Op::WeightedSum { input, weights } => {
                    let g = dy.data()[0];
                    accumulate(&mut grads[input.0], weights.map(|w| w * g));
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_kink() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.weighted_sum(y, Tensor::full(&[3], 1.0)).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.variable(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.variable(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let ab = tape.concat_batch(&[a, b]).unwrap();
        assert_eq!(tape.value(ab).shape(), &[3, 2]);
        let mid = tape.slice_batch(ab, 1, 2).unwrap();
        let top = tape.slice_batch(ab, 0, 2).unwrap();
        assert_eq!(tape.value(mid).data(), &[3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s1 = tape.weighted_sum(mid, w.clone()).unwrap();
        let s2 = tape.weighted_sum(top, w).unwrap();
        let total = tape.sum(&[s1, s2]).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 6.0, 3.0, 4.0]);
        assert!(tape.slice_batch(ab, 2, 2).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let x = tape.variable(Tensor::full(&[2], 1.0));
        let s = tape.weighted_sum(c, Tensor::full(&[2], 1.0)).unwrap();
        let t = tape.weighted_sum(x, Tensor::full(&[2], 2.0)).unwrap();
        let total = tape.sum(&[s, t]).unwrap();
        let g = tape.backward(total).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::full(&[1], 2.0));
        let a = tape.scale(x, 3.0);
        let b = tape.scale(x, 4.0);
        let total = tape.sum(&[a, b]).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn pose_loss_worked_cases() {
        let mut tape = Tape::<f64>::new();
        let p = tape.variable(Tensor::from_vec(&[2, 6], vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, PI / 180.0, 0.0, 0.0]).unwrap());
        let loss = tape.pose_loss_sum(p, Tensor::zeros(&[2, 6])).unwrap();
        assert!((tape.value(loss).data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn surrogate_matches_primitive_slope() {
        let s = ArcTanSurrogate::default();
        for &u in &[-1.3f64, -0.2, 0.0, 0.4, 2.0] {
            let h = 1e-6;
            let numeric = (s.primitive(u + h) - s.primitive(u - h)) / (2.0 * h);
            assert!((numeric - s.derivative(u)).abs() < 1e-8);
        }
        assert_eq!(s.derivative(0.0f64), 1.0);
    }
}
