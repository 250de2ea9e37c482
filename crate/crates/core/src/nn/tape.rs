//! Dynamic reverse-mode tape.
//!
//! Every op appends a node holding its value and, when recording, the record
//! needed to push gradients back to its inputs. Node ids only ever point
//! backwards, so the graph is acyclic and reverse id order is a valid
//! topological order for the backward sweep.

use super::kernels::{self, ConvGeom, Mat};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        out_channels: usize,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        hw: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LogSoftmax(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Grl {
        x: Var,
        lambda: f64,
    },
    Nll {
        logp: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Add every parameter gradient into the store's grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], data: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
    }
}

impl Tape {
    /// A tape that records backward information.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that only computes values; nothing can be differentiated.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?} must be NCHW and kernel {ws:?} OCkk"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != kernel channels {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {bs:?} must be [{}]", ws[0]),
            ));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {} does not fit input {}x{} with pad {pad}", ws[2], xs[2], xs[3]),
            ));
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let (batch, out_channels) = (xs[0], ws[0]);
        let (oh, ow) = geom.out_hw();
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            batch,
            &geom,
            self.value(w).data(),
            self.value(b).data(),
            out_channels,
        );
        let value = Tensor::new(vec![batch, out_channels, oh, ow], data)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Non-overlapping `k × k` max pooling.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(Error::shape("max_pool2d", format!("input {s:?}, window {k}")));
        }
        let (data, argmax) =
            kernels::max_pool_forward(self.value(x).data(), s[0] * s[1], s[2], s[3], k);
        let value = Tensor::new(vec![s[0], s[1], s[2] / k, s[3] / k], data)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    /// `N × C × H × W → N × C` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("global_avg_pool", format!("input {s:?}")));
        }
        let hw = s[2] * s[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool { x, hw }))
    }

    /// `y = x · wᵀ + b` with `x: N × I`, `w: O × I`, `b: O`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut data = Vec::with_capacity(n * o);
        for _ in 0..n {
            data.extend_from_slice(self.value(b).data());
        }
        kernels::gemm(
            Mat::new(self.value(x).data(), n, i),
            Mat::new(self.value(w).data(), o, i).t(),
            &mut data,
            1.0,
        );
        let value = Tensor::new(vec![n, o], data)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Row-wise log-softmax of a 2-D tensor, computed via log-sum-exp.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(Error::shape("log_softmax", format!("input {s:?}")));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(s[1]) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(s, data)?;
        Ok(self.push(value, Op::LogSoftmax(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        self.push(value, Op::Mean(x))
    }

    /// Gradient reversal: identity forward, `-lambda ×` upstream backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::config("lambda", format!("must be >= 0, got {lambda}")));
        }
        let value = self.value(x).clone();
        Ok(self.push(value, Op::Grl { x, lambda }))
    }

    /// Weighted negative log-likelihood `-Σ wᵢ logp[i, yᵢ] / Σ wᵢ`; uniform
    /// weights when `weights` is `None`.
    pub fn nll(&mut self, logp: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let s = self.value(logp).shape().to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::shape(
                "nll",
                format!("log-probs {s:?} vs {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                bound: s[1],
            });
        }
        let raw = match weights {
            Some(w) if w.len() != targets.len() => {
                return Err(Error::LengthMismatch {
                    left: w.len(),
                    right: targets.len(),
                })
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; targets.len()],
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || raw.iter().any(|&w| w < 0.0) {
            return Err(Error::config("weights", "must be non-negative with a positive sum"));
        }
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let lp = self.value(logp).data();
        let loss = -targets
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(i, (&t, &w))| w * lp[i * s[1] + t])
            .sum::<f64>();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                logp,
                targets: targets.to_vec(),
                weights,
            },
        ))
    }

    /// Backpropagate from a scalar loss. Consumes the tape's graph: a second
    /// call fails with [`Error::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let t = self.value(loss);
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        let seed = Tensor::full(t.shape(), 1.0);
        self.backward_from(loss, seed)
    }

    /// Backpropagate an explicit upstream gradient from any node.
    pub fn backward_from(&mut self, out: Var, seed: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        check_same("backward", self.value(out), &seed)?;
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        let mut params = Vec::new();

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => params.push((*id, i)),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    out_channels,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (dx, dw, db) = kernels::conv2d_backward(
                        xv.data(),
                        xv.shape()[0],
                        geom,
                        wv.data(),
                        *out_channels,
                        g.data(),
                    );
                    accumulate(&mut grads[x.0], xv.shape(), dx);
                    accumulate(&mut grads[w.0], wv.shape(), dw);
                    accumulate(&mut grads[b.0], &[*out_channels], db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let d = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], xv.shape(), d);
                }
                Op::MaxPool { x, argmax } => {
                    let xv = &self.nodes[x.0].value;
                    let mut d = vec![0.0; xv.numel()];
                    for (&src, &gi) in argmax.iter().zip(g.data()) {
                        d[src] += gi;
                    }
                    accumulate(&mut grads[x.0], xv.shape(), d);
                }
                Op::GlobalAvgPool { x, hw } => {
                    let xv = &self.nodes[x.0].value;
                    let inv = 1.0 / *hw as f64;
                    let d = g
                        .data()
                        .iter()
                        .flat_map(|&gi| std::iter::repeat_n(gi * inv, *hw))
                        .collect();
                    accumulate(&mut grads[x.0], xv.shape(), d);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (n, inp, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                    let gm = Mat::new(g.data(), n, o);
                    let mut dx = vec![0.0; n * inp];
                    kernels::gemm(gm, Mat::new(wv.data(), o, inp), &mut dx, 0.0);
                    let mut dw = vec![0.0; o * inp];
                    kernels::gemm(gm.t(), Mat::new(xv.data(), n, inp), &mut dw, 0.0);
                    let mut db = vec![0.0; o];
                    for row in g.data().chunks(o) {
                        for (a, v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads[x.0], xv.shape(), dx);
                    accumulate(&mut grads[w.0], wv.shape(), dw);
                    accumulate(&mut grads[b.0], &[o], db);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let cols = y.shape()[1];
                    let mut d = Vec::with_capacity(y.numel());
                    for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
                        let gsum: f64 = gr.iter().sum();
                        d.extend(yr.iter().zip(gr).map(|(&yi, &gi)| gi - yi.exp() * gsum));
                    }
                    accumulate(&mut grads[x.0], y.shape(), d);
                }
                Op::Exp(x) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[x.0], y.shape(), d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.shape(), g.data().to_vec());
                    accumulate(&mut grads[b.0], g.shape(), g.data().to_vec());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.shape(), g.data().to_vec());
                    accumulate(&mut grads[b.0], g.shape(), g.data().iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], g.shape(), da);
                    accumulate(&mut grads[b.0], g.shape(), db);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads[x.0], g.shape(), g.data().iter().map(|v| v * c).collect());
                }
                Op::Sum(x) => {
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut grads[x.0], xv.shape(), vec![g.item(); xv.numel()]);
                }
                Op::Mean(x) => {
                    let xv = &self.nodes[x.0].value;
                    let v = g.item() / xv.numel().max(1) as f64;
                    accumulate(&mut grads[x.0], xv.shape(), vec![v; xv.numel()]);
                }
                Op::Grl { x, lambda } => {
                    let d = g.data().iter().map(|v| -lambda * v).collect();
                    accumulate(&mut grads[x.0], g.shape(), d);
                }
                Op::Nll {
                    logp,
                    targets,
                    weights,
                } => {
                    let lv = &self.nodes[logp.0].value;
                    let cols = lv.shape()[1];
                    let mut d = vec![0.0; lv.numel()];
                    let gi = g.item();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        d[i * cols + t] = -w * gi;
                    }
                    accumulate(&mut grads[logp.0], lv.shape(), d);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    /// Backward from `loss` and add the parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_one_by_one_conv() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..18).map(|v| v as f64 * 0.3 - 2.0).collect();
        let x = tape.input(t(&[2, 1, 3, 3], &data));
        let w = tape.input(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.input(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn all_ones_kernel_sums_receptive_field() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(&[1, 1, 5, 5], 1.0));
        let w = tape.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.input(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_channel_mismatch_names_op() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.input(Tensor::zeros(&[1, 3, 3, 3]));
        let b = tape.input(Tensor::zeros(&[1]));
        let err = tape.conv2d(x, w, b, 1, 1).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("2") && err.contains("3"), "{err}");
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_and_consumed_graph_are_errors() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::GraphConsumed)));
    }

    #[test]
    fn cloned_graph_backward_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.5, -0.5]), super::super::ParamGroup::Classifier);
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let mut copy = tape.clone();
        tape.backward_into(loss, &mut store).unwrap();
        let once = store.get(id).grad.clone();
        copy.backward_into(loss, &mut store).unwrap();
        let twice = store.get(id).grad.data().to_vec();
        assert_eq!(twice, once.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>());
    }

    #[test]
    fn grl_identity_forward_and_scaled_negation() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![3.5, -1.0]));
        let y = tape.grl(x, 0.5).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, -1.0]);
        let g = tape
            .backward_from(y, Tensor::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[-0.5, -0.5]);

        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![3.5, -1.0]));
        let y = tape.grl(x, 0.0).unwrap();
        let g = tape
            .backward_from(y, Tensor::from_vec(vec![7.0, -3.0]))
            .unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grl_rejects_negative_lambda() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(vec![1.0]));
        assert!(tape.grl(x, -0.1).is_err());
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::inference();
        let x = tape.input(Tensor::from_vec(vec![1.0, -2.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        assert_eq!(tape.value(s).item(), 1.0);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).is_none());
    }

    #[test]
    fn nll_rejects_out_of_range_targets() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 3]));
        let lp = tape.log_softmax(x).unwrap();
        assert!(matches!(
            tape.nll(lp, &[0, 3], None),
            Err(Error::LabelOutOfRange { label: 3, bound: 3 })
        ));
    }
}
