use std::sync::Arc;

use super::{order_free_sum, Activation, Segments, Tensor};
use crate::error::{Result, RfnError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    /// One weight per flattened segment position, as an `n x 1` tape tensor.
    WeightedSum(Var),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        lhs: Var,
        rhs: Var,
        broadcast: bool,
    },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    Activation(Var, Activation),
    L2Normalize(Var, Vec<f64>),
    SegmentSum {
        input: Var,
        segments: Arc<Segments>,
        mean: bool,
    },
    SegmentMax {
        input: Var,
        argmax: Vec<Option<usize>>,
    },
    SegmentWeighted {
        input: Var,
        segments: Arc<Segments>,
        weights: Var,
    },
    SegmentSoftmax {
        input: Var,
        segments: Arc<Segments>,
    },
    SumAll(Var),
    Scale(Var, f64),
    PerSegmentMse {
        pred: Var,
        means: Vec<f64>,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Lower clamp for probabilities fed to the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(RfnError::Bounds {
                what: "tape variable",
                index: v.0,
                len: self.nodes.len(),
            })
        }
    }

    /// Records a trainable tensor.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        let t = tensor.with_requires_grad(true);
        self.push(t, Op::Leaf)
    }

    /// Records a tensor that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let t = tensor.with_requires_grad(false);
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&self, v: Var) -> Tensor {
        let t = &self.nodes[v.0].value;
        Tensor::from_vec(t.rows(), t.cols(), t.data().to_vec()).expect("shape preserved")
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(RfnError::Dimension {
                op: "matmul",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let out = matmul_raw(ta, tb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Pointwise add/sub/mul on equal shapes. `Add` also accepts a `1 x d`
    /// right-hand side against an `m x d` matrix (row-bias broadcast).
    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if kind == BinaryKind::Add && tb.rows() == 1 && tb.cols() == ta.cols() {
            true
        } else {
            return Err(RfnError::Dimension {
                op: "elementwise",
                left: ta.shape(),
                right: tb.shape(),
            });
        };
        let cols = ta.cols();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { tb.data()[i % cols] } else { tb.data()[i] };
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::from_vec(ta.rows(), cols, data)?;
        Ok(self.push(
            out,
            Op::Binary {
                kind,
                lhs: a,
                rhs: b,
                broadcast,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(RfnError::contract("concat_cols needs at least one part"));
        };
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.value(first).rows();
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(RfnError::Dimension {
                    op: "concat_cols",
                    left: self.value(first).shape(),
                    right: t.shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        self.check(x)?;
        let indices = indices.into();
        let out = self.value(x).select_rows(&indices)?;
        Ok(self.push(out, Op::GatherRows(x, indices)))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let out = match kind {
            Activation::SoftmaxRows => softmax_rows_raw(t),
            _ => {
                let data = t.data().iter().map(|&v| kind.apply_scalar(v)).collect();
                Tensor::from_vec(t.rows(), t.cols(), data)?
            }
        };
        Ok(self.push(out, Op::Activation(x, kind)))
    }

    /// Divides each row by its Euclidean norm; all-zero rows pass through.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        let mut norms = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dst = out.row_mut(r);
            if norm > 0.0 {
                dst.iter_mut().zip(row).for_each(|(d, v)| *d = v / norm);
            } else {
                dst.copy_from_slice(row);
            }
            norms.push(norm);
        }
        Ok(self.push(out, Op::L2Normalize(x, norms)))
    }

    /// Reduces the rows of `values` selected by each segment. Empty segments
    /// produce zero rows for every reduction kind.
    pub fn segment_reduce(
        &mut self,
        values: Var,
        segments: &Arc<Segments>,
        kind: ReduceKind,
    ) -> Result<Var> {
        self.check(values)?;
        let t = self.value(values);
        let n = t.rows();
        if let Some(&bad) = segments.indices().iter().find(|&&i| i >= n) {
            return Err(RfnError::Bounds {
                what: "segment index",
                index: bad,
                len: n,
            });
        }
        let d = t.cols();
        let s = segments.len();
        let mut out = Tensor::zeros(s, d);
        let mut buf = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                let mean = matches!(kind, ReduceKind::Mean);
                for i in 0..s {
                    let seg = segments.segment(i);
                    if seg.is_empty() {
                        continue;
                    }
                    for c in 0..d {
                        buf.clear();
                        buf.extend(seg.iter().map(|&j| t.get(j, c)));
                        let mut v = order_free_sum(&mut buf);
                        if mean {
                            v /= seg.len() as f64;
                        }
                        out.set(i, c, v);
                    }
                }
                let op = Op::SegmentSum {
                    input: values,
                    segments: Arc::clone(segments),
                    mean,
                };
                Ok(self.push(out, op))
            }
            ReduceKind::Max => {
                let mut argmax = vec![None; s * d];
                for i in 0..s {
                    let seg = segments.segment(i);
                    for c in 0..d {
                        let mut best: Option<(usize, f64)> = None;
                        for &j in seg {
                            let v = t.get(j, c);
                            if best.is_none_or(|(_, b)| v > b) {
                                best = Some((j, v));
                            }
                        }
                        if let Some((j, v)) = best {
                            out.set(i, c, v);
                            argmax[i * d + c] = Some(j);
                        }
                    }
                }
                let op = Op::SegmentMax {
                    input: values,
                    argmax,
                };
                Ok(self.push(out, op))
            }
            ReduceKind::WeightedSum(weights) => {
                self.check(weights)?;
                let w = self.value(weights);
                if w.shape() != (segments.total_indices(), 1) {
                    return Err(RfnError::Dimension {
                        op: "segment_reduce(weighted_sum)",
                        left: (segments.total_indices(), 1),
                        right: w.shape(),
                    });
                }
                for i in 0..s {
                    let range = segments.range(i);
                    if range.is_empty() {
                        continue;
                    }
                    for c in 0..d {
                        buf.clear();
                        buf.extend(
                            range
                                .clone()
                                .map(|p| w.data()[p] * t.get(segments.indices()[p], c)),
                        );
                        out.set(i, c, order_free_sum(&mut buf));
                    }
                }
                let op = Op::SegmentWeighted {
                    input: values,
                    segments: Arc::clone(segments),
                    weights,
                };
                Ok(self.push(out, op))
            }
        }
    }

    /// Softmax of an `n x 1` score column within each segment. Positions not
    /// covered by any segment get weight zero.
    pub fn segment_softmax(&mut self, scores: Var, segments: &Arc<Segments>) -> Result<Var> {
        self.check(scores)?;
        let t = self.value(scores);
        if t.cols() != 1 {
            return Err(RfnError::Dimension {
                op: "segment_softmax",
                left: (t.rows(), 1),
                right: t.shape(),
            });
        }
        let n = t.rows();
        if let Some(&bad) = segments.indices().iter().find(|&&i| i >= n) {
            return Err(RfnError::Bounds {
                what: "segment index",
                index: bad,
                len: n,
            });
        }
        let mut out = Tensor::zeros(n, 1);
        let mut buf = Vec::new();
        for seg in segments.iter() {
            if seg.is_empty() {
                continue;
            }
            let max = seg
                .iter()
                .map(|&j| t.data()[j])
                .fold(f64::NEG_INFINITY, f64::max);
            buf.clear();
            buf.extend(seg.iter().map(|&j| (t.data()[j] - max).exp()));
            let exps = buf.clone();
            let denom = order_free_sum(&mut buf);
            for (&j, e) in seg.iter().zip(exps) {
                out.data_mut()[j] = e / denom;
            }
        }
        let op = Op::SegmentSoftmax {
            input: scores,
            segments: Arc::clone(segments),
        };
        Ok(self.push(out, op))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let mut buf = self.value(x).data().to_vec();
        let s = order_free_sum(&mut buf);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(x)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data)?;
        Ok(self.push(out, Op::Scale(x, factor)))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows of `sum_y (pred - y)^2 / |Y|`, one observation multiset
    /// per row of the `n x 1` prediction column.
    pub fn per_segment_mse(&mut self, pred: Var, observations: &[&[f64]]) -> Result<Var> {
        self.check(pred)?;
        let t = self.value(pred);
        if t.shape() != (observations.len(), 1) {
            return Err(RfnError::Dimension {
                op: "per_segment_mse",
                left: t.shape(),
                right: (observations.len(), 1),
            });
        }
        if t.rows() == 0 {
            return Err(RfnError::contract("per_segment_mse on an empty batch"));
        }
        let mut means = Vec::with_capacity(observations.len());
        let mut per_edge = Vec::with_capacity(observations.len());
        for (i, ys) in observations.iter().enumerate() {
            if ys.is_empty() {
                return Err(RfnError::contract(format!(
                    "batch row {i} has no observations"
                )));
            }
            let yhat = t.data()[i];
            let k = ys.len() as f64;
            per_edge.push(ys.iter().map(|y| (yhat - y).powi(2)).sum::<f64>() / k);
            means.push(ys.iter().sum::<f64>() / k);
        }
        let loss = per_edge.iter().sum::<f64>() / per_edge.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::PerSegmentMse { pred, means }))
    }

    /// Mean negative log-probability of the labelled class, with
    /// probabilities clamped to `[PROB_CLAMP, 1]`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        self.check(probs)?;
        let t = self.value(probs);
        if t.rows() != labels.len() {
            return Err(RfnError::Dimension {
                op: "cross_entropy",
                left: t.shape(),
                right: (labels.len(), 1),
            });
        }
        if t.rows() == 0 {
            return Err(RfnError::contract("cross_entropy on an empty batch"));
        }
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            if l >= t.cols() {
                return Err(RfnError::contract(format!(
                    "label {l} outside class vocabulary of size {}",
                    t.cols()
                )));
            }
            total -= t.get(r, l).clamp(PROB_CLAMP, 1.0).ln();
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Accumulates `d loss / d x` into every parameter reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(RfnError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if node.value.requires_grad() {
                        self.nodes[idx].value.accumulate_grad(&g);
                    }
                }
                op => {
                    let contributions = self.local_backward(op, &node.value, &g);
                    for (v, contrib) in contributions {
                        match &mut adj[v.0] {
                            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(contrib),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * tb.data()[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = ta.data()[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += a_ip * g[i * n + j];
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Binary {
                kind,
                lhs,
                rhs,
                broadcast,
            } => {
                let (ta, tb) = (self.value(*lhs), self.value(*rhs));
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        let sign = if *kind == BinaryKind::Add { 1.0 } else { -1.0 };
                        let db = if *broadcast {
                            let cols = ta.cols();
                            let mut db = vec![0.0; cols];
                            for (i, gi) in g.iter().enumerate() {
                                db[i % cols] += gi;
                            }
                            db
                        } else {
                            g.iter().map(|v| sign * v).collect()
                        };
                        vec![(*lhs, g.to_vec()), (*rhs, db)]
                    }
                    BinaryKind::Mul => {
                        let da = g.iter().zip(tb.data()).map(|(g, b)| g * b).collect();
                        let db = g.iter().zip(ta.data()).map(|(g, a)| g * a).collect();
                        vec![(*lhs, da), (*rhs, db)]
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    res.push((p, d));
                }
                res
            }
            Op::GatherRows(x, indices) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] += g[r * c + j];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Activation(x, kind) => {
                let tx = self.value(*x);
                let dx = match kind {
                    Activation::SoftmaxRows => {
                        let c = out.cols();
                        let mut dx = vec![0.0; out.len()];
                        for r in 0..out.rows() {
                            let y = out.row(r);
                            let gr = &g[r * c..(r + 1) * c];
                            let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                dx[r * c + j] = y[j] * (gr[j] - dot);
                            }
                        }
                        dx
                    }
                    k => tx
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, gi)| gi * k.derivative_scalar(v))
                        .collect(),
                };
                vec![(*x, dx)]
            }
            Op::L2Normalize(x, norms) => {
                let c = out.cols();
                let mut dx = vec![0.0; out.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let gr = &g[r * c..(r + 1) * c];
                    if norm > 0.0 {
                        let y = out.row(r);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[r * c + j] = (gr[j] - y[j] * dot) / norm;
                        }
                    } else {
                        dx[r * c..(r + 1) * c].copy_from_slice(gr);
                    }
                }
                vec![(*x, dx)]
            }
            Op::SegmentSum {
                input,
                segments,
                mean,
            } => {
                let tx = self.value(*input);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (i, seg) in segments.iter().enumerate() {
                    let scale = if *mean && !seg.is_empty() {
                        1.0 / seg.len() as f64
                    } else {
                        1.0
                    };
                    for &j in seg {
                        for c in 0..d {
                            dx[j * d + c] += scale * g[i * d + c];
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::SegmentMax { input, argmax, .. } => {
                let tx = self.value(*input);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (pos, am) in argmax.iter().enumerate() {
                    if let Some(j) = am {
                        dx[j * d + pos % d] += g[pos];
                    }
                }
                vec![(*input, dx)]
            }
            Op::SegmentWeighted {
                input,
                segments,
                weights,
            } => {
                let tx = self.value(*input);
                let w = self.value(*weights);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                let mut dw = vec![0.0; w.len()];
                for i in 0..segments.len() {
                    for p in segments.range(i) {
                        let j = segments.indices()[p];
                        let gi = &g[i * d..(i + 1) * d];
                        let mut dot = 0.0;
                        for c in 0..d {
                            dx[j * d + c] += w.data()[p] * gi[c];
                            dot += gi[c] * tx.get(j, c);
                        }
                        dw[p] += dot;
                    }
                }
                vec![(*input, dx), (*weights, dw)]
            }
            Op::SegmentSoftmax { input, segments } => {
                let mut dx = vec![0.0; out.len()];
                for seg in segments.iter() {
                    let dot: f64 = seg.iter().map(|&j| g[j] * out.data()[j]).sum();
                    for &j in seg {
                        dx[j] = out.data()[j] * (g[j] - dot);
                    }
                }
                vec![(*input, dx)]
            }
            Op::SumAll(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Scale(x, factor) => vec![(*x, g.iter().map(|v| v * factor).collect())],
            Op::PerSegmentMse { pred, means } => {
                let tp = self.value(*pred);
                let n = means.len() as f64;
                let dx = tp
                    .data()
                    .iter()
                    .zip(means)
                    .map(|(yhat, mean)| g[0] * 2.0 * (yhat - mean) / n)
                    .collect();
                vec![(*pred, dx)]
            }
            Op::CrossEntropy { probs, labels } => {
                let tp = self.value(*probs);
                let n = labels.len() as f64;
                let mut dx = vec![0.0; tp.len()];
                for (r, &l) in labels.iter().enumerate() {
                    let p = tp.get(r, l);
                    if p > PROB_CLAMP && p <= 1.0 {
                        dx[r * tp.cols() + l] = -g[0] / (n * p);
                    }
                }
                vec![(*probs, dx)]
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a.data()[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b.data()[p * n..(p + 1) * n];
            row.iter_mut().zip(b_row).for_each(|(o, bv)| *o += a_ip * bv);
        }
    }
    Tensor::from_vec(m, n, out).expect("matmul shape")
}

fn softmax_rows_raw(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_row_sum() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = tape.constant(Tensor::identity(2));
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = tape.constant(t(&[vec![1.0, 2.0]]));
        let ones = tape.constant(t(&[vec![1.0], vec![1.0]]));
        let s = tape.matmul(r, ones).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn elementwise_mul_and_bias_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0]]));
        let b = tape.constant(t(&[vec![3.0, 4.0]]));
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 8.0]);

        let x = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let bias = tape.constant(t(&[vec![10.0, 20.0]]));
        let y = tape.add(x, bias).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);

        // Broadcasting is add-only.
        assert!(tape.mul(x, bias).is_err());
        let wrong = tape.constant(Tensor::zeros(3, 3));
        assert!(tape.add(x, wrong).is_err());
    }

    #[test]
    fn concat_cols_layout() {
        let mut tape = Tape::new();
        let parts: Vec<Var> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| tape.constant(Tensor::scalar(v)))
            .collect();
        let c = tape.concat_cols(&parts).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

        let a = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(t(&[vec![5.0, 6.0, 7.0], vec![8.0, 9.0, 10.0]]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), (2, 5));
        assert_eq!(tape.value(c).row(1), &[3.0, 4.0, 8.0, 9.0, 10.0]);

        let short = tape.constant(Tensor::zeros(3, 1));
        assert!(tape.concat_cols(&[a, short]).is_err());
        assert!(tape.concat_cols(&[]).is_err());
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 0.0, 2.0]]));
        let y = tape.activation(x, Activation::Relu).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let z = tape.constant(t(&[vec![0.0, 0.0]]));
        let s = tape.activation(z, Activation::SoftmaxRows).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let e = tape.constant(Tensor::scalar(-1.0));
        let ye = tape.activation(e, Activation::Elu).unwrap();
        assert!((tape.value(ye).data()[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![3.0, 4.0], vec![0.0, 0.0]]));
        let y = tape.l2_normalize_rows(x).unwrap();
        let v = tape.value(y);
        assert!((v.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((v.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(v.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn segment_reduce_examples() {
        let mut tape = Tape::new();
        let v = tape.constant(t(&[vec![2.0], vec![4.0]]));
        let seg = Arc::new(Segments::from_lists([vec![0, 1]]));
        let m = tape.segment_reduce(v, &seg, ReduceKind::Mean).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0]);

        let w = tape.constant(Tensor::column_vector(&[1.0, 0.0]));
        let ws = tape
            .segment_reduce(v, &seg, ReduceKind::WeightedSum(w))
            .unwrap();
        assert_eq!(tape.value(ws).data(), &[2.0]);

        let x = tape.constant(t(&[vec![1.0, 5.0], vec![3.0, 2.0]]));
        let mx = tape.segment_reduce(x, &seg, ReduceKind::Max).unwrap();
        assert_eq!(tape.value(mx).data(), &[3.0, 5.0]);

        let empty = Arc::new(Segments::from_lists([Vec::<usize>::new()]));
        for kind in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max] {
            let r = tape.segment_reduce(x, &empty, kind).unwrap();
            assert_eq!(tape.value(r).data(), &[0.0, 0.0]);
        }

        let oob = Arc::new(Segments::from_lists([vec![0, 7]]));
        assert!(matches!(
            tape.segment_reduce(x, &oob, ReduceKind::Sum),
            Err(RfnError::Bounds { index: 7, .. })
        ));
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let s = tape.sum_all(w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let w = tape.param(Tensor::row_vector(&[1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum_all(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);

        // Accumulates across calls until reset.
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[4.0, 8.0]);
        tape.zero_grads();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(w), Err(RfnError::Contract(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row_vector(&[1.0, 2.0]));
        let s = tape.sum_all(c).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn segment_softmax_examples() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::column_vector(&[2f64.ln(), 0.0, 5.0]));
        let seg = Arc::new(Segments::from_lists([vec![0, 1], vec![2]]));
        let a = tape.segment_softmax(s, &seg).unwrap();
        let v = tape.value(a).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn per_segment_mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column_vector(&[15.0]));
        let l = tape.per_segment_mse(p, &[&[10.0, 20.0]]).unwrap();
        assert_eq!(tape.value(l).data(), &[25.0]);

        let l = tape
            .per_segment_mse(p, &[&[10.0, 10.0, 20.0, 20.0]])
            .unwrap();
        assert_eq!(tape.value(l).data(), &[25.0]);

        let p1 = tape.constant(Tensor::column_vector(&[7.0]));
        let l = tape.per_segment_mse(p1, &[&[7.0]]).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);

        assert!(matches!(
            tape.per_segment_mse(p1, &[&[]]),
            Err(RfnError::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let perfect = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]));
        let l = tape.cross_entropy(perfect, &[0]).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-15);

        let uniform = tape.constant(Tensor::filled(3, 4, 0.25));
        let l = tape.cross_entropy(uniform, &[0, 1, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);

        let zero = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0]]));
        let l = tape.cross_entropy(zero, &[0]).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite());
        assert!((v + PROB_CLAMP.ln()).abs() < 1e-9);

        assert!(tape.cross_entropy(zero, &[2]).is_err());
    }
}
