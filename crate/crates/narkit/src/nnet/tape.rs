//! Reverse-mode autodiff over a flat tape of tensor ops.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! already a topological order. Every op's backward rule is checked against
//! central finite differences in the tests below; the whole-model check
//! lives in the acceptance suite.

use super::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a [n,k] x b [k,m]
    Matmul { a: NodeId, b: NodeId },
    /// a [n,k] x b^T, b [m,k]
    MatmulBt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// a [n,c] + row [1,c] broadcast over rows
    AddRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    SoftmaxRows { a: NodeId },
    /// Row-wise layer norm with learned affine.
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    /// Gathers rows of `src`; index -1 yields a zero row.
    GatherRows { src: NodeId, indices: Vec<isize> },
    ColSlice { a: NodeId, from: usize, to: usize },
    ConcatCols { parts: Vec<NodeId> },
    Reshape { a: NodeId },
    /// Per-row choice: rows with `use_b` take b's row, the rest a's.
    RowSelect { a: NodeId, b: NodeId, use_b: Vec<bool> },
    /// Elementwise product with a fixed mask (dropout).
    MulMask { a: NodeId, mask: Vec<f64> },
    /// Mean cross-entropy of row-wise softmax(logits) vs labels over the
    /// active rows; scalar output.
    CrossEntropyRows { logits: NodeId, labels: Vec<usize>, active: Vec<bool> },
    /// Per-cell class cross-entropy. `scores` is [m*c, m] where entry
    /// (i*c + k, j) is class k's logit for cell (i, j); labels is the
    /// row-major m*m class matrix. Mean over all cells; scalar output.
    CellCrossEntropy { scores: NodeId, labels: Vec<usize>, classes: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Every softmax_rows node, so invariants over all produced
    /// distributions can be checked without threading ids around.
    pub softmax_nodes: Vec<NodeId>,
}

const EPS_LN: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::Matmul { a, b })
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatmulBt { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_in_place(self.value(b));
        self.push(v, Op::Add { a, b })
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (n, c) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(self.value(row).len(), c, "bias width mismatch");
        let mut v = self.value(a).clone();
        for r in 0..n {
            let bias = self.value(row).data().to_vec();
            for (x, b) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_in_place(c);
        self.push(v, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push(v, Op::Relu { a })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for x in v.data_mut() {
            *x = gelu_fwd(*x);
        }
        self.push(v, Op::Gelu { a })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let (n, c) = (src.rows(), src.cols());
        let mut v = Tensor::zeros(&[n, c]);
        for r in 0..n {
            softmax_into(src.row(r), v.row_mut(r));
        }
        let id = self.push(v, Op::SoftmaxRows { a });
        self.softmax_nodes.push(id);
        id
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let src = self.value(x);
        let (n, c) = (src.rows(), src.cols());
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        assert_eq!(g.len(), c);
        let mut v = Tensor::zeros(&[n, c]);
        for r in 0..n {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + EPS_LN).sqrt();
            for j in 0..c {
                v.row_mut(r)[j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        self.push(v, Op::LayerNorm { x, gamma, beta })
    }

    pub fn gather_rows(&mut self, src: NodeId, indices: Vec<isize>) -> NodeId {
        let s = self.value(src);
        let c = s.cols();
        let mut v = Tensor::zeros(&[indices.len(), c]);
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= 0 {
                v.row_mut(r).copy_from_slice(s.row(idx as usize));
            }
        }
        self.push(v, Op::GatherRows { src, indices })
    }

    pub fn col_slice(&mut self, a: NodeId, from: usize, to: usize) -> NodeId {
        let s = self.value(a);
        let n = s.rows();
        let mut v = Tensor::zeros(&[n, to - from]);
        for r in 0..n {
            v.row_mut(r).copy_from_slice(&s.row(r)[from..to]);
        }
        self.push(v, Op::ColSlice { a, from, to })
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let n = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(&[n, total]);
        for r in 0..n {
            let mut at = 0;
            for &p in &parts {
                let pc = self.value(p).cols();
                v.row_mut(r)[at..at + pc].copy_from_slice(self.value(p).row(r));
                at += pc;
            }
        }
        self.push(v, Op::ConcatCols { parts })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(a).reshaped(shape);
        self.push(v, Op::Reshape { a })
    }

    pub fn row_select(&mut self, a: NodeId, b: NodeId, use_b: Vec<bool>) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "row_select shape mismatch");
        assert_eq!(use_b.len(), va.rows());
        let mut v = va.clone();
        for (r, &sel) in use_b.iter().enumerate() {
            if sel {
                let row = vb.row(r).to_vec();
                v.row_mut(r).copy_from_slice(&row);
            }
        }
        self.push(v, Op::RowSelect { a, b, use_b })
    }

    pub fn mul_mask(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let mut v = self.value(a).clone();
        assert_eq!(mask.len(), v.len());
        for (x, m) in v.data_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(v, Op::MulMask { a, mask })
    }

    /// Mean of -log softmax(logits[r])[labels[r]] over rows with active[r].
    /// Value is 0 when no row is active.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        labels: Vec<usize>,
        active: Vec<bool>,
    ) -> NodeId {
        let l = self.value(logits);
        assert_eq!(labels.len(), l.rows());
        assert_eq!(active.len(), l.rows());
        let n_active = active.iter().filter(|&&a| a).count();
        let mut total = 0.0;
        let mut probs = vec![0.0; l.cols()];
        for r in 0..l.rows() {
            if active[r] {
                softmax_into(l.row(r), &mut probs);
                total -= probs[labels[r]].max(f64::MIN_POSITIVE).ln();
            }
        }
        let value = if n_active == 0 { 0.0 } else { total / n_active as f64 };
        self.push(Tensor::scalar(value), Op::CrossEntropyRows { logits, labels, active })
    }

    /// Mean over all m*m cells of the class cross-entropy; see [`Op`].
    pub fn cell_cross_entropy(
        &mut self,
        scores: NodeId,
        labels: Vec<usize>,
        classes: usize,
    ) -> NodeId {
        let s = self.value(scores);
        let m = s.cols();
        assert_eq!(s.rows(), m * classes, "scores must be [m*classes, m]");
        assert_eq!(labels.len(), m * m);
        let mut column = vec![0.0; classes];
        let mut probs = vec![0.0; classes];
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                for k in 0..classes {
                    column[k] = s.get2(i * classes + k, j);
                }
                softmax_into(&column, &mut probs);
                total -= probs[labels[i * m + j]].max(f64::MIN_POSITIVE).ln();
            }
        }
        let value = total / (m * m) as f64;
        self.push(Tensor::scalar(value), Op::CellCrossEntropy { scores, labels, classes })
    }

    /// Runs reverse-mode accumulation from `root` (a scalar). Returns one
    /// gradient slot per node; untouched nodes are `None`.
    pub fn backward(&self, root: NodeId) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        for id in (0..=root).rev() {
            let Some(grad) = grads[id].take() else { continue };
            self.accumulate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        grads
    }

    fn grad_slot<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        id: NodeId,
    ) -> &'a mut Tensor {
        if grads[id].is_none() {
            grads[id] = Some(Tensor::zeros(self.value(id).shape()));
        }
        grads[id].as_mut().unwrap()
    }

    fn accumulate(&self, id: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                dy.matmul_bt_acc(vb, self.grad_slot(grads, *a));
                va.matmul_at_acc(dy, self.grad_slot(grads, *b));
            }
            Op::MatmulBt { a, b } => {
                // y = a b^T: da += dy b ; db += dy^T a
                let (va, vb) = (self.value(*a), self.value(*b));
                dy.matmul_acc(vb, self.grad_slot(grads, *a));
                dy.matmul_at_acc(va, self.grad_slot(grads, *b));
            }
            Op::Add { a, b } => {
                self.grad_slot(grads, *a).add_in_place(dy);
                self.grad_slot(grads, *b).add_in_place(dy);
            }
            Op::AddRow { a, row } => {
                self.grad_slot(grads, *a).add_in_place(dy);
                let c = dy.cols();
                let slot = self.grad_slot(grads, *row);
                for r in 0..dy.rows() {
                    for j in 0..c {
                        slot.data_mut()[j] += dy.row(r)[j];
                    }
                }
            }
            Op::Scale { a, c } => {
                let mut d = dy.clone();
                d.scale_in_place(*c);
                self.grad_slot(grads, *a).add_in_place(&d);
            }
            Op::Relu { a } => {
                let input = self.value(*a);
                let slot = self.grad_slot(grads, *a);
                for (i, (&x, &g)) in input.data().iter().zip(dy.data()).enumerate() {
                    if x > 0.0 {
                        slot.data_mut()[i] += g;
                    }
                }
            }
            Op::Gelu { a } => {
                let input = self.value(*a);
                let slot = self.grad_slot(grads, *a);
                for (i, (&x, &g)) in input.data().iter().zip(dy.data()).enumerate() {
                    slot.data_mut()[i] += g * gelu_bwd(x);
                }
            }
            Op::SoftmaxRows { a } => {
                let y = self.value(id);
                let slot = self.grad_slot(grads, *a);
                let c = y.cols();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dr = dy.row(r);
                    let dot: f64 = yr.iter().zip(dr).map(|(p, g)| p * g).sum();
                    let out = slot.row_mut(r);
                    for j in 0..c {
                        out[j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let src = self.value(*x);
                let (n, c) = (src.rows(), src.cols());
                let g = self.value(*gamma).data().to_vec();
                for r in 0..n {
                    let row = src.row(r);
                    let dyr = dy.row(r).to_vec();
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + EPS_LN).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    // d gamma / d beta
                    {
                        let slot = self.grad_slot(grads, *gamma);
                        for j in 0..c {
                            slot.data_mut()[j] += dyr[j] * xhat[j];
                        }
                    }
                    {
                        let slot = self.grad_slot(grads, *beta);
                        for j in 0..c {
                            slot.data_mut()[j] += dyr[j];
                        }
                    }
                    // d x
                    let dxhat: Vec<f64> = (0..c).map(|j| dyr[j] * g[j]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    let slot = self.grad_slot(grads, *x);
                    let out = slot.row_mut(r);
                    for j in 0..c {
                        out[j] += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
            }
            Op::GatherRows { src, indices } => {
                let slot = self.grad_slot(grads, *src);
                for (r, &idx) in indices.iter().enumerate() {
                    if idx >= 0 {
                        let dst = slot.row_mut(idx as usize);
                        for (d, g) in dst.iter_mut().zip(dy.row(r)) {
                            *d += g;
                        }
                    }
                }
            }
            Op::ColSlice { a, from, to } => {
                let slot = self.grad_slot(grads, *a);
                for r in 0..dy.rows() {
                    let dst = &mut slot.row_mut(r)[*from..*to];
                    for (d, g) in dst.iter_mut().zip(dy.row(r)) {
                        *d += g;
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let offsets: Vec<(NodeId, usize, usize)> = {
                    let mut at = 0;
                    parts
                        .iter()
                        .map(|&p| {
                            let c = self.value(p).cols();
                            let o = (p, at, c);
                            at += c;
                            o
                        })
                        .collect()
                };
                for (p, at, c) in offsets {
                    let slot = self.grad_slot(grads, p);
                    for r in 0..dy.rows() {
                        let src = &dy.row(r)[at..at + c];
                        for (d, g) in slot.row_mut(r).iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                let shape = self.value(*a).shape().to_vec();
                let d = dy.reshaped(&shape);
                self.grad_slot(grads, *a).add_in_place(&d);
            }
            Op::RowSelect { a, b, use_b } => {
                for (r, &sel) in use_b.iter().enumerate() {
                    let slot = self.grad_slot(grads, if sel { *b } else { *a });
                    for (d, g) in slot.row_mut(r).iter_mut().zip(dy.row(r)) {
                        *d += g;
                    }
                }
            }
            Op::MulMask { a, mask } => {
                let slot = self.grad_slot(grads, *a);
                for (i, (g, m)) in dy.data().iter().zip(mask).enumerate() {
                    slot.data_mut()[i] += g * m;
                }
            }
            Op::CrossEntropyRows { logits, labels, active } => {
                let up = dy.item();
                let l = self.value(*logits);
                let n_active = active.iter().filter(|&&a| a).count();
                if n_active == 0 {
                    return;
                }
                let scale = up / n_active as f64;
                let mut probs = vec![0.0; l.cols()];
                let slot = self.grad_slot(grads, *logits);
                for r in 0..l.rows() {
                    if !active[r] {
                        continue;
                    }
                    softmax_into(l.row(r), &mut probs);
                    let out = slot.row_mut(r);
                    for j in 0..probs.len() {
                        let indicator = if j == labels[r] { 1.0 } else { 0.0 };
                        out[j] += scale * (probs[j] - indicator);
                    }
                }
            }
            Op::CellCrossEntropy { scores, labels, classes } => {
                let up = dy.item();
                let s = self.value(*scores);
                let m = s.cols();
                let scale = up / (m * m) as f64;
                let mut column = vec![0.0; *classes];
                let mut probs = vec![0.0; *classes];
                let slot = self.grad_slot(grads, *scores);
                let cols = slot.cols();
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..*classes {
                            column[k] = s.get2(i * classes + k, j);
                        }
                        softmax_into(&column, &mut probs);
                        let label = labels[i * m + j];
                        for k in 0..*classes {
                            let indicator = if k == label { 1.0 } else { 0.0 };
                            slot.data_mut()[(i * classes + k) * cols + j] +=
                                scale * (probs[k] - indicator);
                        }
                    }
                }
            }
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

/// Tanh-approximated GELU; smooth, so finite differences stay valid
/// everywhere.
pub(crate) fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_bwd(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
