//! Reverse-mode autodiff over an operation record.
//!
//! Ops execute eagerly and append themselves to the record, so node ids are
//! already a topological order; the backward pass walks ids in reverse and
//! accumulates adjoints. Nodes the loss never reached keep a zero adjoint.

use super::tensor::{
    axpy, dot, log_softmax_pick_f64, matmul, matmul_nt, matmul_tn, softmax_inplace, Scalar,
    Tensor,
};
use super::NnError;

pub type NodeId = usize;
pub type ParamId = usize;

const LN_EPS: f64 = 1e-5;

/// Primitive operations the record understands.
#[derive(Debug)]
pub enum Op {
    /// Leaf snapshot of one model parameter.
    Param(ParamId),
    /// Leaf constant.
    Const,
    /// `[m,k] @ [k,n]`
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise same-shape add.
    Add { a: NodeId, b: NodeId },
    /// Row gather: `out[i] = table[ids[i]]`.
    GatherRows { table: NodeId, ids: Vec<u32> },
    /// Row-wise layer normalization with gain and offset.
    LayerNorm { x: NodeId, gain: NodeId, offset: NodeId },
    /// Elementwise GELU (tanh form).
    Gelu { x: NodeId },
    /// Multi-head attention: query row `i` attends to key/value rows
    /// `0..=offset+i`. With `offset = 0` this is plain causal
    /// self-attention; a nonzero offset lets suffix rows attend across a
    /// shared prefix.
    MaskedAttend { q: NodeId, k: NodeId, v: NodeId, n_heads: usize, offset: usize },
    /// Vertical stack of two matrices with equal column counts.
    ConcatRows { a: NodeId, b: NodeId },
    /// Scalar: sum over (row, token) picks of `-log softmax(logits[row])[token]`.
    NllPick { logits: NodeId, targets: Vec<(usize, u32)> },
    /// `x * c` elementwise.
    Scale { x: NodeId, c: f64 },
    /// Scalar: sum of squares of all elements of `x`.
    SquareSum { x: NodeId },
    /// Scalar sum of scalar nodes.
    SumScalars { xs: Vec<NodeId> },
    /// Scalar hinge ranking loss: sum over reward-ordered pairs of
    /// `max(0, score_low - score_high)`.
    RankHinge { scores: Vec<NodeId>, rewards: Vec<u8> },
}

enum Aux<E> {
    None,
    LayerNorm { mean: Vec<E>, rstd: Vec<E> },
    Attn { probs: Tensor<E> },
    Gelu { tanh_u: Vec<E> },
}

struct Node<E> {
    op: Op,
    value: Tensor<E>,
    adjoint: Option<Tensor<E>>,
    aux: Aux<E>,
}

/// Gradients shape-matching a parameter set, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct GradientSet<E> {
    pub tensors: Vec<Tensor<E>>,
}

impl<E: Scalar> GradientSet<E> {
    pub fn zeros(shapes: &[Vec<usize>]) -> Self {
        GradientSet { tensors: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect() }
    }

    pub fn add_assign(&mut self, other: &GradientSet<E>) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data().iter()) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, c: E) {
        for t in self.tensors.iter_mut() {
            for x in t.data_mut() {
                *x = *x * c;
            }
        }
    }

    pub fn global_norm_f64(&self) -> f64 {
        self.tensors.iter().map(|t| t.sq_norm_f64()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

/// The operation record: an eager tape of primitive ops with cached forward
/// values and per-node adjoint slots.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor<E>, aux: Aux<E>) -> NodeId {
        self.nodes.push(Node { op, value, adjoint: None, aux });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.push(Op::Const, value, Aux::None)
    }

    pub fn param(&mut self, pid: ParamId, value: Tensor<E>) -> NodeId {
        self.push(Op::Param(pid), value, Aux::None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(Op::MatMul { a, b }, value, Aux::None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data().iter()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(data, va.shape().to_vec());
        self.push(Op::Add { a, b }, value, Aux::None)
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        let t = &self.nodes[table].value;
        let c = t.cols();
        let mut value = Tensor::zeros(vec![ids.len(), c]);
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(t.row(id as usize));
        }
        self.push(Op::GatherRows { table, ids: ids.to_vec() }, value, Aux::None)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, offset: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gain].value;
        let b = &self.nodes[offset].value;
        let (rows, cols) = (xv.rows(), xv.cols());
        assert_eq!(g.len(), cols);
        assert_eq!(b.len(), cols);
        let inv_n = E::from_f64(1.0 / cols as f64);
        let eps = E::from_f64(LN_EPS);
        let mut value = Tensor::zeros(vec![rows, cols]);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mut m = E::zero();
            for &v in row {
                m = m + v;
            }
            m = m * inv_n;
            let mut var = E::zero();
            for &v in row {
                let d = v - m;
                var = var + d * d;
            }
            var = var * inv_n;
            let r = (var + eps).sqrt().recip();
            let out = value.row_mut(i);
            for ((o, &v), (&gv, &bv)) in
                out.iter_mut().zip(row.iter()).zip(g.data().iter().zip(b.data().iter()))
            {
                *o = (v - m) * r * gv + bv;
            }
            mean.push(m);
            rstd.push(r);
        }
        self.push(Op::LayerNorm { x, gain, offset }, value, Aux::LayerNorm { mean, rstd })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut tanh_u = Vec::with_capacity(xv.len());
        let data = xv
            .data()
            .iter()
            .map(|&v| {
                let (y, t) = gelu_fwd(v);
                tanh_u.push(t);
                y
            })
            .collect();
        let value = Tensor::new(data, xv.shape().to_vec());
        self.push(Op::Gelu { x }, value, Aux::Gelu { tanh_u })
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.cols(), vb.cols(), "concat_rows column mismatch");
        let mut data = Vec::with_capacity(va.len() + vb.len());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let value = Tensor::new(data, vec![va.rows() + vb.rows(), va.cols()]);
        self.push(Op::ConcatRows { a, b }, value, Aux::None)
    }

    /// Query row `i` attends over key/value rows `0..=offset+i`.
    pub fn masked_attend(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        n_heads: usize,
        offset: usize,
    ) -> NodeId {
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let (s, d) = (qv.rows(), qv.cols());
        let total = kv.rows();
        assert_eq!(d % n_heads, 0, "d_model must divide by head count");
        assert_eq!(kv.shape(), vv.shape(), "key/value shapes must match");
        assert!(offset + s <= total, "keys must cover offset + queries");
        let hd = d / n_heads;
        let scale = E::from_f64(1.0 / (hd as f64).sqrt());

        // probs rows are packed head-major: row h*s+i holds the attention of
        // query i in head h over key rows 0..=offset+i.
        let mut probs = Tensor::zeros(vec![n_heads * s, total]);
        let mut ctx = Tensor::zeros(vec![s, d]);
        for h in 0..n_heads {
            let lo = h * hd;
            let hi = lo + hd;
            for i in 0..s {
                let span = offset + i + 1;
                let qrow = &qv.row(i)[lo..hi];
                let prow = probs.row_mut(h * s + i);
                for (j, p) in prow.iter_mut().enumerate().take(span) {
                    *p = dot(qrow, &kv.row(j)[lo..hi]) * scale;
                }
                softmax_inplace(&mut prow[..span]);
            }
            for i in 0..s {
                let span = offset + i + 1;
                for j in 0..span {
                    let p = probs.row(h * s + i)[j];
                    let vrow = &vv.row(j)[lo..hi];
                    let crow = &mut ctx.row_mut(i)[lo..hi];
                    axpy(p, vrow, crow);
                }
            }
        }
        self.push(Op::MaskedAttend { q, k, v, n_heads, offset }, ctx, Aux::Attn { probs })
    }

    /// Sum of `-log p(token | row)` over the picks, accumulated in f64.
    pub fn nll_pick(&mut self, logits: NodeId, targets: Vec<(usize, u32)>) -> NodeId {
        let lv = &self.nodes[logits].value;
        let mut sum = 0.0f64;
        for &(row, tok) in &targets {
            let (logprob, _) = log_softmax_pick_f64(lv.row(row), tok as usize);
            sum -= logprob;
        }
        self.push(Op::NllPick { logits, targets }, Tensor::scalar(E::from_f64(sum)), Aux::None)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let cc = E::from_f64(c);
        let data = xv.data().iter().map(|&v| v * cc).collect();
        let value = Tensor::new(data, xv.shape().to_vec());
        self.push(Op::Scale { x, c }, value, Aux::None)
    }

    pub fn square_sum(&mut self, x: NodeId) -> NodeId {
        let sum: f64 = self.nodes[x].value.data().iter().map(|&v| v.as_f64() * v.as_f64()).sum();
        self.push(Op::SquareSum { x }, Tensor::scalar(E::from_f64(sum)), Aux::None)
    }

    pub fn sum_scalars(&mut self, xs: Vec<NodeId>) -> NodeId {
        let mut sum = 0.0f64;
        for &id in &xs {
            sum += self.nodes[id].value.item().as_f64();
        }
        self.push(Op::SumScalars { xs }, Tensor::scalar(E::from_f64(sum)), Aux::None)
    }

    /// Hinge ranking loss over scalar score nodes; pairs with equal reward
    /// levels contribute nothing.
    pub fn rank_hinge(&mut self, scores: Vec<NodeId>, rewards: Vec<u8>) -> Result<NodeId, NnError> {
        if scores.len() < 2 {
            return Err(NnError::Contract(format!(
                "ranking loss needs at least 2 candidates, got {}",
                scores.len()
            )));
        }
        assert_eq!(scores.len(), rewards.len());
        let vals: Vec<f64> = scores.iter().map(|&id| self.nodes[id].value.item().as_f64()).collect();
        let mut sum = 0.0f64;
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if rewards[i] < rewards[j] {
                    sum += (vals[i] - vals[j]).max(0.0);
                }
            }
        }
        Ok(self.push(Op::RankHinge { scores, rewards }, Tensor::scalar(E::from_f64(sum)), Aux::None))
    }

    fn add_adjoint(&mut self, id: NodeId, delta: Tensor<E>) {
        let node = &mut self.nodes[id];
        match node.adjoint.as_mut() {
            Some(a) => {
                for (x, &y) in a.data_mut().iter_mut().zip(delta.data().iter()) {
                    *x = *x + y;
                }
            }
            None => node.adjoint = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss node. Returns gradients for every
    /// parameter leaf; parameters the loss never touched get zero tensors.
    pub fn backward(
        &mut self,
        loss: NodeId,
        param_shapes: &[Vec<usize>],
    ) -> Result<GradientSet<E>, NnError> {
        if !self.nodes[loss].value.is_scalar_shape() {
            return Err(NnError::Contract(format!(
                "backward expects a scalar loss node, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let mut grads = GradientSet::zeros(param_shapes);
        self.nodes[loss].adjoint = Some(Tensor::scalar(E::one()));

        for id in (0..=loss).rev() {
            let Some(adj) = self.nodes[id].adjoint.take() else { continue };
            // Dispatch on op; each arm pushes adjoints to the op's inputs.
            match std::mem::replace(&mut self.nodes[id].op, Op::Const) {
                Op::Const => {
                    self.nodes[id].op = Op::Const;
                }
                Op::Param(pid) => {
                    self.nodes[id].op = Op::Param(pid);
                    let g = &mut grads.tensors[pid];
                    assert_eq!(g.shape(), adj.shape(), "parameter grad shape");
                    for (x, &y) in g.data_mut().iter_mut().zip(adj.data().iter()) {
                        *x = *x + y;
                    }
                }
                op @ Op::MatMul { a, b } => {
                    let da = matmul_nt(&adj, &self.nodes[b].value);
                    let db = matmul_tn(&self.nodes[a].value, &adj);
                    self.add_adjoint(a, da);
                    self.add_adjoint(b, db);
                    self.nodes[id].op = op;
                }
                op @ Op::Add { a, b } => {
                    self.add_adjoint(a, adj.clone());
                    self.add_adjoint(b, adj);
                    self.nodes[id].op = op;
                }
                Op::GatherRows { table, ids } => {
                    let mut dt = Tensor::zeros(self.nodes[table].value.shape().to_vec());
                    for (i, &tok) in ids.iter().enumerate() {
                        axpy(E::one(), adj.row(i), dt.row_mut(tok as usize));
                    }
                    self.add_adjoint(table, dt);
                    self.nodes[id].op = Op::GatherRows { table, ids };
                }
                op @ Op::LayerNorm { x, gain, offset } => {
                    let (dx, dg, db) = self.layer_norm_backward(id, x, gain, &adj);
                    self.add_adjoint(x, dx);
                    self.add_adjoint(gain, dg);
                    self.add_adjoint(offset, db);
                    self.nodes[id].op = op;
                }
                op @ Op::Gelu { x } => {
                    let Aux::Gelu { tanh_u } = &self.nodes[id].aux else {
                        unreachable!("gelu node must carry its aux")
                    };
                    let xv = &self.nodes[x].value;
                    let data = xv
                        .data()
                        .iter()
                        .zip(tanh_u.iter())
                        .zip(adj.data().iter())
                        .map(|((&v, &t), &a)| gelu_bwd(v, t) * a)
                        .collect();
                    let dx = Tensor::new(data, xv.shape().to_vec());
                    self.add_adjoint(x, dx);
                    self.nodes[id].op = op;
                }
                op @ Op::MaskedAttend { q, k, v, n_heads, offset } => {
                    let [dq, dk, dv] = self.attend_backward(id, q, k, v, n_heads, offset, &adj);
                    self.add_adjoint(q, dq);
                    self.add_adjoint(k, dk);
                    self.add_adjoint(v, dv);
                    self.nodes[id].op = op;
                }
                op @ Op::ConcatRows { a, b } => {
                    let rows_a = self.nodes[a].value.rows();
                    let cols = self.nodes[a].value.cols();
                    let (da_flat, db_flat) = adj.data().split_at(rows_a * cols);
                    let da = Tensor::new(da_flat.to_vec(), vec![rows_a, cols]);
                    let db =
                        Tensor::new(db_flat.to_vec(), vec![adj.rows() - rows_a, cols]);
                    self.add_adjoint(a, da);
                    self.add_adjoint(b, db);
                    self.nodes[id].op = op;
                }
                Op::NllPick { logits, targets } => {
                    let a = adj.item();
                    let lv = &self.nodes[logits].value;
                    let mut dl = Tensor::zeros(lv.shape().to_vec());
                    for &(row, tok) in &targets {
                        let (_, probs) = log_softmax_pick_f64(lv.row(row), tok as usize);
                        let drow = dl.row_mut(row);
                        for (j, p) in probs.iter().enumerate() {
                            let onehot = if j == tok as usize { 1.0 } else { 0.0 };
                            drow[j] = drow[j] + a * E::from_f64(p - onehot);
                        }
                    }
                    self.add_adjoint(logits, dl);
                    self.nodes[id].op = Op::NllPick { logits, targets };
                }
                op @ Op::Scale { x, c } => {
                    let cc = E::from_f64(c);
                    let data = adj.data().iter().map(|&v| v * cc).collect();
                    let dx = Tensor::new(data, adj.shape().to_vec());
                    self.add_adjoint(x, dx);
                    self.nodes[id].op = op;
                }
                op @ Op::SquareSum { x } => {
                    let a = adj.item();
                    let two = E::from_f64(2.0);
                    let xv = &self.nodes[x].value;
                    let data = xv.data().iter().map(|&v| two * v * a).collect();
                    let dx = Tensor::new(data, xv.shape().to_vec());
                    self.add_adjoint(x, dx);
                    self.nodes[id].op = op;
                }
                Op::SumScalars { xs } => {
                    for &xid in &xs {
                        self.add_adjoint(xid, adj.clone());
                    }
                    self.nodes[id].op = Op::SumScalars { xs };
                }
                Op::RankHinge { scores, rewards } => {
                    let a = adj.item();
                    let vals: Vec<f64> =
                        scores.iter().map(|&sid| self.nodes[sid].value.item().as_f64()).collect();
                    for i in 0..vals.len() {
                        for j in 0..vals.len() {
                            if rewards[i] < rewards[j] && vals[i] - vals[j] > 0.0 {
                                self.add_adjoint(scores[i], Tensor::scalar(a));
                                self.add_adjoint(scores[j], Tensor::scalar(-a));
                            }
                        }
                    }
                    self.nodes[id].op = Op::RankHinge { scores, rewards };
                }
            }
        }
        Ok(grads)
    }

    fn layer_norm_backward(
        &self,
        id: NodeId,
        x: NodeId,
        gain: NodeId,
        adj: &Tensor<E>,
    ) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
        let Aux::LayerNorm { mean, rstd } = &self.nodes[id].aux else {
            unreachable!("layer norm node must carry its aux")
        };
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gain].value;
        let (rows, cols) = (xv.rows(), xv.cols());
        let inv_n = E::from_f64(1.0 / cols as f64);
        let mut dx = Tensor::zeros(vec![rows, cols]);
        let mut dg = Tensor::zeros(vec![cols]);
        let mut db = Tensor::zeros(vec![cols]);
        let mut xhat = vec![E::zero(); cols];
        for i in 0..rows {
            let xrow = xv.row(i);
            let arow = adj.row(i);
            let (m, r) = (mean[i], rstd[i]);
            for (h, &v) in xhat.iter_mut().zip(xrow.iter()) {
                *h = (v - m) * r;
            }
            let mut s1 = E::zero(); // mean of dxhat
            let mut s2 = E::zero(); // mean of dxhat * xhat
            for ((&a, &gv), &h) in arow.iter().zip(g.data().iter()).zip(xhat.iter()) {
                let dxh = a * gv;
                s1 = s1 + dxh;
                s2 = s2 + dxh * h;
            }
            s1 = s1 * inv_n;
            s2 = s2 * inv_n;
            let dxrow = dx.row_mut(i);
            for (((o, &a), &gv), &h) in
                dxrow.iter_mut().zip(arow.iter()).zip(g.data().iter()).zip(xhat.iter())
            {
                let dxh = a * gv;
                *o = (dxh - s1 - h * s2) * r;
            }
            for ((gacc, bacc), (&a, &h)) in dg
                .data_mut()
                .iter_mut()
                .zip(db.data_mut().iter_mut())
                .zip(arow.iter().zip(xhat.iter()))
            {
                *gacc = *gacc + a * h;
                *bacc = *bacc + a;
            }
        }
        (dx, dg, db)
    }

    fn attend_backward(
        &self,
        id: NodeId,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        n_heads: usize,
        offset: usize,
        adj: &Tensor<E>,
    ) -> [Tensor<E>; 3] {
        let Aux::Attn { probs } = &self.nodes[id].aux else {
            unreachable!("attention node must carry its aux")
        };
        let qv = &self.nodes[q].value;
        let kv = &self.nodes[k].value;
        let vv = &self.nodes[v].value;
        let (s, d) = (qv.rows(), qv.cols());
        let total = kv.rows();
        let hd = d / n_heads;
        let scale = E::from_f64(1.0 / (hd as f64).sqrt());

        let mut dq = Tensor::zeros(vec![s, d]);
        let mut dk = Tensor::zeros(vec![total, d]);
        let mut dv = Tensor::zeros(vec![total, d]);
        let mut dprobs = vec![E::zero(); total];
        for h in 0..n_heads {
            let lo = h * hd;
            let hi = lo + hd;
            for i in 0..s {
                let span = offset + i + 1;
                let prow = probs.row(h * s + i);
                let drow = &adj.row(i)[lo..hi];
                for j in 0..span {
                    dprobs[j] = dot(drow, &vv.row(j)[lo..hi]);
                    axpy(prow[j], drow, &mut dv.row_mut(j)[lo..hi]);
                }
                let mut inner = E::zero();
                for j in 0..span {
                    inner = inner + prow[j] * dprobs[j];
                }
                for j in 0..span {
                    let ds = prow[j] * (dprobs[j] - inner) * scale;
                    axpy(ds, &kv.row(j)[lo..hi], &mut dq.row_mut(i)[lo..hi]);
                    axpy(ds, &qv.row(i)[lo..hi], &mut dk.row_mut(j)[lo..hi]);
                }
            }
        }
        [dq, dk, dv]
    }
}

fn gelu_fwd<E: Scalar>(x: E) -> (E, E) {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    (half * x * (E::one() + t), t)
}

fn gelu_bwd<E: Scalar>(x: E, t: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_2v() {
        let mut tape = Tape::<f64>::new();
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let p = tape.param(0, Tensor::new(v.clone(), vec![1, 4]));
        let loss = tape.square_sum(p);
        let grads = tape.backward(loss, &[vec![1, 4]]).expect("backward");
        for (gv, vv) in grads.tensors[0].data().iter().zip(v.iter()) {
            assert!((gv - 2.0 * vv).abs() < 1e-12, "grad {gv} vs 2v {}", 2.0 * vv);
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(0, Tensor::new(vec![1.0, 2.0], vec![1, 2]));
        let b = tape.param(1, Tensor::new(vec![3.0, 4.0], vec![2, 1]));
        let _unused = tape.param(2, Tensor::new(vec![9.0], vec![1, 1]));
        let loss = tape.matmul(a, b);
        let grads = tape
            .backward(loss, &[vec![1, 2], vec![2, 1], vec![1, 1]])
            .expect("backward");
        assert_eq!(grads.tensors[2].data(), &[0.0]);
        assert_ne!(grads.tensors[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(0, Tensor::new(vec![1.0, 2.0], vec![1, 2]));
        let err = tape.backward(a, &[vec![1, 2]]);
        assert!(matches!(err, Err(NnError::Contract(_))));
    }

    #[test]
    fn rank_hinge_matches_hand_values() {
        let mut tape = Tape::<f64>::new();
        let p0 = tape.constant(Tensor::scalar(-1.0));
        let p1 = tape.constant(Tensor::scalar(-2.0));
        // rewards (0, 1): the low-reward candidate outscores the high one.
        let loss = tape.rank_hinge(vec![p0, p1], vec![0, 1]).unwrap();
        assert!((tape.value(loss).item() - 1.0).abs() < 1e-12);

        let mut tape = Tape::<f64>::new();
        let p0 = tape.constant(Tensor::scalar(-2.0));
        let p1 = tape.constant(Tensor::scalar(-1.0));
        let loss = tape.rank_hinge(vec![p0, p1], vec![0, 1]).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn rank_hinge_needs_two_candidates() {
        let mut tape = Tape::<f64>::new();
        let p0 = tape.constant(Tensor::scalar(-1.0));
        assert!(tape.rank_hinge(vec![p0], vec![0]).is_err());
    }
}
