//! The gradient tape: forward ops append nodes, `backward` replays them in
//! reverse insertion order exactly once.

use std::collections::HashMap;
use std::sync::Arc;

use super::param::{GradBuffer, ParamId, ParamSet};
use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

enum Storage {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Storage {
    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(a) => a,
        }
    }
}

/// How an elementwise loss is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Op {
    Leaf,
    /// C = A·B, or A·Bᵀ when `trans_b`.
    Matmul { a: TensorId, b: TensorId, trans_b: bool },
    /// x[n,d] + bias[d] broadcast over rows.
    AddBias { x: TensorId, bias: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    Relu { x: TensorId },
    /// Row-wise softmax over the last axis.
    SoftmaxRows { x: TensorId },
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        // saved per-row statistics
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaxPoolRows { x: TensorId, argmax: Vec<usize> },
    ConcatCols { a: TensorId, b: TensorId },
    ConcatRows { parts: Vec<TensorId> },
    GatherRows { x: TensorId, idx: Vec<usize> },
    SliceRows { x: TensorId, start: usize },
    Reshape { x: TensorId },
    SumAll { x: TensorId },
    MeanAll { x: TensorId },
    SmoothL1 { pred: TensorId, target: TensorId, beta: f64, reduction: Reduction },
    CrossEntropyRow { logits: TensorId, probs: Vec<f64> },
    /// Per-query block attention over contiguous key ranges, multi-head,
    /// contiguous column chunks as heads. Saved weights are laid out per
    /// query as `n_heads * block_len` values.
    BlockAttention {
        q: TensorId,
        k: TensorId,
        v: TensorId,
        blocks: Vec<(usize, usize)>,
        n_heads: usize,
        weights: Vec<f64>,
        weight_offsets: Vec<usize>,
    },
}

struct Node {
    storage: Storage,
    shape: Vec<usize>,
    needs_grad: bool,
    op: Op,
}

/// Gradients per tape node, as produced by [`Tape::grads`].
pub struct TapeGrads {
    by_node: Vec<Option<Vec<f64>>>,
}

impl TapeGrads {
    /// Gradient of the loss w.r.t. the given node, if it was reached.
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.by_node[id.0].as_deref()
    }
}

/// Records a computation graph over dense f64 tensors.
///
/// Node inputs always have smaller indices than the node itself, so the
/// insertion order is a valid topological order and `backward` visits each
/// node exactly once, in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, TensorId)>,
    staged: HashMap<ParamId, TensorId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), bindings: Vec::new(), staged: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, storage: Storage, shape: Vec<usize>, needs_grad: bool, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { storage, shape, needs_grad, op });
        id
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].storage.as_slice()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].shape.iter().product()
    }

    /// Extract a detached copy of a node's value.
    pub fn value(&self, id: TensorId) -> Tensor {
        let node = &self.nodes[id.0];
        let mut t = Tensor::new(node.storage.as_slice().to_vec(), &node.shape).expect("node shape consistent");
        t.requires_grad = node.needs_grad;
        t.tape_id = Some(id.0);
        t
    }

    // ---- leaves ----------------------------------------------------------

    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<TensorId, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataShapeMismatch { shape: shape.to_vec(), data_len: data.len() });
        }
        Ok(self.push(Storage::Owned(data), shape.to_vec(), requires_grad, Op::Leaf))
    }

    /// Stage a detached tensor as a constant (no gradient).
    pub fn constant(&mut self, t: &Tensor) -> TensorId {
        self.push(Storage::Shared(t.shared_data()), t.shape().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// Stage a parameter as a differentiable leaf. Staging the same parameter
    /// twice returns the cached node, so its gradient accumulates once.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> TensorId {
        if let Some(&tid) = self.staged.get(&id) {
            return tid;
        }
        let p = set.get(id);
        let tid = self.push(Storage::Shared(p.value.shared_data()), p.value.shape().to_vec(), true, Op::Leaf);
        self.bindings.push((id, tid));
        self.staged.insert(id, tid);
        tid
    }

    // ---- ops -------------------------------------------------------------

    /// C[m,n] = A[m,k] · B[k,n], or A[m,k] · B[n,k]ᵀ when `trans_b`.
    pub fn matmul_ex(&mut self, a: TensorId, b: TensorId, trans_b: bool) -> Result<TensorId, TensorError> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() != 2 || bsh.len() != 2 {
            return Err(TensorError::DimMismatch { op: "matmul", left: ash, right: bsh });
        }
        let (m, k) = (ash[0], ash[1]);
        let (bk, n) = if trans_b { (bsh[1], bsh[0]) } else { (bsh[0], bsh[1]) };
        if k != bk {
            return Err(TensorError::DimMismatch { op: "matmul", left: ash, right: bsh });
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; m * n];
        if trans_b {
            for i in 0..m {
                let ar = &ad[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bd[j * k..(j + 1) * k];
                    let mut s = 0.0;
                    for p in 0..k {
                        s += ar[p] * br[p];
                    }
                    out[i * n + j] = s;
                }
            }
        } else {
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let br = &bd[p * n..(p + 1) * n];
                    let or = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        or[j] += av * br[j];
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Storage::Owned(out), vec![m, n], needs, Op::Matmul { a, b, trans_b }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.matmul_ex(a, b, false)
    }

    /// y = x·w (+ b). `x` may be 1-D (`[in]`) or 2-D (`[*, in]`).
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: Option<TensorId>) -> Result<TensorId, TensorError> {
        let xsh = self.shape(x).to_vec();
        let x2 = if xsh.len() == 1 { self.reshape(x, &[1, xsh[0]])? } else { x };
        let mut y = self.matmul(x2, w)?;
        if let Some(bias) = b {
            y = self.add_bias(y, bias)?;
        }
        if xsh.len() == 1 {
            let out = self.shape(y)[1];
            y = self.reshape(y, &[out])?;
        }
        Ok(y)
    }

    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let xsh = self.shape(x).to_vec();
        let bsh = self.shape(bias).to_vec();
        let d = *xsh.last().unwrap_or(&0);
        if bsh.len() != 1 || bsh[0] != d {
            return Err(TensorError::DimMismatch { op: "add_bias", left: xsh, right: bsh });
        }
        let xd = self.data(x);
        let bd = self.data(bias);
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(d) {
            for (v, b) in row.iter().zip(bd) {
                out.push(v + b);
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Storage::Owned(out), xsh, needs, Op::AddBias { x, bias }))
    }

    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash != bsh {
            return Err(TensorError::DimMismatch { op: op_name, left: ash, right: bsh });
        }
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Storage::Owned(out), ash, needs, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Storage::Owned(out), shape, needs, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Storage::Owned(out), shape, needs, Op::Relu { x })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::EmptyInput { op: "softmax" })?;
        if d == 0 {
            return Err(TensorError::EmptyInput { op: "softmax" });
        }
        let xd = self.data(x);
        if xd.iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let mut out = Vec::with_capacity(xd.len());
        for row in xd.chunks_exact(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / sum));
        }
        let needs = self.needs(x);
        Ok(self.push(Storage::Owned(out), shape, needs, Op::SoftmaxRows { x }))
    }

    /// Layer normalization over the last axis followed by the affine map
    /// `gamma * x_hat + beta`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::EmptyInput { op: "layer_norm" })?;
        if d == 0 {
            return Err(TensorError::EmptyInput { op: "layer_norm" });
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::DimMismatch {
                op: "layer_norm",
                left: shape,
                right: self.shape(gamma).to_vec(),
            });
        }
        let xd = self.data(x);
        let g = self.data(gamma).to_vec();
        let bt = self.data(beta).to_vec();
        let rows = xd.len() / d;
        let mut out = Vec::with_capacity(xd.len());
        let mut means = Vec::with_capacity(rows);
        let mut inv_stds = Vec::with_capacity(rows);
        for row in xd.chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means.push(mean);
            inv_stds.push(inv_std);
            for (i, v) in row.iter().enumerate() {
                out.push((v - mean) * inv_std * g[i] + bt[i]);
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Storage::Owned(out),
            shape,
            needs,
            Op::LayerNorm { x, gamma, beta, mean: means, inv_std: inv_stds },
        ))
    }

    /// Column-wise max over the rows of a `[n, d]` tensor. Ties go to the
    /// lowest row index; the gradient is routed to the argmax entries only.
    pub fn max_pool_rows(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (id, _) = self.max_pool_rows_with_indices(x)?;
        Ok(id)
    }

    pub fn max_pool_rows_with_indices(&mut self, x: TensorId) -> Result<(TensorId, Vec<usize>), TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::DimMismatch { op: "max_pool_rows", left: shape, right: vec![] });
        }
        let (n, d) = (shape[0], shape[1]);
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "max_pool_rows" });
        }
        let xd = self.data(x);
        let mut out = xd[..d].to_vec();
        let mut argmax = vec![0usize; d];
        for i in 1..n {
            for c in 0..d {
                let v = xd[i * d + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = i;
                }
            }
        }
        let needs = self.needs(x);
        let id = self.push(Storage::Owned(out), vec![d], needs, Op::MaxPoolRows { x, argmax: argmax.clone() });
        Ok((id, argmax))
    }

    /// Concatenate along the last axis: `[n,da] ++ [n,db] -> [n,da+db]`.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[0] != bsh[0] {
            return Err(TensorError::DimMismatch { op: "concat_cols", left: ash, right: bsh });
        }
        let (n, da, db) = (ash[0], ash[1], bsh[1]);
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            out.extend_from_slice(&ad[i * da..(i + 1) * da]);
            out.extend_from_slice(&bd[i * db..(i + 1) * db]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Storage::Owned(out), vec![n, da + db], needs, Op::ConcatCols { a, b }))
    }

    /// Stack 2-D blocks (or 1-D rows) sharing a column count into one matrix.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_rows" });
        }
        let d = *self.shape(parts[0]).last().unwrap();
        let mut out = Vec::new();
        let mut rows = 0usize;
        let mut needs = false;
        for &p in parts {
            let sh = self.shape(p);
            let last = *sh.last().unwrap();
            if last != d || sh.len() > 2 {
                return Err(TensorError::DimMismatch { op: "concat_rows", left: vec![rows, d], right: sh.to_vec() });
            }
            rows += if sh.len() == 1 { 1 } else { sh[0] };
            out.extend_from_slice(self.data(p));
            needs |= self.needs(p);
        }
        Ok(self.push(Storage::Owned(out), vec![rows, d], needs, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// Select rows of a `[n,d]` tensor by index; repeats are allowed and the
    /// backward pass scatter-adds into the source rows.
    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::DimMismatch { op: "gather_rows", left: shape, right: vec![] });
        }
        let (n, d) = (shape[0], shape[1]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < n, "gather_rows: index {i} out of bounds for {n} rows");
            out.extend_from_slice(&xd[i * d..(i + 1) * d]);
        }
        let needs = self.needs(x);
        Ok(self.push(Storage::Owned(out), vec![idx.len(), d], needs, Op::GatherRows { x, idx: idx.to_vec() }))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || start + len > shape[0] {
            return Err(TensorError::DimMismatch { op: "slice_rows", left: shape, right: vec![start, len] });
        }
        let d = shape[1];
        let out = self.data(x)[start * d..(start + len) * d].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Storage::Owned(out), vec![len, d], needs, Op::SliceRows { x, start }))
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId, TensorError> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel(x) {
            return Err(TensorError::DimMismatch { op: "reshape", left: self.shape(x).to_vec(), right: new_shape.to_vec() });
        }
        let out = self.data(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Storage::Owned(out), new_shape.to_vec(), needs, Op::Reshape { x }))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push(Storage::Owned(vec![s]), vec![1], needs, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.numel(x).max(1) as f64;
        let s: f64 = self.data(x).iter().sum::<f64>() / n;
        let needs = self.needs(x);
        self.push(Storage::Owned(vec![s]), vec![1], needs, Op::MeanAll { x })
    }

    /// Smooth L1 (Huber) loss reduced over all elements.
    pub fn smooth_l1(
        &mut self,
        pred: TensorId,
        target: TensorId,
        beta: f64,
        reduction: Reduction,
    ) -> Result<TensorId, TensorError> {
        let (psh, tsh) = (self.shape(pred).to_vec(), self.shape(target).to_vec());
        if psh != tsh {
            return Err(TensorError::DimMismatch { op: "smooth_l1", left: psh, right: tsh });
        }
        if beta <= 0.0 {
            return Err(TensorError::InvalidHyper { what: format!("smooth_l1 beta must be > 0, got {beta}") });
        }
        let pd = self.data(pred);
        let td = self.data(target);
        let mut total = 0.0;
        for (p, t) in pd.iter().zip(td) {
            let e = p - t;
            total += if e.abs() < beta { 0.5 * e * e / beta } else { e.abs() - 0.5 * beta };
        }
        if reduction == Reduction::Mean {
            total /= pd.len().max(1) as f64;
        }
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Storage::Owned(vec![total]), vec![1], needs, Op::SmoothL1 { pred, target, beta, reduction }))
    }

    /// Cross entropy of one logit row against a target class index.
    pub fn cross_entropy_row(&mut self, logits: TensorId, target: usize) -> Result<TensorId, TensorError> {
        let shape = self.shape(logits).to_vec();
        let n = self.numel(logits);
        if target >= n {
            return Err(TensorError::DimMismatch { op: "cross_entropy", left: shape, right: vec![target] });
        }
        let xd = self.data(logits);
        let m = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xd.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let loss = sum.ln() + m - xd[target];
        let mut probs_signed = probs;
        probs_signed[target] -= 1.0;
        let needs = self.needs(logits);
        Ok(self.push(
            Storage::Owned(vec![loss]),
            vec![1],
            needs,
            Op::CrossEntropyRow { logits, probs: probs_signed },
        ))
    }

    /// Multi-head scaled dot-product attention where query `i` attends to the
    /// contiguous key rows `blocks[i]`. Heads are contiguous column chunks of
    /// `q`/`k` (and of `v` for the output); scores use `1/sqrt(dq/n_heads)`.
    pub fn block_attention(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
        blocks: &[(usize, usize)],
        n_heads: usize,
    ) -> Result<TensorId, TensorError> {
        let qsh = self.shape(q).to_vec();
        let ksh = self.shape(k).to_vec();
        let vsh = self.shape(v).to_vec();
        if qsh.len() != 2 || ksh.len() != 2 || vsh.len() != 2 || qsh[1] != ksh[1] || ksh[0] != vsh[0] {
            return Err(TensorError::DimMismatch { op: "block_attention", left: qsh, right: ksh });
        }
        let (nq, dq) = (qsh[0], qsh[1]);
        let dv = vsh[1];
        if blocks.len() != nq || n_heads == 0 || !dq.is_multiple_of(n_heads) || !dv.is_multiple_of(n_heads) {
            return Err(TensorError::DimMismatch { op: "block_attention", left: vec![nq, dq, dv, n_heads], right: vec![blocks.len()] });
        }
        for &(s, l) in blocks {
            if l == 0 {
                return Err(TensorError::EmptyInput { op: "block_attention" });
            }
            if s + l > ksh[0] {
                return Err(TensorError::DimMismatch { op: "block_attention", left: ksh, right: vec![s, l] });
            }
        }
        let dqh = dq / n_heads;
        let dvh = dv / n_heads;
        let scale = 1.0 / (dqh as f64).sqrt();
        let qd = self.data(q);
        let kd = self.data(k);
        let vd = self.data(v);

        let mut out = vec![0.0; nq * dv];
        let mut weights = Vec::new();
        let mut weight_offsets = Vec::with_capacity(nq + 1);
        let mut scores = Vec::new();
        for (i, &(s, l)) in blocks.iter().enumerate() {
            weight_offsets.push(weights.len());
            let qrow = &qd[i * dq..(i + 1) * dq];
            for h in 0..n_heads {
                let qh = &qrow[h * dqh..(h + 1) * dqh];
                scores.clear();
                scores.reserve(l);
                let mut max = f64::NEG_INFINITY;
                for j in 0..l {
                    let krow = &kd[(s + j) * dq + h * dqh..(s + j) * dq + (h + 1) * dqh];
                    let mut dot = 0.0;
                    for c in 0..dqh {
                        dot += qh[c] * krow[c];
                    }
                    let sc = dot * scale;
                    if sc > max {
                        max = sc;
                    }
                    scores.push(sc);
                }
                let mut denom = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    denom += *sc;
                }
                let orow = &mut out[i * dv + h * dvh..i * dv + (h + 1) * dvh];
                for j in 0..l {
                    let w = scores[j] / denom;
                    weights.push(w);
                    let vrow = &vd[(s + j) * dv + h * dvh..(s + j) * dv + (h + 1) * dvh];
                    for c in 0..dvh {
                        orow[c] += w * vrow[c];
                    }
                }
            }
        }
        weight_offsets.push(weights.len());
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            Storage::Owned(out),
            vec![nq, dv],
            needs,
            Op::BlockAttention { q, k, v, blocks: blocks.to_vec(), n_heads, weights, weight_offsets },
        ))
    }

    /// Saved attention weights of a `block_attention` node, flattened per
    /// query as `n_heads * block_len` entries.
    pub fn attention_weights(&self, id: TensorId) -> Option<(&[f64], &[usize])> {
        match &self.nodes[id.0].op {
            Op::BlockAttention { weights, weight_offsets, .. } => Some((weights, weight_offsets)),
            _ => None,
        }
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss; returns per-node gradients.
    pub fn grads(&self, loss: TensorId) -> Result<TapeGrads, TensorError> {
        if self.numel(loss) != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut by_node: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        by_node[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if by_node[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let gout = by_node[i].take().expect("present");
            self.backprop_node(i, &gout, &mut by_node);
            by_node[i] = Some(gout);
        }
        Ok(TapeGrads { by_node })
    }

    /// Gradients of the loss w.r.t. every parameter staged on this tape,
    /// keyed by parameter slot.
    pub fn param_grads(&self, loss: TensorId, set: &ParamSet) -> Result<GradBuffer, TensorError> {
        let grads = self.grads(loss)?;
        let mut buf = GradBuffer::zeros_like(set);
        for &(pid, tid) in &self.bindings {
            if let Some(g) = grads.get(tid) {
                buf.add_to(pid, g);
            }
        }
        Ok(buf)
    }

    /// Accumulate parameter gradients directly into the set. Repeated calls
    /// without `zero_grads` keep accumulating.
    pub fn backward(&self, loss: TensorId, set: &mut ParamSet) -> Result<(), TensorError> {
        let buf = self.param_grads(loss, set)?;
        set.accumulate(&buf);
        Ok(())
    }

    fn add_grad(&self, slot: &mut Option<Vec<f64>>, id: TensorId, contrib: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let g = slot.get_or_insert_with(|| vec![0.0; self.numel(id)]);
        contrib(g);
    }

    fn backprop_node(&self, i: usize, gout: &[f64], by: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b, trans_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.shape[1];
                let ad = self.data(*a);
                let bd = self.data(*b);
                if *trans_b {
                    // C = A·Bᵀ with B[n,k]: dA = dC·B ; dB = dCᵀ·A
                    let (mut ga, mut gb) = (by[a.0].take(), by[b.0].take());
                    self.add_grad(&mut ga, *a, |g| {
                        for i0 in 0..m {
                            for j in 0..n {
                                let go = gout[i0 * n + j];
                                if go == 0.0 {
                                    continue;
                                }
                                let br = &bd[j * k..(j + 1) * k];
                                let gr = &mut g[i0 * k..(i0 + 1) * k];
                                for p in 0..k {
                                    gr[p] += go * br[p];
                                }
                            }
                        }
                    });
                    self.add_grad(&mut gb, *b, |g| {
                        for i0 in 0..m {
                            let ar = &ad[i0 * k..(i0 + 1) * k];
                            for j in 0..n {
                                let go = gout[i0 * n + j];
                                if go == 0.0 {
                                    continue;
                                }
                                let gr = &mut g[j * k..(j + 1) * k];
                                for p in 0..k {
                                    gr[p] += go * ar[p];
                                }
                            }
                        }
                    });
                    by[a.0] = ga;
                    by[b.0] = gb;
                } else {
                    // dA = dC·Bᵀ ; dB = Aᵀ·dC
                    let (mut ga, mut gb) = (by[a.0].take(), by[b.0].take());
                    self.add_grad(&mut ga, *a, |g| {
                        for i0 in 0..m {
                            let gr = &gout[i0 * n..(i0 + 1) * n];
                            let gar = &mut g[i0 * k..(i0 + 1) * k];
                            for p in 0..k {
                                let br = &bd[p * n..(p + 1) * n];
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gr[j] * br[j];
                                }
                                gar[p] += s;
                            }
                        }
                    });
                    self.add_grad(&mut gb, *b, |g| {
                        for i0 in 0..m {
                            let gr = &gout[i0 * n..(i0 + 1) * n];
                            let ar = &ad[i0 * k..(i0 + 1) * k];
                            for p in 0..k {
                                let av = ar[p];
                                if av == 0.0 {
                                    continue;
                                }
                                let gbr = &mut g[p * n..(p + 1) * n];
                                for j in 0..n {
                                    gbr[j] += av * gr[j];
                                }
                            }
                        }
                    });
                    by[a.0] = ga;
                    by[b.0] = gb;
                }
            }
            Op::AddBias { x, bias } => {
                let d = *node.shape.last().unwrap();
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                by[x.0] = gx;
                let mut gb = by[bias.0].take();
                self.add_grad(&mut gb, *bias, |g| {
                    for row in gout.chunks_exact(d) {
                        for (gi, go) in g.iter_mut().zip(row) {
                            *gi += go;
                        }
                    }
                });
                by[bias.0] = gb;
            }
            Op::Add { a, b } => {
                for &(id, sign) in &[(*a, 1.0), (*b, 1.0)] {
                    let mut g0 = by[id.0].take();
                    self.add_grad(&mut g0, id, |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += sign * go;
                        }
                    });
                    by[id.0] = g0;
                }
            }
            Op::Sub { a, b } => {
                for &(id, sign) in &[(*a, 1.0), (*b, -1.0)] {
                    let mut g0 = by[id.0].take();
                    self.add_grad(&mut g0, id, |g| {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += sign * go;
                        }
                    });
                    by[id.0] = g0;
                }
            }
            Op::Mul { a, b } => {
                let ad = self.data(*a).to_vec();
                let bd = self.data(*b).to_vec();
                let mut ga = by[a.0].take();
                self.add_grad(&mut ga, *a, |g| {
                    for ((gi, go), bv) in g.iter_mut().zip(gout).zip(&bd) {
                        *gi += go * bv;
                    }
                });
                by[a.0] = ga;
                let mut gb = by[b.0].take();
                self.add_grad(&mut gb, *b, |g| {
                    for ((gi, go), av) in g.iter_mut().zip(gout).zip(&ad) {
                        *gi += go * av;
                    }
                });
                by[b.0] = gb;
            }
            Op::Scale { x, c } => {
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += c * go;
                    }
                });
                by[x.0] = gx;
            }
            Op::Relu { x } => {
                let xd = self.data(*x);
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for ((gi, go), xv) in g.iter_mut().zip(gout).zip(xd) {
                        if *xv > 0.0 {
                            *gi += go;
                        }
                    }
                });
                by[x.0] = gx;
            }
            Op::SoftmaxRows { x } => {
                let d = *node.shape.last().unwrap();
                let y = node.storage.as_slice();
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for r in 0..y.len() / d {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gout[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let gxr = &mut g[r * d..(r + 1) * d];
                        for j in 0..d {
                            gxr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
                by[x.0] = gx;
            }
            Op::LayerNorm { x, gamma, beta, mean, inv_std } => {
                let d = *node.shape.last().unwrap();
                let xd = self.data(*x);
                let g = self.data(*gamma).to_vec();
                let rows = xd.len() / d;
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |gslot| {
                    for r in 0..rows {
                        let xr = &xd[r * d..(r + 1) * d];
                        let gr = &gout[r * d..(r + 1) * d];
                        let (mu, is) = (mean[r], inv_std[r]);
                        let mut sum_gy = 0.0;
                        let mut sum_gy_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (xr[j] - mu) * is;
                            let gy = gr[j] * g[j];
                            sum_gy += gy;
                            sum_gy_xhat += gy * xhat;
                        }
                        let inv_d = 1.0 / d as f64;
                        let gxr = &mut gslot[r * d..(r + 1) * d];
                        for j in 0..d {
                            let xhat = (xr[j] - mu) * is;
                            let gy = gr[j] * g[j];
                            gxr[j] += is * (gy - inv_d * sum_gy - xhat * inv_d * sum_gy_xhat);
                        }
                    }
                });
                by[x.0] = gx;
                let mut gg = by[gamma.0].take();
                self.add_grad(&mut gg, *gamma, |gslot| {
                    for r in 0..rows {
                        let xr = &xd[r * d..(r + 1) * d];
                        let gr = &gout[r * d..(r + 1) * d];
                        let (mu, is) = (mean[r], inv_std[r]);
                        for j in 0..d {
                            gslot[j] += gr[j] * (xr[j] - mu) * is;
                        }
                    }
                });
                by[gamma.0] = gg;
                let mut gb = by[beta.0].take();
                self.add_grad(&mut gb, *beta, |gslot| {
                    for r in 0..rows {
                        let gr = &gout[r * d..(r + 1) * d];
                        for j in 0..d {
                            gslot[j] += gr[j];
                        }
                    }
                });
                by[beta.0] = gb;
            }
            Op::MaxPoolRows { x, argmax } => {
                let d = node.shape[0];
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for c in 0..d {
                        g[argmax[c] * d + c] += gout[c];
                    }
                });
                by[x.0] = gx;
            }
            Op::ConcatCols { a, b } => {
                let da = self.shape(*a)[1];
                let db = self.shape(*b)[1];
                let n = self.shape(*a)[0];
                let mut ga = by[a.0].take();
                self.add_grad(&mut ga, *a, |g| {
                    for i0 in 0..n {
                        for j in 0..da {
                            g[i0 * da + j] += gout[i0 * (da + db) + j];
                        }
                    }
                });
                by[a.0] = ga;
                let mut gb = by[b.0].take();
                self.add_grad(&mut gb, *b, |g| {
                    for i0 in 0..n {
                        for j in 0..db {
                            g[i0 * db + j] += gout[i0 * (da + db) + da + j];
                        }
                    }
                });
                by[b.0] = gb;
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0usize;
                for &p in parts {
                    let len = self.numel(p);
                    let mut gp = by[p.0].take();
                    self.add_grad(&mut gp, p, |g| {
                        for (gi, go) in g.iter_mut().zip(&gout[offset..offset + len]) {
                            *gi += go;
                        }
                    });
                    by[p.0] = gp;
                    offset += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let d = node.shape[1];
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for (r, &src) in idx.iter().enumerate() {
                        let gr = &gout[r * d..(r + 1) * d];
                        let gxr = &mut g[src * d..(src + 1) * d];
                        for j in 0..d {
                            gxr[j] += gr[j];
                        }
                    }
                });
                by[x.0] = gx;
            }
            Op::SliceRows { x, start } => {
                let d = node.shape[1];
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for (gi, go) in g[start * d..].iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                by[x.0] = gx;
            }
            Op::Reshape { x } => {
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                by[x.0] = gx;
            }
            Op::SumAll { x } => {
                let go = gout[0];
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
                by[x.0] = gx;
            }
            Op::MeanAll { x } => {
                let go = gout[0] / self.numel(*x).max(1) as f64;
                let mut gx = by[x.0].take();
                self.add_grad(&mut gx, *x, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
                by[x.0] = gx;
            }
            Op::SmoothL1 { pred, target, beta, reduction } => {
                let pd = self.data(*pred);
                let td = self.data(*target);
                let scale = match reduction {
                    Reduction::Mean => gout[0] / pd.len().max(1) as f64,
                    Reduction::Sum => gout[0],
                };
                let mut gp = by[pred.0].take();
                self.add_grad(&mut gp, *pred, |g| {
                    for ((gi, p), t) in g.iter_mut().zip(pd).zip(td) {
                        let e = p - t;
                        let de = if e.abs() < *beta { e / beta } else { e.signum() };
                        *gi += scale * de;
                    }
                });
                by[pred.0] = gp;
                let mut gt = by[target.0].take();
                self.add_grad(&mut gt, *target, |g| {
                    for ((gi, p), t) in g.iter_mut().zip(pd).zip(td) {
                        let e = p - t;
                        let de = if e.abs() < *beta { e / beta } else { e.signum() };
                        *gi -= scale * de;
                    }
                });
                by[target.0] = gt;
            }
            Op::CrossEntropyRow { logits, probs } => {
                let go = gout[0];
                let mut gl = by[logits.0].take();
                self.add_grad(&mut gl, *logits, |g| {
                    for (gi, p) in g.iter_mut().zip(probs) {
                        *gi += go * p;
                    }
                });
                by[logits.0] = gl;
            }
            Op::BlockAttention { q, k, v, blocks, n_heads, weights, weight_offsets } => {
                let dq = self.shape(*q)[1];
                let dv = self.shape(*v)[1];
                let dqh = dq / n_heads;
                let dvh = dv / n_heads;
                let scale = 1.0 / (dqh as f64).sqrt();
                let qd = self.data(*q);
                let kd = self.data(*k);
                let vd = self.data(*v);
                let mut gq = by[q.0].take();
                let mut gk = by[k.0].take();
                let mut gv = by[v.0].take();
                let nq = needs_or_zeros(&mut gq, self.nodes[q.0].needs_grad, qd.len());
                let nk = needs_or_zeros(&mut gk, self.nodes[k.0].needs_grad, kd.len());
                let nv = needs_or_zeros(&mut gv, self.nodes[v.0].needs_grad, vd.len());
                let mut dalpha = Vec::new();
                for (i, &(s, l)) in blocks.iter().enumerate() {
                    let base = weight_offsets[i];
                    let gorow = &gout[i * dv..(i + 1) * dv];
                    let qrow = &qd[i * dq..(i + 1) * dq];
                    for h in 0..*n_heads {
                        let w = &weights[base + h * l..base + (h + 1) * l];
                        let goh = &gorow[h * dvh..(h + 1) * dvh];
                        // dV and dalpha
                        dalpha.clear();
                        dalpha.reserve(l);
                        for j in 0..l {
                            let vrow = &vd[(s + j) * dv + h * dvh..(s + j) * dv + (h + 1) * dvh];
                            let mut da = 0.0;
                            for c in 0..dvh {
                                da += goh[c] * vrow[c];
                            }
                            dalpha.push(da);
                            if nv {
                                let gvrow = &mut gv.as_mut().unwrap()
                                    [(s + j) * dv + h * dvh..(s + j) * dv + (h + 1) * dvh];
                                for c in 0..dvh {
                                    gvrow[c] += w[j] * goh[c];
                                }
                            }
                        }
                        // softmax backward: ds = w * (dalpha - sum(w*dalpha))
                        let dot: f64 = w.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                        let qh = &qrow[h * dqh..(h + 1) * dqh];
                        for j in 0..l {
                            let ds = w[j] * (dalpha[j] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let krow = &kd[(s + j) * dq + h * dqh..(s + j) * dq + (h + 1) * dqh];
                            if nq {
                                let gqh = &mut gq.as_mut().unwrap()[i * dq + h * dqh..i * dq + (h + 1) * dqh];
                                for c in 0..dqh {
                                    gqh[c] += ds * krow[c];
                                }
                            }
                            if nk {
                                let gkh = &mut gk.as_mut().unwrap()
                                    [(s + j) * dq + h * dqh..(s + j) * dq + (h + 1) * dqh];
                                for c in 0..dqh {
                                    gkh[c] += ds * qh[c];
                                }
                            }
                        }
                    }
                }
                by[q.0] = gq;
                by[k.0] = gk;
                by[v.0] = gv;
            }
        }
    }
}

fn needs_or_zeros(slot: &mut Option<Vec<f64>>, needs: bool, len: usize) -> bool {
    if needs && slot.is_none() {
        *slot = Some(vec![0.0; len]);
    }
    needs
}
