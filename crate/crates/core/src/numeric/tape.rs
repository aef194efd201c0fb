//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough
//! information to run its backward rule. Nodes only reference earlier nodes,
//! so a single reverse sweep visits them in topological order.

use std::collections::HashMap;

use super::kernels::{matmul_nn, matmul_nt, matmul_tn_acc};
use super::params::{ParamId, ParamStore};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    MaxRows(Var),
    ElemMax(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Per-op saved state (normalized inputs, argmax indices, probabilities).
    aux: Vec<T>,
    aux_idx: Vec<usize>,
}

/// Recorded computation. Confined to one thread for the length of a step.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Element>(x: T) -> T {
    let x = x.as_f64();
    T::of(0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
}

fn gelu_grad<T: Element>(x: T) -> T {
    let x = x.as_f64();
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    T::of(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.push_aux(value, op, Vec::new(), Vec::new())
    }

    fn push_aux(&mut self, value: Tensor<T>, op: Op, aux: Vec<T>, aux_idx: Vec<usize>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            aux,
            aux_idx,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant input. Its gradient is computed but never consumed.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter. Repeated binds of the same id return the same node so
    /// gradients from every use accumulate together.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(row).len() != cols {
            return Err(mismatch("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (v, &b) in chunk.iter_mut().zip(&r) {
                *v += b;
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let k = T::of(s);
        let out = self.value(a).map(|v| v * k);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let mut out = va.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let h = self.value(x).cols();
        if h < 2 {
            return Err(mismatch("layer_norm", self.shape(x), &[h]));
        }
        if self.value(gamma).len() != h || self.value(beta).len() != h {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let vx = self.value(x);
        let rows = vx.rows();
        let mut xhat = vec![T::zero(); vx.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); vx.len()];
        let hf = T::of(h as f64);
        for r in 0..rows {
            let xs = vx.row(r);
            let mean = xs.iter().copied().sum::<T>() / hf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hf;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std.push(is);
            for c in 0..h {
                let n = (xs[c] - mean) * is;
                xhat[r * h + c] = n;
                out[r * h + c] = n * g[c] + b[c];
            }
        }
        xhat.extend(inv_std);
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push_aux(out, Op::LayerNorm { x, gamma, beta }, xhat, Vec::new()))
    }

    /// Gathers rows of a 2-D tensor (embedding lookup, [CLS] extraction).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let n = va.rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(mismatch("select_rows", va.shape(), &[bad]));
        }
        let c = va.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(va.row(r));
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..start + len).collect();
        self.select_rows(a, &rows)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols();
        if start + len > c {
            return Err(mismatch("slice_cols", va.shape(), &[start, len]));
        }
        let rows = va.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let vp = self.value(p);
            if vp.cols() != c {
                return Err(mismatch("concat_rows", self.shape(parts[0]), vp.shape()));
            }
            rows += vp.rows();
            data.extend_from_slice(vp.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for &p in parts {
            let vp = self.value(p);
            if vp.rows() != rows {
                return Err(mismatch("concat_cols", self.shape(parts[0]), vp.shape()));
            }
            width += vp.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, width], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Column means, `[r×c] -> [1×c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(va.row(i)) {
                *o += v;
            }
        }
        let rf = T::of(r as f64);
        out.iter_mut().for_each(|o| *o = *o / rf);
        let out = Tensor::new(vec![1, c], out).expect("shape");
        self.push(out, Op::MeanRows(a))
    }

    /// Column maxima, `[r×c] -> [1×c]`; ties route the gradient to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut out = va.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for (j, &v) in va.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        let out = Tensor::new(vec![1, c], out).expect("shape");
        self.push_aux(out, Op::MaxRows(a), Vec::new(), arg)
    }

    /// Elementwise maximum across same-shaped inputs; ties go to the earliest.
    pub fn elem_max(&mut self, parts: &[Var]) -> Result<Var> {
        let shape = self.shape(parts[0]).to_vec();
        let mut out = self.value(parts[0]).data().to_vec();
        let mut arg = vec![0usize; out.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            let vp = self.value(p);
            if vp.shape() != shape.as_slice() {
                return Err(mismatch("elem_max", &shape, vp.shape()));
            }
            for (i, &v) in vp.data().iter().enumerate() {
                if v > out[i] {
                    out[i] = v;
                    arg[i] = k;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push_aux(out, Op::ElemMax(parts.to_vec()), Vec::new(), arg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (r, c) = (vl.rows(), vl.cols());
        if targets.len() != r || r == 0 {
            return Err(mismatch("cross_entropy", vl.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(mismatch("cross_entropy", vl.shape(), &[bad]));
        }
        if vl.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("cross_entropy logits".into()));
        }
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0f64;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max.as_f64()
                + row
                    .iter()
                    .map(|&v| (v - max).as_f64().exp())
                    .sum::<f64>()
                    .ln();
            loss += lse - row[targets[i]].as_f64();
            softmax_in_place(row);
        }
        let out = Tensor::scalar(T::of(loss / r as f64));
        Ok(self.push_aux(out, Op::CrossEntropy(logits, targets.to_vec()), probs, Vec::new()))
    }

    /// Runs the reverse sweep from a scalar `loss` and writes parameter
    /// gradients into `store`. Parameters never bound to this tape, or bound
    /// but not reachable from `loss`, receive exact zeros.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (&pid, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                store
                    .get_mut(pid)
                    .grad
                    .data_mut()
                    .copy_from_slice(g);
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node (None where unreachable).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        macro_rules! slot {
            ($v:expr) => {{
                let len = self.value($v).len();
                grads[$v.0].get_or_insert_with(|| vec![T::zero(); len])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                // dA = dC · Bᵀ
                let mut da = vec![T::zero(); m * k];
                matmul_nt(g, vb, &mut da, m, n, k);
                add_into(slot!(*a), &da);
                // dB = Aᵀ · dC
                matmul_tn_acc(va, g, slot!(*b), m, k, n);
            }
            Op::MatMulNT(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                let mut da = vec![T::zero(); m * k];
                matmul_nn(g, vb, &mut da, m, n, k);
                add_into(slot!(*a), &da);
                matmul_tn_acc(g, va, slot!(*b), m, n, k);
            }
            Op::Add(a, b) => {
                add_into(slot!(*a), g);
                add_into(slot!(*b), g);
            }
            Op::AddRow(a, row) => {
                add_into(slot!(*a), g);
                let sr = slot!(*row);
                let c = sr.len();
                for chunk in g.chunks(c) {
                    add_into(sr, chunk);
                }
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let sa = slot!(*a);
                for ((s, &gi), &y) in sa.iter_mut().zip(g).zip(vb) {
                    *s += gi * y;
                }
                let sb = slot!(*b);
                for ((s, &gi), &x) in sb.iter_mut().zip(g).zip(va) {
                    *s += gi * x;
                }
            }
            Op::Scale(a, s) => {
                let k = T::of(*s);
                for (d, &gi) in slot!(*a).iter_mut().zip(g) {
                    *d += gi * k;
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                for ((d, &gi), &x) in slot!(*a).iter_mut().zip(g).zip(va) {
                    *d += gi * gelu_grad(x);
                }
            }
            Op::Softmax(a) => {
                let p = node.value.data();
                let c = node.value.cols();
                let sa = slot!(*a);
                for ((pr, gr), dr) in p.chunks(c).zip(g.chunks(c)).zip(sa.chunks_mut(c)) {
                    let dot: T = pr.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                    for ((d, &pi), &gi) in dr.iter_mut().zip(pr).zip(gr) {
                        *d += pi * (gi - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let h = node.value.cols();
                let rows = node.value.rows();
                let (xhat, inv_std) = node.aux.split_at(rows * h);
                let gam = self.value(*gamma).data();
                let hf = T::of(h as f64);
                {
                    let sg = slot!(*gamma);
                    for r in 0..rows {
                        for c in 0..h {
                            sg[c] += g[r * h + c] * xhat[r * h + c];
                        }
                    }
                }
                {
                    let sb = slot!(*beta);
                    for gr in g.chunks(h) {
                        add_into(sb, gr);
                    }
                }
                let sx = slot!(*x);
                let mut dxhat = vec![T::zero(); h];
                for r in 0..rows {
                    let gr = &g[r * h..(r + 1) * h];
                    let xr = &xhat[r * h..(r + 1) * h];
                    for c in 0..h {
                        dxhat[c] = gr[c] * gam[c];
                    }
                    let mean_d = dxhat.iter().copied().sum::<T>() / hf;
                    let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / hf;
                    for c in 0..h {
                        sx[r * h + c] += inv_std[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                    }
                }
            }
            Op::SelectRows(a, rows) => {
                let c = node.value.cols();
                let sa = slot!(*a);
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut sa[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                }
            }
            Op::SliceCols(a, start) => {
                let len = node.value.cols();
                let c = self.value(*a).cols();
                let sa = slot!(*a);
                for (r, gr) in g.chunks(len).enumerate() {
                    add_into(&mut sa[r * c + start..r * c + start + len], gr);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    add_into(slot!(p), &g[off..off + n]);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let width = node.value.cols();
                let mut col = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let sp = slot!(p);
                    for (r, dr) in sp.chunks_mut(pc).enumerate() {
                        add_into(dr, &g[r * width + col..r * width + col + pc]);
                    }
                    col += pc;
                }
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let rf = T::of(va.rows() as f64);
                let c = va.cols();
                for dr in slot!(*a).chunks_mut(c) {
                    for (d, &gi) in dr.iter_mut().zip(g) {
                        *d += gi / rf;
                    }
                }
            }
            Op::MaxRows(a) => {
                let c = self.value(*a).cols();
                let sa = slot!(*a);
                for (j, &r) in node.aux_idx.iter().enumerate() {
                    sa[r * c + j] += g[j];
                }
            }
            Op::ElemMax(parts) => {
                for (k, &p) in parts.iter().enumerate() {
                    let sp = slot!(p);
                    for (i, &w) in node.aux_idx.iter().enumerate() {
                        if w == k {
                            sp[i] += g[i];
                        }
                    }
                }
            }
            Op::Reshape(a) => add_into(slot!(*a), g),
            Op::Sum(a) => {
                for d in slot!(*a).iter_mut() {
                    *d += g[0];
                }
            }
            Op::CrossEntropy(logits, targets) => {
                let c = self.value(*logits).cols();
                let scale = g[0] / T::of(targets.len() as f64);
                let sl = slot!(*logits);
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let p = node.aux[r * c + j];
                        let y = if j == t { T::one() } else { T::zero() };
                        sl[r * c + j] += (p - y) * scale;
                    }
                }
            }
        }
    }
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
