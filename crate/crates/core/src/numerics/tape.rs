//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so every node's inputs have smaller indices and a single
//! reverse sweep over the node list is a reverse topological traversal.
//!
//! Operations are coarse-grained (a fused linear layer, a fused causal
//! attention, a row normalization, softmax cross-entropy) so that a desk-scale
//! transformer spends its time in matrix products rather than bookkeeping.

use super::scalar::{gemm, MatMut, MatRef, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower bound applied to a per-row standard deviation before dividing by it.
pub const SIGMA_CLAMP: f64 = 1e-5;

/// How one row of a normalization op picks its divisor.
///
/// The divisor is `sigma_weight * max(sigma, SIGMA_CLAMP) + fixed`. A row
/// with `sigma_weight == 0` never computes its standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowDivisor {
    pub sigma_weight: f64,
    pub fixed: f64,
}

impl RowDivisor {
    pub const STANDARD: RowDivisor = RowDivisor {
        sigma_weight: 1.0,
        fixed: 0.0,
    };

    pub fn frozen(constant: f64) -> Self {
        RowDivisor {
            sigma_weight: 0.0,
            fixed: constant,
        }
    }
}

/// Counters collected while a tape is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    /// Normalization ops evaluated.
    pub norm_ops: usize,
    /// Rows for which a per-token standard deviation was computed.
    pub sigma_rows: usize,
}

struct NormSaved<F> {
    normed: Vec<F>,
    divisor: Vec<F>,
    sigma: Vec<F>,
    sigma_coef: Vec<F>,
    center: bool,
}

struct AttnSaved<F> {
    batch: usize,
    seq: usize,
    heads: usize,
    probs: Vec<F>,
}

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Sum(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        trans: bool,
    },
    Gelu(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: Box<NormSaved<F>>,
    },
    Attention {
        qk: Var,
        v: Var,
        saved: Box<AttnSaved<F>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    trace: Trace,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// GELU and its derivative, evaluated in the precision of `F`. `tanh` goes
/// through `exp`, which is much cheaper than the libm routine.
fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    let c = F::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::of(0.044_715);
    let half = F::of(0.5);
    let one = F::one();
    let two = F::of(2.0);
    let u = c * (x + a * x * x * x);
    let t = one - two / ((two * u).exp() + one);
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + F::of(3.0) * a * x * x);
    (y, dy)
}

/// Tanh-approximation GELU of a single value.
pub fn gelu_scalar(x: f64) -> f64 {
    gelu_parts(x).0
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            trace: Trace::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn trace(&self) -> Trace {
        self.trace
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Tensor<F> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(F::zero()))
    }

    /// Per-row standard deviations computed by a normalization node, if any.
    pub fn norm_sigmas(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::Norm { saved, .. } if !saved.sigma.is_empty() => Some(&saved.sigma),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "mul: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.linear(a, b, None)
    }

    /// `x · w + b` for `x: [n×k]`, `w: [k×m]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.linear_impl(x, w, b, false)
    }

    /// `x · wᵀ + b` for `x: [n×k]`, `w: [m×k]`, `b: [m]`.
    pub fn linear_t(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.linear_impl(x, w, b, true)
    }

    fn linear_impl(&mut self, x: Var, w: Var, b: Option<Var>, trans: bool) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        if vw.ndim() != 2 {
            return Err(Error::Dimension(format!(
                "linear weight must be 2-D, got {:?}",
                vw.shape()
            )));
        }
        let (n, k) = vx.as_matrix_dims();
        let wm = if trans { vw.mat().t() } else { vw.mat() };
        let (k2, m) = (wm.rows, wm.cols);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "inner dimensions differ: {:?} x {:?}",
                vx.shape(),
                vw.shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, m]);
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.len() != m {
                return Err(Error::Dimension(format!(
                    "bias length {} for output width {m}",
                    vb.len()
                )));
            }
            for row in out.data_mut().chunks_mut(m) {
                row.copy_from_slice(vb.data());
            }
        }
        let beta = if b.is_some() { F::one() } else { F::zero() };
        gemm(F::one(), MatRef::dense(vx.data(), n, k), wm, beta, out.mat_mut());
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b, trans }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu_parts(v).0);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Gathers rows of `table` (`[rows×h]`), producing `[ids.len()×h]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, h) = vt.as_matrix_dims();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("row {id} of a {rows}-row table")));
            }
            data.extend_from_slice(vt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), h], data)?;
        let ng = self.ng(table);
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Row normalization: optional mean centering, division by a per-row
    /// divisor, then elementwise affine `· gamma + beta`.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        center: bool,
        rows: &[RowDivisor],
    ) -> Result<Var> {
        let vx = self.value(x);
        let (n, h) = vx.as_matrix_dims();
        let vg = self.value(gamma);
        let vb = self.value(beta);
        if vg.len() != h || vb.len() != h {
            return Err(Error::Dimension(format!(
                "norm params of length {}/{} for width {h}",
                vg.len(),
                vb.len()
            )));
        }
        if rows.len() != n {
            return Err(Error::Dimension(format!(
                "{} row divisors for {n} rows",
                rows.len()
            )));
        }
        let hf = F::of(h as f64);
        let eps = F::of(SIGMA_CLAMP);
        let mut normed = vec![F::zero(); n * h];
        let mut divisor = vec![F::zero(); n];
        let mut sigma = Vec::new();
        let mut sigma_coef = vec![F::zero(); n];
        let mut out = vec![F::zero(); n * h];
        let needs_sigma = rows.iter().any(|r| r.sigma_weight != 0.0);
        if needs_sigma {
            sigma = vec![F::zero(); n];
        }
        let mut sigma_rows = 0;
        let xd = vx.data();
        for (r, spec) in rows.iter().enumerate() {
            let xr = &xd[r * h..(r + 1) * h];
            let nr = &mut normed[r * h..(r + 1) * h];
            let mu = if center {
                xr.iter().copied().sum::<F>() / hf
            } else {
                F::zero()
            };
            for (c, &v) in nr.iter_mut().zip(xr) {
                *c = v - mu;
            }
            let d = if spec.sigma_weight != 0.0 {
                sigma_rows += 1;
                let var = nr.iter().map(|&c| c * c).sum::<F>() / hf;
                let s = var.sqrt();
                sigma[r] = s;
                let w = F::of(spec.sigma_weight);
                if s > eps {
                    sigma_coef[r] = w;
                    w * s + F::of(spec.fixed)
                } else {
                    w * eps + F::of(spec.fixed)
                }
            } else {
                F::of(spec.fixed)
            };
            if !(d > F::zero()) {
                return Err(Error::Argument(format!("non-positive norm divisor in row {r}")));
            }
            divisor[r] = d;
            let inv = F::one() / d;
            let orow = &mut out[r * h..(r + 1) * h];
            for j in 0..h {
                nr[j] *= inv;
                orow[j] = nr[j] * vg.data()[j] + vb.data()[j];
            }
        }
        self.trace.norm_ops += 1;
        self.trace.sigma_rows += sigma_rows;
        let out = Tensor::new(vec![n, h], out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                saved: Box::new(NormSaved {
                    normed,
                    divisor,
                    sigma,
                    sigma_coef,
                    center,
                }),
            },
            ng,
        ))
    }

    /// Multi-head causal self-attention.
    ///
    /// `qk` is `[batch·seq × 2h]` holding queries then keys; `v` is
    /// `[batch·seq × h]`. Returns the concatenated head outputs `[batch·seq × h]`.
    pub fn causal_attention(
        &mut self,
        qk: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let vqk = self.value(qk);
        let vv = self.value(v);
        let (rows, h) = vv.as_matrix_dims();
        if rows != batch * seq || vqk.as_matrix_dims() != (rows, 2 * h) {
            return Err(Error::Dimension(format!(
                "attention: qk {:?}, v {:?} for batch {batch} x seq {seq}",
                vqk.shape(),
                vv.shape()
            )));
        }
        if heads == 0 || h % heads != 0 {
            return Err(Error::Dimension(format!("{h} channels over {heads} heads")));
        }
        let dh = h / heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut probs = vec![F::zero(); batch * heads * seq * seq];
        let mut out = Tensor::zeros(&[rows, h]);
        for b in 0..batch {
            for hd in 0..heads {
                let p = &mut probs[(b * heads + hd) * seq * seq..][..seq * seq];
                let q = MatRef {
                    data: vqk.data(),
                    offset: b * seq * 2 * h + hd * dh,
                    rows: seq,
                    cols: dh,
                    row_stride: 2 * h,
                    col_stride: 1,
                };
                let k = MatRef {
                    offset: q.offset + h,
                    ..q
                };
                gemm(scale, q, k.t(), F::zero(), MatMut::dense(p, seq, seq));
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    let mx = row[..=i].iter().copied().fold(F::neg_infinity(), F::max);
                    let mut z = F::zero();
                    for e in &mut row[..=i] {
                        *e = (*e - mx).exp();
                        z += *e;
                    }
                    let inv = F::one() / z;
                    for e in &mut row[..=i] {
                        *e *= inv;
                    }
                    for e in &mut row[i + 1..] {
                        *e = F::zero();
                    }
                }
                let vm = MatRef {
                    data: vv.data(),
                    offset: b * seq * h + hd * dh,
                    rows: seq,
                    cols: dh,
                    row_stride: h,
                    col_stride: 1,
                };
                let o = MatMut {
                    data: out.data_mut(),
                    offset: b * seq * h + hd * dh,
                    rows: seq,
                    cols: dh,
                    row_stride: h,
                    col_stride: 1,
                };
                gemm(F::one(), MatRef::dense(p, seq, seq), vm, F::zero(), o);
            }
        }
        let ng = self.ng(qk) || self.ng(v);
        Ok(self.push(
            out,
            Op::Attention {
                qk,
                v,
                saved: Box::new(AttnSaved {
                    batch,
                    seq,
                    heads,
                    probs,
                }),
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy over rows of `logits: [n×vocab]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, vocab) = vl.as_matrix_dims();
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index(format!("target {t} outside vocabulary of {vocab}")));
        }
        let mut probs = vec![F::zero(); n * vocab];
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = vl.row(r);
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (pe, &l) in p.iter_mut().zip(row) {
                *pe = (l - mx).exp();
                z += *pe;
            }
            total += z.f64().ln() - (row[t] - mx).f64();
            let inv = F::one() / z;
            for pe in p.iter_mut() {
                *pe *= inv;
            }
        }
        let out = Tensor::scalar(F::of(total / n as f64));
        let ng = self.ng(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), F::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        accumulate(grads, v, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, s) => {
                if self.ng(*a) {
                    let s = *s;
                    accumulate(grads, *a, g.map(|x| x * s));
                }
            }
            Op::Sum(a) => {
                if self.ng(*a) {
                    accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g.data()[0]));
                }
            }
            Op::Linear { x, w, b, trans } => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let (n, k) = vx.as_matrix_dims();
                let wm = if *trans { vw.mat().t() } else { vw.mat() };
                let m = wm.cols;
                let gm = MatRef::dense(g.data(), n, m);
                if self.ng(*x) {
                    let dst = grad_slot(grads, *x, vx.shape());
                    gemm(F::one(), gm, wm.t(), F::one(), MatMut::dense(dst, n, k));
                }
                if self.ng(*w) {
                    let dst = grad_slot(grads, *w, vw.shape());
                    let xt = MatRef::dense(vx.data(), n, k).t();
                    if *trans {
                        gemm(F::one(), gm.t(), xt.t(), F::one(), MatMut::dense(dst, m, k));
                    } else {
                        gemm(F::one(), xt, gm, F::one(), MatMut::dense(dst, k, m));
                    }
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let shape = self.value(*b).shape().to_vec();
                        let dst = grad_slot(grads, *b, &shape);
                        for row in g.data().chunks(m) {
                            for (d, &r) in dst.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.ng(*x) {
                    let vx = self.value(*x);
                    let d = vx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| gv * gelu_parts(v).1)
                        .collect();
                    accumulate(grads, *x, Tensor::new(vx.shape().to_vec(), d).unwrap());
                }
            }
            Op::Embed { table, ids } => {
                if self.ng(*table) {
                    let shape = self.value(*table).shape().to_vec();
                    let h = *shape.last().unwrap();
                    let dst = grad_slot(grads, *table, &shape);
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g.data()[r * h..(r + 1) * h];
                        for (d, &s) in dst[id * h..(id + 1) * h].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (n, h) = g.as_matrix_dims();
                let gd = g.data();
                let vg = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let dst = grad_slot(grads, *gamma, &[h]);
                    for r in 0..n {
                        for j in 0..h {
                            dst[j] += gd[r * h + j] * saved.normed[r * h + j];
                        }
                    }
                }
                if self.ng(*beta) {
                    let dst = grad_slot(grads, *beta, &[h]);
                    for row in gd.chunks(h) {
                        for (d, &v) in dst.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                if self.ng(*x) {
                    let hf = F::of(h as f64);
                    let shape = self.value(*x).shape().to_vec();
                    let dst = grad_slot(grads, *x, &shape);
                    let mut dc = vec![F::zero(); h];
                    for r in 0..n {
                        let nr = &saved.normed[r * h..(r + 1) * h];
                        let gr = &gd[r * h..(r + 1) * h];
                        let d = saved.divisor[r];
                        let coef = saved.sigma_coef[r];
                        let dot: F = (0..h).map(|j| gr[j] * vg[j] * nr[j]).sum();
                        let corr = if coef != F::zero() {
                            coef * dot / (hf * saved.sigma[r])
                        } else {
                            F::zero()
                        };
                        for j in 0..h {
                            dc[j] = gr[j] * vg[j] / d - corr * nr[j];
                        }
                        let mean = if saved.center {
                            dc.iter().copied().sum::<F>() / hf
                        } else {
                            F::zero()
                        };
                        for j in 0..h {
                            dst[r * h + j] += dc[j] - mean;
                        }
                    }
                }
            }
            Op::Attention { qk, v, saved } => {
                self.attention_backward(*qk, *v, saved, g, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.ng(*logits) {
                    let vl = self.value(*logits);
                    let (n, vocab) = vl.as_matrix_dims();
                    let s = g.data()[0] / F::of(n as f64);
                    let dst = grad_slot(grads, *logits, vl.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        let d = &mut dst[r * vocab..(r + 1) * vocab];
                        for (de, &pe) in d.iter_mut().zip(p) {
                            *de += pe * s;
                        }
                        d[t] -= s;
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        qk: Var,
        v: Var,
        saved: &AttnSaved<F>,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) {
        let (batch, seq, heads) = (saved.batch, saved.seq, saved.heads);
        let vqk = self.value(qk);
        let vv = self.value(v);
        let (rows, h) = vv.as_matrix_dims();
        let dh = h / heads;
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut dqk = if self.ng(qk) {
            Some(vec![F::zero(); rows * 2 * h])
        } else {
            None
        };
        let mut dv = if self.ng(v) {
            Some(vec![F::zero(); rows * h])
        } else {
            None
        };
        let mut dp = vec![F::zero(); seq * seq];
        for b in 0..batch {
            for hd in 0..heads {
                let p = &saved.probs[(b * heads + hd) * seq * seq..][..seq * seq];
                let go = MatRef {
                    data: g.data(),
                    offset: b * seq * h + hd * dh,
                    rows: seq,
                    cols: dh,
                    row_stride: h,
                    col_stride: 1,
                };
                let vm = MatRef {
                    data: vv.data(),
                    ..go
                };
                if let Some(dv) = dv.as_mut() {
                    let dst = MatMut {
                        data: dv.as_mut_slice(),
                        offset: go.offset,
                        rows: seq,
                        cols: dh,
                        row_stride: h,
                        col_stride: 1,
                    };
                    gemm(F::one(), MatRef::dense(p, seq, seq).t(), go, F::one(), dst);
                }
                let Some(dqk) = dqk.as_mut() else { continue };
                gemm(F::one(), go, vm.t(), F::zero(), MatMut::dense(&mut dp, seq, seq));
                for i in 0..seq {
                    let pr = &p[i * seq..=i * seq + i];
                    let dr = &mut dp[i * seq..(i + 1) * seq];
                    let dot: F = pr.iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                    for e in &mut dr[i + 1..] {
                        *e = F::zero();
                    }
                }
                let q = MatRef {
                    data: vqk.data(),
                    offset: b * seq * 2 * h + hd * dh,
                    rows: seq,
                    cols: dh,
                    row_stride: 2 * h,
                    col_stride: 1,
                };
                let k = MatRef {
                    offset: q.offset + h,
                    ..q
                };
                let ds = MatRef::dense(&dp, seq, seq);
                gemm(
                    F::one(),
                    ds,
                    k,
                    F::one(),
                    MatMut {
                        data: dqk.as_mut_slice(),
                        offset: q.offset,
                        rows: seq,
                        cols: dh,
                        row_stride: 2 * h,
                        col_stride: 1,
                    },
                );
                gemm(
                    F::one(),
                    ds.t(),
                    q,
                    F::one(),
                    MatMut {
                        data: dqk.as_mut_slice(),
                        offset: k.offset,
                        rows: seq,
                        cols: dh,
                        row_stride: 2 * h,
                        col_stride: 1,
                    },
                );
            }
        }
        if let Some(d) = dqk {
            accumulate(grads, qk, Tensor::new(vqk.shape().to_vec(), d).unwrap());
        }
        if let Some(d) = dv {
            accumulate(grads, v, Tensor::new(vv.shape().to_vec(), d).unwrap());
        }
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn grad_slot<'a, F: Scalar>(
    grads: &'a mut [Option<Tensor<F>>],
    v: Var,
    shape: &[usize],
) -> &'a mut [F] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = tape.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5., 6., 7., 8.]);

        let a = tape.constant(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.]);

        let a = tape.constant(t(&[2, 3], &[1., -2., 3., 4., 5., -6.]));
        let z = tape.constant(Tensor::zeros(&[3, 2]));
        let c = tape.matmul(a, z).unwrap();
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[3, 257]));
        let loss = tape.cross_entropy(l, &[0, 100, 256]).unwrap();
        assert!((tape.value(loss).data()[0] - 257f64.ln()).abs() < 1e-12);

        let mut one_hot = Tensor::zeros(&[1, 5]);
        one_hot.data_mut()[3] = 1e4;
        let l = tape.constant(one_hot);
        let loss = tape.cross_entropy(l, &[3]).unwrap();
        assert!(tape.value(loss).data()[0].abs() < 1e-12);

        // log(e + e^2 + e^3) - 3 evaluated with mpmath at 40 digits:
        // 0.4076059644443803044829...
        let l = tape.constant(t(&[1, 3], &[1., 2., 3.]));
        let loss = tape.cross_entropy(l, &[2]).unwrap();
        assert!((tape.value(loss).data()[0] - 0.407_605_964_444_380_3).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::<f32>::new();
        let l = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(matches!(tape.cross_entropy(l, &[4]), Err(Error::Index(_))));
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(20.0) - 20.0).abs() < 1e-12);
        // 0.5 (1 + tanh(sqrt(2/pi) * 1.044715)), 40-digit evaluation:
        // 0.8411919906082767047...
        assert!((gelu_scalar(1.0) - 0.841_191_990_608_276_7).abs() < 1e-12);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn every_node_visited_once() {
        // x used twice: gradient of sum(x + x) must be 2, not 4.
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., 2., 3.]));
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., 2., 2.]);
    }

    #[test]
    fn attention_is_causal() {
        let mut rng = rand::rng();
        let (b, s, h) = (1, 5, 4);
        let qk = Tensor::<f64>::randn(&[b * s, 2 * h], 1.0, &mut rng);
        let v = Tensor::<f64>::randn(&[b * s, h], 1.0, &mut rng);
        let mut tape = Tape::new();
        let q1 = tape.constant(qk.clone());
        let v1 = tape.constant(v.clone());
        let o1 = tape.causal_attention(q1, v1, b, s, 2).unwrap();
        let mut v2 = v;
        for e in &mut v2.data_mut()[3 * h..] {
            *e += 1.0;
        }
        let q2 = tape.constant(qk);
        let v2 = tape.constant(v2);
        let o2 = tape.causal_attention(q2, v2, b, s, 2).unwrap();
        let (a, c) = (tape.value(o1).data(), tape.value(o2).data());
        assert_eq!(&a[..3 * h], &c[..3 * h]);
        assert_ne!(&a[3 * h..], &c[3 * h..]);
    }
}
