use super::Real;
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<F> {
    Constant,
    /// Leaf whose gradient lands in the parameter gradient at `offset`.
    Param { offset: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    /// `W x + b` with `W` row-major `rows x cols`.
    Affine { w: Var, x: Var, b: Option<Var> },
    Tanh(Var),
    Sigmoid(Var),
    /// Identity forward; gradient multiplied by the factor on the way back.
    Decay(Var, F),
    /// Value supplied by the caller; each link is `(input, jacobian offset)`
    /// with a row-major `len(out) x len(input)` Jacobian in `jac`.
    Custom { start: u32, count: u32 },
    Concat { start: u32, count: u32 },
    /// Contiguous sub-range of the input starting at the given index.
    Slice(Var, usize),
}

#[derive(Clone, Copy, Debug)]
struct Node<F> {
    op: Op<F>,
    offset: usize,
    len: usize,
}

/// Reverse-mode recording. Nodes are appended in evaluation order, so every
/// node's inputs precede it and the tape is acyclic by construction.
#[derive(Debug)]
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    values: Vec<F>,
    links: Vec<(Var, usize)>,
    jac: Vec<F>,
    trace_decay: bool,
    decay_log: Vec<(Var, F)>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient of a scalar with respect to the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub params: Vec<F>,
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
            links: Vec::new(),
            jac: Vec::new(),
            trace_decay: false,
            decay_log: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        let n = &self.nodes[v.index()];
        &self.values[n.offset..n.offset + n.len]
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.index()].len
    }

    fn push(&mut self, op: Op<F>, len: usize) -> (Var, usize) {
        let offset = self.values.len();
        self.values.resize(offset + len, F::zero());
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node { op, offset, len });
        (id, offset)
    }

    fn push_values(&mut self, op: Op<F>, vals: impl IntoIterator<Item = F>) -> Var {
        let offset = self.values.len();
        self.values.extend(vals);
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            offset,
            len: self.values.len() - offset,
        });
        id
    }

    pub fn constant(&mut self, vals: &[F]) -> Var {
        self.push_values(Op::Constant, vals.iter().copied())
    }

    /// Parameter leaf backed by `params[offset..offset + vals.len()]`.
    pub fn param(&mut self, vals: &[F], offset: usize) -> Var {
        self.push_values(Op::Param { offset }, vals.iter().copied())
    }

    fn check_same(&self, a: Var, b: Var) -> usize {
        let (la, lb) = (self.dim(a), self.dim(b));
        assert_eq!(la, lb, "tape operands have different lengths");
        la
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Var {
        let len = self.check_same(a, b);
        let (id, off) = self.push(op, len);
        let (oa, ob) = (self.nodes[a.index()].offset, self.nodes[b.index()].offset);
        for i in 0..len {
            self.values[off + i] = f(self.values[oa + i], self.values[ob + i]);
        }
        id
    }

    fn unary(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let len = self.dim(a);
        let (id, off) = self.push(op, len);
        let oa = self.nodes[a.index()].offset;
        for i in 0..len {
            self.values[off + i] = f(self.values[oa + i]);
        }
        id
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Gradient-decay marker. Returns `a` unchanged when `factor == 1`.
    pub fn decay(&mut self, a: Var, factor: F) -> Var {
        if factor == F::one() {
            return a;
        }
        self.unary(a, Op::Decay(a, factor), |x| x)
    }

    /// `W x + b`; `W` must have `len(b) * len(x)` entries.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let cols = self.dim(x);
        let rows = match b {
            Some(b) => self.dim(b),
            None => self.dim(w) / cols,
        };
        assert_eq!(self.dim(w), rows * cols, "affine weight shape mismatch");
        let (id, off) = self.push(Op::Affine { w, x, b }, rows);
        let wo = self.nodes[w.index()].offset;
        let xo = self.nodes[x.index()].offset;
        let bo = b.map(|b| self.nodes[b.index()].offset);
        for r in 0..rows {
            let (head, tail) = self.values.split_at_mut(off);
            let row = &head[wo + r * cols..wo + (r + 1) * cols];
            let xs = &head[xo..xo + cols];
            let mut acc = dot(row, xs);
            if let Some(bo) = bo {
                acc = acc + head[bo + r];
            }
            tail[r] = acc;
        }
        id
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let start = self.links.len() as u32;
        let mut len = 0;
        for &p in parts {
            self.links.push((p, 0));
            len += self.dim(p);
        }
        let (id, off) = self.push(
            Op::Concat {
                start,
                count: parts.len() as u32,
            },
            len,
        );
        let mut pos = off;
        for &p in parts {
            let n = self.nodes[p.index()];
            self.values.copy_within(n.offset..n.offset + n.len, pos);
            pos += n.len;
        }
        id
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.dim(a), "slice out of range");
        let (id, off) = self.push(Op::Slice(a, start), len);
        let src = self.nodes[a.index()].offset + start;
        self.values.copy_within(src..src + len, off);
        id
    }

    /// Records a value computed outside the tape together with its local
    /// Jacobians. Each Jacobian is row-major `value.len() x len(input)`.
    pub fn custom(&mut self, value: &[F], inputs: &[(Var, &[F])]) -> Var {
        let start = self.links.len() as u32;
        for (v, j) in inputs {
            assert_eq!(
                j.len(),
                value.len() * self.dim(*v),
                "custom op Jacobian has the wrong size"
            );
            let jo = self.jac.len();
            self.jac.extend_from_slice(j);
            self.links.push((*v, jo));
        }
        self.push_values(
            Op::Custom {
                start,
                count: inputs.len() as u32,
            },
            value.iter().copied(),
        )
    }

    /// `sum_i c_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let mut acc = F::zero();
        let mut inputs = Vec::with_capacity(terms.len());
        let coeffs: Vec<[F; 1]> = terms.iter().map(|t| [t.1]).collect();
        for ((v, c), cj) in terms.iter().zip(&coeffs) {
            assert_eq!(self.dim(*v), 1, "weighted_sum takes scalar nodes");
            acc = acc + *c * self.scalar(*v);
            inputs.push((*v, &cj[..]));
        }
        self.custom(&[acc], &inputs)
    }

    /// Records every decay node the backward sweep passes through together
    /// with the gradient magnitude that reached it.
    pub fn set_decay_tracing(&mut self, on: bool) {
        self.trace_decay = on;
    }

    pub fn decay_log(&self) -> &[(Var, F)] {
        &self.decay_log
    }

    /// Reverse sweep from the scalar `loss`. Gradients with respect to
    /// constants are dropped; parameter gradients are summed into a vector of
    /// length `n_params`.
    pub fn backward(&mut self, loss: Var, n_params: usize) -> Result<Gradients<F>> {
        if self.dim(loss) != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got length {}",
                self.dim(loss)
            )));
        }
        let mut grads = vec![F::zero(); self.values.len()];
        let mut live = vec![false; self.nodes.len()];
        grads[self.nodes[loss.index()].offset] = F::one();
        live[loss.index()] = true;
        let mut params = vec![F::zero(); n_params];
        self.decay_log.clear();

        for idx in (0..=loss.index()).rev() {
            if !live[idx] {
                continue;
            }
            let node = self.nodes[idx];
            let (lo, hi) = grads.split_at_mut(node.offset);
            let g = &hi[..node.len];
            let vals = &self.values;
            let slot = |v: Var| {
                let n = self.nodes[v.index()];
                n.offset..n.offset + n.len
            };
            match node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    if offset + node.len > n_params {
                        return Err(Error::contract("parameter leaf outside the parameter vector"));
                    }
                    for (p, gi) in params[offset..offset + node.len].iter_mut().zip(g) {
                        *p = *p + *gi;
                    }
                }
                Op::Add(a, b) => {
                    axpy(&mut lo[slot(a)], F::one(), g);
                    axpy(&mut lo[slot(b)], F::one(), g);
                    live[a.index()] = true;
                    live[b.index()] = true;
                }
                Op::Sub(a, b) => {
                    axpy(&mut lo[slot(a)], F::one(), g);
                    axpy(&mut lo[slot(b)], -F::one(), g);
                    live[a.index()] = true;
                    live[b.index()] = true;
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (slot(a), slot(b));
                    for i in 0..node.len {
                        let (va, vb) = (vals[ra.start + i], vals[rb.start + i]);
                        lo[ra.start + i] = lo[ra.start + i] + g[i] * vb;
                        lo[rb.start + i] = lo[rb.start + i] + g[i] * va;
                    }
                    live[a.index()] = true;
                    live[b.index()] = true;
                }
                Op::Scale(a, s) => {
                    axpy(&mut lo[slot(a)], s, g);
                    live[a.index()] = true;
                }
                Op::Decay(a, s) => {
                    if self.trace_decay {
                        let mag = g.iter().fold(F::zero(), |m, x| m.max(x.abs()));
                        self.decay_log.push((Var(idx as u32), mag));
                    }
                    axpy(&mut lo[slot(a)], s, g);
                    live[a.index()] = true;
                }
                Op::Tanh(a) => {
                    let ra = slot(a);
                    let out = &vals[node.offset..node.offset + node.len];
                    for i in 0..node.len {
                        lo[ra.start + i] = lo[ra.start + i] + g[i] * (F::one() - out[i] * out[i]);
                    }
                    live[a.index()] = true;
                }
                Op::Sigmoid(a) => {
                    let ra = slot(a);
                    let out = &vals[node.offset..node.offset + node.len];
                    for i in 0..node.len {
                        lo[ra.start + i] = lo[ra.start + i] + g[i] * out[i] * (F::one() - out[i]);
                    }
                    live[a.index()] = true;
                }
                Op::Affine { w, x, b } => {
                    let (rw, rx) = (slot(w), slot(x));
                    let cols = rx.len();
                    let xs = &vals[rx.clone()];
                    // dW += g x^T
                    for r in 0..node.len {
                        if g[r] != F::zero() {
                            axpy(&mut lo[rw.start + r * cols..rw.start + (r + 1) * cols], g[r], xs);
                        }
                    }
                    // dx += W^T g
                    if !matches!(self.nodes[x.index()].op, Op::Constant) {
                        for r in 0..node.len {
                            if g[r] != F::zero() {
                                let row = &vals[rw.start + r * cols..rw.start + (r + 1) * cols];
                                axpy(&mut lo[rx.clone()], g[r], row);
                            }
                        }
                        live[x.index()] = true;
                    }
                    if let Some(b) = b {
                        axpy(&mut lo[slot(b)], F::one(), g);
                        live[b.index()] = true;
                    }
                    live[w.index()] = true;
                }
                Op::Concat { start, count } => {
                    let mut pos = 0;
                    for &(p, _) in &self.links[start as usize..(start + count) as usize] {
                        let rp = slot(p);
                        let n = rp.len();
                        axpy(&mut lo[rp], F::one(), &g[pos..pos + n]);
                        pos += n;
                        live[p.index()] = true;
                    }
                }
                Op::Slice(a, start) => {
                    let ra = slot(a);
                    let s0 = ra.start + start;
                    axpy(&mut lo[s0..s0 + node.len], F::one(), g);
                    live[a.index()] = true;
                }
                Op::Custom { start, count } => {
                    for &(p, jo) in &self.links[start as usize..(start + count) as usize] {
                        let rp = slot(p);
                        let n = rp.len();
                        let dst = &mut lo[rp];
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != F::zero() {
                                axpy(dst, *gr, &self.jac[jo + r * n..jo + (r + 1) * n]);
                            }
                        }
                        live[p.index()] = true;
                    }
                }
            }
        }
        Ok(Gradients { params })
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let chunks = n / 8;
    for k in 0..chunks {
        let (ca, cb) = (&a[k * 8..k * 8 + 8], &b[k * 8..k * 8 + 8]);
        for i in 0..8 {
            acc[i] = acc[i] + ca[i] * cb[i];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += s * x`
#[inline]
pub(crate) fn axpy<F: Real>(y: &mut [F], s: F, x: &[F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + s * *xi;
    }
}
