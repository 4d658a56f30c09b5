//! Matrix-valued computation backends.
//!
//! Filter and network code is written once against [`Backend`]. [`Eval`]
//! runs it on plain matrices; [`Tape`] records every operation so that a
//! reverse sweep can produce gradients with respect to any recorded node.
//! Both backends call the same forward kernels, so a taped run reproduces an
//! evaluated run bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::spd::{self, Mat};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-libm::fabs(x)))
}

/// Operations the tracker needs, over an abstract value handle.
pub trait Backend {
    type V: Clone;

    fn constant(&mut self, m: Mat) -> Self::V;
    /// A differentiable input; equal to `constant` for backends without gradients.
    fn variable(&mut self, m: Mat) -> Self::V {
        self.constant(m)
    }
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Mat;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn transpose(&mut self, a: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    /// `s · a` for a `1×1` handle `s`.
    fn mul_scalar(&mut self, a: &Self::V, s: &Self::V) -> Self::V;
    fn hadamard(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn softplus(&mut self, a: &Self::V) -> Self::V;
    fn ln(&mut self, a: &Self::V) -> Self::V;
    /// `out.data[i] = a.data[idx[i]]`, shaped `rows × cols`.
    fn gather(&mut self, a: &Self::V, idx: &[usize], rows: usize, cols: usize) -> Self::V;
    /// Zero `rows × cols` matrix with `out.data[idx[i]] += a.data[i]`.
    fn scatter(&mut self, a: &Self::V, idx: &[usize], rows: usize, cols: usize) -> Self::V;
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    /// `1×1` sum of squared entries.
    fn sum_sq(&mut self, a: &Self::V) -> Self::V;
    fn cholesky(&mut self, a: &Self::V) -> Result<Self::V>;
    fn solve_spd(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn solve_lower(&mut self, l: &Self::V, b: &Self::V) -> Self::V;
    /// [`spd::symmetrize_project`] with a fixed eigenvalue floor.
    fn sym_project(&mut self, a: &Self::V, eps: f64) -> Self::V;
    /// Records `y = f(x)` whose local derivative is `jac = ∂y/∂x`.
    fn linearized(&mut self, x: &Self::V, y: Mat, jac: Mat) -> Self::V;

    fn symmetrize(&mut self, a: &Self::V) -> Self::V {
        let t = self.transpose(a);
        let s = self.add(a, &t);
        self.scale(&s, 0.5)
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Self::V {
        self.constant(Mat::zeros(rows, cols))
    }
}

/// Plain evaluation, no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eval;

impl Backend for Eval {
    type V = Mat;

    fn constant(&mut self, m: Mat) -> Mat {
        m
    }
    fn value<'a>(&'a self, v: &'a Mat) -> &'a Mat {
        v
    }
    fn add(&mut self, a: &Mat, b: &Mat) -> Mat {
        a.add(b)
    }
    fn sub(&mut self, a: &Mat, b: &Mat) -> Mat {
        a.sub(b)
    }
    fn matmul(&mut self, a: &Mat, b: &Mat) -> Mat {
        a.matmul(b)
    }
    fn transpose(&mut self, a: &Mat) -> Mat {
        a.transpose()
    }
    fn scale(&mut self, a: &Mat, s: f64) -> Mat {
        a.scale(s)
    }
    fn mul_scalar(&mut self, a: &Mat, s: &Mat) -> Mat {
        a.scale(s.data()[0])
    }
    fn hadamard(&mut self, a: &Mat, b: &Mat) -> Mat {
        a.hadamard(b)
    }
    fn sigmoid(&mut self, a: &Mat) -> Mat {
        a.map(sigmoid)
    }
    fn tanh(&mut self, a: &Mat) -> Mat {
        a.map(libm::tanh)
    }
    fn softplus(&mut self, a: &Mat) -> Mat {
        a.map(softplus)
    }
    fn ln(&mut self, a: &Mat) -> Mat {
        a.map(libm::log)
    }
    fn gather(&mut self, a: &Mat, idx: &[usize], rows: usize, cols: usize) -> Mat {
        gather_kernel(a, idx, rows, cols)
    }
    fn scatter(&mut self, a: &Mat, idx: &[usize], rows: usize, cols: usize) -> Mat {
        scatter_kernel(a, idx, rows, cols)
    }
    fn concat(&mut self, parts: &[Mat]) -> Mat {
        let refs: Vec<&Mat> = parts.iter().collect();
        Mat::vstack(&refs)
    }
    fn sum_sq(&mut self, a: &Mat) -> Mat {
        Mat::col(&[a.sum_sq()])
    }
    fn cholesky(&mut self, a: &Mat) -> Result<Mat> {
        spd::cholesky(a)
    }
    fn solve_spd(&mut self, a: &Mat, b: &Mat) -> Result<Mat> {
        spd::solve_spd(a, b)
    }
    fn solve_lower(&mut self, l: &Mat, b: &Mat) -> Mat {
        spd::solve_lower(l, b)
    }
    fn sym_project(&mut self, a: &Mat, eps: f64) -> Mat {
        spd::symmetrize_project(a, eps)
    }
    fn linearized(&mut self, _x: &Mat, y: Mat, _jac: Mat) -> Mat {
        y
    }
    fn symmetrize(&mut self, a: &Mat) -> Mat {
        a.symmetrize()
    }
}

fn gather_kernel(a: &Mat, idx: &[usize], rows: usize, cols: usize) -> Mat {
    assert_eq!(idx.len(), rows * cols, "gather: index count");
    Mat::from_vec(rows, cols, idx.iter().map(|&i| a.data()[i]).collect())
}

fn scatter_kernel(a: &Mat, idx: &[usize], rows: usize, cols: usize) -> Mat {
    assert_eq!(idx.len(), a.data().len(), "scatter: index count");
    let mut out = Mat::zeros(rows, cols);
    for (v, &i) in a.data().iter().zip(idx) {
        out.data_mut()[i] += v;
    }
    out
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    MulScalar(usize, usize),
    Hadamard(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Ln(usize),
    Gather(usize, Vec<usize>),
    Scatter(usize, Vec<usize>),
    Concat(Vec<usize>),
    SumSq(usize),
    Cholesky(usize),
    SolveSpd(usize, usize),
    SolveLower(usize, usize),
    SymProject { input: usize, eps: f64, clamped: bool },
    Linearized(usize, Mat),
    Symmetrize(usize),
}

impl Op {
    /// Whether any operand of this operation carries a gradient.
    fn needs_grad(&self, nodes: &[Node]) -> bool {
        let g = |i: &usize| nodes[*i].grad;
        match self {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::MatMul(a, b)
            | Op::MulScalar(a, b)
            | Op::Hadamard(a, b)
            | Op::SolveSpd(a, b)
            | Op::SolveLower(a, b) => g(a) || g(b),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Ln(a)
            | Op::Gather(a, _)
            | Op::Scatter(a, _)
            | Op::SumSq(a)
            | Op::Cholesky(a)
            | Op::SymProject { input: a, .. }
            | Op::Linearized(a, _)
            | Op::Symmetrize(a) => g(a),
            Op::Concat(parts) => parts.iter().any(g),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Mat,
    op: Op,
    /// Whether any gradient leaf feeds this node.
    grad: bool,
}

/// Fault injected into one adjoint rule; used to prove a gradient checker can
/// tell a broken backward pass from a correct one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointFault {
    /// Drops the `−Ā` contribution to the matrix argument of SPD solves.
    SolveMatrixArgument,
    /// Scales the tanh derivative by 1/2.
    HalfTanh,
}

/// Wengert list of matrix operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<AdjointFault>,
}

/// Adjoints produced by [`Tape::backward`], one slot per recorded node.
#[derive(Clone, Debug)]
pub struct Adjoints {
    grads: Vec<Option<Mat>>,
}

impl Adjoints {
    /// Gradient of the output with respect to `v`; `None` when `v` does not
    /// influence the output.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the output with respect to `v`, zero-filled when absent.
    pub fn get_or_zero(&self, v: Var, rows: usize, cols: usize) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Tape whose backward sweep carries a deliberate error.
    pub fn with_fault(fault: AdjointFault) -> Self {
        Tape { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.nodes.push(Node { value: m, op: Op::Leaf, grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A node no gradient flows into.
    pub fn constant_leaf(&mut self, m: Mat) -> Var {
        self.nodes.push(Node { value: m, op: Op::Leaf, grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let grad = op.needs_grad(&self.nodes);
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &Mat {
        &self.nodes[i].value
    }

    /// Reverse sweep from a `1×1` output node seeded with 1.
    pub fn backward(&self, output: Var) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::TapeEmpty);
        }
        if self.val(output.0).shape() != (1, 1) {
            return Err(Error::ShapeMismatch);
        }
        let mut grads: Vec<Option<Mat>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Mat::col(&[1.0]));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, &g.scale(-1.0));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.nodes[*a].grad {
                    match &mut grads[*a] {
                        Some(acc) => matmul_bt_add(acc, g, bv),
                        slot @ None => *slot = Some(matmul_bt(g, bv)),
                    }
                }
                if self.nodes[*b].grad {
                    accumulate(grads, *b, &matmul_at(av, g));
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, &g.transpose()),
            Op::Scale(a, s) => accumulate(grads, *a, &g.scale(*s)),
            Op::MulScalar(a, s) => {
                let sv = self.val(*s).data()[0];
                accumulate(grads, *a, &g.scale(sv));
                let ds: f64 = g.data().iter().zip(self.val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *s, &Mat::col(&[ds]));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                accumulate(grads, *a, &g.hadamard(bv));
                accumulate(grads, *b, &g.hadamard(av));
            }
            Op::Sigmoid(a) => {
                let d = node.value.map(|y| y * (1.0 - y));
                accumulate(grads, *a, &g.hadamard(&d));
            }
            Op::Tanh(a) => {
                let k = if self.fault == Some(AdjointFault::HalfTanh) { 0.5 } else { 1.0 };
                let d = node.value.map(|y| k * (1.0 - y * y));
                accumulate(grads, *a, &g.hadamard(&d));
            }
            Op::Softplus(a) => {
                let d = self.val(*a).map(sigmoid);
                accumulate(grads, *a, &g.hadamard(&d));
            }
            Op::Ln(a) => {
                let d = g.zip_map(self.val(*a), |gv, x| gv / x);
                accumulate(grads, *a, &d);
            }
            Op::Gather(a, idx) => {
                let (r, c) = self.val(*a).shape();
                accumulate(grads, *a, &scatter_kernel(g, idx, r, c));
            }
            Op::Scatter(a, idx) => {
                let (r, c) = self.val(*a).shape();
                accumulate(grads, *a, &gather_kernel(g, idx, r, c));
            }
            Op::Concat(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).data().len();
                    let rows = self.val(p).rows();
                    let piece = Mat::from_vec(rows, cols, g.data()[offset..offset + n].to_vec());
                    accumulate(grads, p, &piece);
                    offset += n;
                }
            }
            Op::SumSq(a) => {
                let k = 2.0 * g.data()[0];
                accumulate(grads, *a, &self.val(*a).scale(k));
            }
            Op::Cholesky(a) => accumulate(grads, *a, &cholesky_adjoint(&node.value, g)),
            Op::SolveSpd(a, b) => {
                let x = &node.value;
                // the factorisation succeeded in the forward pass
                let gb = spd::solve_spd(self.val(*a), g).expect("solve adjoint on a factored matrix");
                if self.fault != Some(AdjointFault::SolveMatrixArgument) {
                    accumulate(grads, *a, &matmul_bt(&gb, x).scale(-1.0));
                }
                accumulate(grads, *b, &gb);
            }
            Op::SolveLower(l, b) => {
                let lv = self.val(*l);
                let gb = spd::solve_lower_transpose(lv, g);
                let mut gl = matmul_bt(&gb, &node.value).scale(-1.0);
                tril_in_place(&mut gl);
                accumulate(grads, *l, &gl);
                accumulate(grads, *b, &gb);
            }
            Op::SymProject { input, eps, clamped } => {
                let gs = g.symmetrize();
                if !*clamped {
                    accumulate(grads, *input, &gs);
                } else {
                    let s = self.val(*input).symmetrize();
                    let (vals, vecs) = spd::sym_eigen(&s).expect("eigendecomposition of a finite matrix");
                    accumulate(grads, *input, &clamp_adjoint(&vals, &vecs, *eps, &gs));
                }
            }
            Op::Linearized(x, jac) => accumulate(grads, *x, &matmul_at(jac, g)),
            Op::Symmetrize(a) => accumulate(grads, *a, &g.symmetrize()),
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], i: usize, g: &Mat) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

/// `a · bᵀ`
fn matmul_bt(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows(), b.rows());
    matmul_bt_add(&mut out, a, b);
    out
}

/// `out += a · bᵀ`
fn matmul_bt_add(out: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.cols(), b.cols());
    let (n, m, k) = (a.rows(), b.rows(), a.cols());
    assert_eq!(out.shape(), (n, m));
    let (ad, bd) = (a.data(), b.data());
    if k == 1 {
        for (row, &x) in out.data_mut().chunks_exact_mut(m.max(1)).zip(ad) {
            if x != 0.0 {
                for (d, &y) in row.iter_mut().zip(bd) {
                    *d += x * y;
                }
            }
        }
        return;
    }
    for i in 0..n {
        let ar = &ad[i * k..(i + 1) * k];
        if ar.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..m {
            let br = &bd[j * k..(j + 1) * k];
            out[(i, j)] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `aᵀ · b`
fn matmul_at(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows(), b.rows());
    let (n, m) = (a.cols(), b.cols());
    let mut out = Mat::zeros(n, m);
    if m == 1 {
        for (ar, &y) in a.data().chunks_exact(n.max(1)).zip(b.data()) {
            if y == 0.0 {
                continue;
            }
            for (d, &x) in out.data_mut().iter_mut().zip(ar) {
                *d += x * y;
            }
        }
        return out;
    }
    for r in 0..a.rows() {
        let ar = &a.data()[r * n..(r + 1) * n];
        let br = &b.data()[r * m..(r + 1) * m];
        for (i, &x) in ar.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let dst = &mut out.data_mut()[i * m..(i + 1) * m];
            for (d, &y) in dst.iter_mut().zip(br) {
                *d += x * y;
            }
        }
    }
    out
}

fn tril_in_place(m: &mut Mat) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            m[(i, j)] = 0.0;
        }
    }
}

/// Symmetric adjoint of `A` for `L = chol(A)` given `L̄`.
fn cholesky_adjoint(l: &Mat, gl: &Mat) -> Mat {
    let mut glt = gl.clone();
    tril_in_place(&mut glt);
    let mut phi = matmul_at(l, &glt);
    tril_in_place(&mut phi);
    for i in 0..phi.rows() {
        phi[(i, i)] *= 0.5;
    }
    // L⁻ᵀ Φ L⁻¹
    let left = spd::solve_lower_transpose(l, &phi);
    let s = spd::solve_lower_transpose(l, &left.transpose()).transpose();
    s.symmetrize()
}

/// Daleckii–Krein adjoint of `V·max(Λ, eps)·Vᵀ`.
fn clamp_adjoint(vals: &[f64], vecs: &Mat, eps: f64, gs: &Mat) -> Mat {
    let n = vals.len();
    let f = |l: f64| l.max(eps);
    let df = |l: f64| if l > eps { 1.0 } else { 0.0 };
    let inner = matmul_at(vecs, gs).matmul(vecs);
    let mut weighted = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let gap = vals[i] - vals[j];
            let w = if libm::fabs(gap) > 1e-12 * (1.0 + libm::fabs(vals[i])) {
                (f(vals[i]) - f(vals[j])) / gap
            } else {
                df(vals[i])
            };
            weighted[(i, j)] = w * inner[(i, j)];
        }
    }
    matmul_bt(&vecs.matmul(&weighted), vecs).symmetrize()
}

impl Backend for Tape {
    type V = Var;

    fn constant(&mut self, m: Mat) -> Var {
        self.constant_leaf(m)
    }
    fn variable(&mut self, m: Mat) -> Var {
        self.leaf(m)
    }
    fn value<'a>(&'a self, v: &'a Var) -> &'a Mat {
        &self.nodes[v.0].value
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a.0).add(self.val(b.0));
        self.push(v, Op::Add(a.0, b.0))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a.0).sub(self.val(b.0));
        self.push(v, Op::Sub(a.0, b.0))
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a.0).matmul(self.val(b.0));
        self.push(v, Op::MatMul(a.0, b.0))
    }
    fn transpose(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).transpose();
        self.push(v, Op::Transpose(a.0))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let v = self.val(a.0).scale(s);
        self.push(v, Op::Scale(a.0, s))
    }
    fn mul_scalar(&mut self, a: &Var, s: &Var) -> Var {
        let v = self.val(a.0).scale(self.val(s.0).data()[0]);
        self.push(v, Op::MulScalar(a.0, s.0))
    }
    fn hadamard(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(a.0).hadamard(self.val(b.0));
        self.push(v, Op::Hadamard(a.0, b.0))
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }
    fn tanh(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(libm::tanh);
        self.push(v, Op::Tanh(a.0))
    }
    fn softplus(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(softplus);
        self.push(v, Op::Softplus(a.0))
    }
    fn ln(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).map(libm::log);
        self.push(v, Op::Ln(a.0))
    }
    fn gather(&mut self, a: &Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        let v = gather_kernel(self.val(a.0), idx, rows, cols);
        self.push(v, Op::Gather(a.0, idx.to_vec()))
    }
    fn scatter(&mut self, a: &Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        let v = scatter_kernel(self.val(a.0), idx, rows, cols);
        self.push(v, Op::Scatter(a.0, idx.to_vec()))
    }
    fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Mat> = parts.iter().map(|p| self.val(p.0)).collect();
        let v = Mat::vstack(&refs);
        self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }
    fn sum_sq(&mut self, a: &Var) -> Var {
        let v = Mat::col(&[self.val(a.0).sum_sq()]);
        self.push(v, Op::SumSq(a.0))
    }
    fn cholesky(&mut self, a: &Var) -> Result<Var> {
        let v = spd::cholesky(self.val(a.0))?;
        Ok(self.push(v, Op::Cholesky(a.0)))
    }
    fn solve_spd(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = spd::solve_spd(self.val(a.0), self.val(b.0))?;
        Ok(self.push(v, Op::SolveSpd(a.0, b.0)))
    }
    fn solve_lower(&mut self, l: &Var, b: &Var) -> Var {
        let v = spd::solve_lower(self.val(l.0), self.val(b.0));
        self.push(v, Op::SolveLower(l.0, b.0))
    }
    fn sym_project(&mut self, a: &Var, eps: f64) -> Var {
        let input = self.val(a.0);
        let v = spd::symmetrize_project(input, eps);
        let clamped = v != input.symmetrize();
        self.push(v, Op::SymProject { input: a.0, eps, clamped })
    }
    fn linearized(&mut self, x: &Var, y: Mat, jac: Mat) -> Var {
        self.push(y, Op::Linearized(x.0, jac))
    }
    fn symmetrize(&mut self, a: &Var) -> Var {
        let v = self.val(a.0).symmetrize();
        self.push(v, Op::Symmetrize(a.0))
    }
}
