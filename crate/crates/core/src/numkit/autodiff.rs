//! Tape-based reverse-mode differentiation over a closed set of vector
//! operations (slice, add, sub, mul, scale, matvec, dot, norm, sum,
//! index, log-sum-exp, divide-by-scalar).
//!
//! The tape is generic over its scalar type. Recording a loss on a
//! `Tape<f64>` and running [`Tape::backward`] gives the gradient. Recording
//! the same program on a `Tape<Dual>` whose parameter tangents hold a
//! direction `v` differentiates the gradient program a second time
//! (forward-over-reverse): the tangent part of the reverse sweep is the
//! exact Hessian-vector product `H·v`.
//!
//! ```
//! use metatrack_core::numkit::{gradient, Objective, Scalar, Tape, Var};
//!
//! struct HalfSquaredNorm;
//! impl Objective for HalfSquaredNorm {
//!     fn dim(&self) -> usize { 2 }
//!     fn build<T: Scalar>(&self, tape: &mut Tape<T>, theta: Var) -> Var {
//!         let n = tape.dot(theta, theta);
//!         tape.scale(n, 0.5)
//!     }
//! }
//!
//! let g = gradient(&HalfSquaredNorm, &[1.0, 1.0]).unwrap();
//! assert_eq!(g.as_slice(), &[1.0, 1.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::{NumError, Vector};

/// Scalar field the tape computes over.
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal (real) part.
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = libm::exp(self.re);
        Dual::new(e, e * self.eps)
    }
    fn ln(self) -> Self {
        Dual::new(libm::log(self.re), self.eps / self.re)
    }
    fn sqrt(self) -> Self {
        let s = libm::sqrt(self.re);
        Dual::new(s, self.eps / (2.0 * s))
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Slice { src: usize, start: usize },
    MatVec { mat: usize, x: usize, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Dot(usize, usize),
    Norm(usize),
    LogSumExp(usize),
    Index(usize, usize),
    Sum(usize),
    DivScalar(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Slice { .. } => "slice",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Dot(..) => "dot",
            Op::Norm(..) => "norm",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::Index(..) => "index",
            Op::Sum(..) => "sum",
            Op::DivScalar(..) => "div_scalar",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    value: Vec<T>,
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    non_finite: Option<&'static str>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), non_finite: None }
    }

    fn push(&mut self, op: Op, value: Vec<T>, needs_grad: bool) -> Var {
        if self.non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, values: Vec<T>) -> Var {
        self.push(Op::Leaf, values, true)
    }

    /// A constant input; no adjoint is accumulated for it.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        let v = values.iter().map(|&x| T::from_f64(x)).collect();
        self.push(Op::Leaf, v, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Name of the first operation that produced a non-finite value.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[src.0].value[start..start + len].to_vec();
        let g = self.needs(src);
        self.push(Op::Slice { src: src.0, start }, value, g)
    }

    /// `mat` holds a `rows × cols` matrix in row-major order.
    pub fn matvec(&mut self, mat: Var, x: Var, rows: usize, cols: usize) -> Var {
        let m = &self.nodes[mat.0].value;
        let xv = &self.nodes[x.0].value;
        assert_eq!(m.len(), rows * cols, "matvec: matrix shape");
        assert_eq!(xv.len(), cols, "matvec: vector length");
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &m[r * cols..(r + 1) * cols];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(xv) {
                acc = acc + *a * *b;
            }
            out.push(acc);
        }
        let g = self.needs(mat) || self.needs(x);
        self.push(Op::MatVec { mat: mat.0, x: x.0, rows, cols }, out, g)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "{}: operand lengths", op.name());
        let out = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        let g = self.needs(a) || self.needs(b);
        self.push(op, out, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        let out = self.nodes[a.0].value.iter().map(|x| *x * k).collect();
        let g = self.needs(a);
        self.push(Op::Scale(a.0, c), out, g)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "dot: operand lengths");
        let mut acc = T::zero();
        for (x, y) in av.iter().zip(bv) {
            acc = acc + *x * *y;
        }
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Dot(a.0, b.0), vec![acc], g)
    }

    /// Euclidean norm.
    pub fn norm(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for x in &self.nodes[a.0].value {
            acc = acc + *x * *x;
        }
        let g = self.needs(a);
        self.push(Op::Norm(a.0), vec![acc.sqrt()], g)
    }

    /// `ln Σ exp(a_i)`, shifted by the largest primal entry.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mut m = av[0];
        for x in av.iter().skip(1) {
            if x.re() > m.re() {
                m = *x;
            }
        }
        let mut s = T::zero();
        for x in av {
            s = s + (*x - m).exp();
        }
        let out = m + s.ln();
        let g = self.needs(a);
        self.push(Op::LogSumExp(a.0), vec![out], g)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = self.nodes[a.0].value[i];
        let g = self.needs(a);
        self.push(Op::Index(a.0, i), vec![v], g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for x in &self.nodes[a.0].value {
            acc = acc + *x;
        }
        let g = self.needs(a);
        self.push(Op::Sum(a.0), vec![acc], g)
    }

    /// Divide every entry of `a` by the single-entry node `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.len_of(s), 1, "div_scalar: divisor must be scalar");
        let d = self.nodes[s.0].value[0];
        let out = self.nodes[a.0].value.iter().map(|x| *x / d).collect();
        let g = self.needs(a) || self.needs(s);
        self.push(Op::DivScalar(a.0, s.0), out, g)
    }

    /// Reverse sweep from the scalar node `output`. Returns the adjoint of
    /// every node (empty for nodes that do not need gradients).
    pub fn backward(&self, output: Var) -> Result<Vec<Vec<T>>, NumError> {
        assert_eq!(self.len_of(output), 1, "backward: output must be scalar");
        let n = output.0 + 1;
        let mut adj: Vec<Vec<T>> = (0..n)
            .map(|i| if self.nodes[i].needs_grad { vec![T::zero(); self.nodes[i].value.len()] } else { Vec::new() })
            .collect();
        if !self.nodes[output.0].needs_grad {
            return Ok(adj);
        }
        adj[output.0][0] = T::one();

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op;
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = core::mem::take(&mut adj[i]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFinite { op: op.name() });
            }
            match op {
                Op::Leaf => {}
                Op::Slice { src, start } => {
                    for (k, gk) in g.iter().enumerate() {
                        adj[src][start + k] = adj[src][start + k] + *gk;
                    }
                }
                Op::MatVec { mat, x, rows, cols } => {
                    let mv = &self.nodes[mat].value;
                    let xv = &self.nodes[x].value;
                    if self.nodes[mat].needs_grad {
                        for (row, gr) in adj[mat].chunks_mut(cols).zip(&g[..rows]) {
                            for (a, xc) in row.iter_mut().zip(xv) {
                                *a = *a + *gr * *xc;
                            }
                        }
                    }
                    if self.nodes[x].needs_grad {
                        for c in 0..cols {
                            let mut acc = adj[x][c];
                            for r in 0..rows {
                                acc = acc + g[r] * mv[r * cols + c];
                            }
                            adj[x][c] = acc;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, &self.nodes, a, &g, |gk, _| gk);
                    accumulate(&mut adj, &self.nodes, b, &g, |gk, _| gk);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, &self.nodes, a, &g, |gk, _| gk);
                    accumulate(&mut adj, &self.nodes, b, &g, |gk, _| -gk);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    accumulate(&mut adj, &self.nodes, a, &g, |gk, k| gk * bv[k]);
                    accumulate(&mut adj, &self.nodes, b, &g, |gk, k| gk * av[k]);
                }
                Op::Scale(a, c) => {
                    let k = T::from_f64(c);
                    accumulate(&mut adj, &self.nodes, a, &g, |gk, _| gk * k);
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    if self.nodes[a].needs_grad {
                        for k in 0..av.len() {
                            adj[a][k] = adj[a][k] + g0 * bv[k];
                        }
                    }
                    if self.nodes[b].needs_grad {
                        for k in 0..bv.len() {
                            adj[b][k] = adj[b][k] + g0 * av[k];
                        }
                    }
                }
                Op::Norm(a) => {
                    let nrm = self.nodes[i].value[0];
                    if nrm.re() == 0.0 {
                        return Err(NumError::ZeroNorm { op: "norm" });
                    }
                    let s = g[0] / nrm;
                    let av = &self.nodes[a].value;
                    for k in 0..av.len() {
                        adj[a][k] = adj[a][k] + s * av[k];
                    }
                }
                Op::LogSumExp(a) => {
                    let out = self.nodes[i].value[0];
                    let av = &self.nodes[a].value;
                    for k in 0..av.len() {
                        adj[a][k] = adj[a][k] + g[0] * (av[k] - out).exp();
                    }
                }
                Op::Index(a, k) => {
                    adj[a][k] = adj[a][k] + g[0];
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    for v in adj[a].iter_mut() {
                        *v = *v + g0;
                    }
                }
                Op::DivScalar(a, s) => {
                    let d = self.nodes[s].value[0];
                    if self.nodes[a].needs_grad {
                        for k in 0..g.len() {
                            adj[a][k] = adj[a][k] + g[k] / d;
                        }
                    }
                    if self.nodes[s].needs_grad {
                        // d(a/s)/ds = -a/s² = -(a/s)/s
                        let out = &self.nodes[i].value;
                        let mut acc = T::zero();
                        for k in 0..g.len() {
                            acc = acc + g[k] * out[k];
                        }
                        adj[s][0] = adj[s][0] - acc / d;
                    }
                }
            }
            adj[i] = g;
        }
        Ok(adj)
    }
}

fn accumulate<T: Scalar>(adj: &mut [Vec<T>], nodes: &[Node<T>], target: usize, g: &[T], f: impl Fn(T, usize) -> T) {
    if !nodes[target].needs_grad {
        return;
    }
    for (k, gk) in g.iter().enumerate() {
        adj[target][k] = adj[target][k] + f(*gk, k);
    }
}

/// A scalar loss over a flat parameter vector, expressed as a tape
/// program so it can be evaluated at any [`Scalar`] type.
pub trait Objective {
    /// Length of the parameter vector.
    fn dim(&self) -> usize;

    /// Record the loss at `theta` (a parameter node of length `dim()`)
    /// and return the scalar output node.
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, theta: Var) -> Var;
}

fn check_dim<O: Objective + ?Sized>(obj: &O, at: &[f64]) -> Result<(), NumError> {
    if at.len() != obj.dim() {
        return Err(NumError::LengthMismatch { left: at.len(), right: obj.dim() });
    }
    if at.is_empty() {
        return Err(NumError::Empty);
    }
    Ok(())
}

/// Loss value at `at`.
pub fn value<O: Objective + ?Sized>(obj: &O, at: &[f64]) -> Result<f64, NumError> {
    check_dim(obj, at)?;
    let mut tape = Tape::<f64>::new();
    let theta = tape.param(at.to_vec());
    let out = obj.build(&mut tape, theta);
    if let Some(op) = tape.non_finite() {
        return Err(NumError::NonFinite { op });
    }
    Ok(tape.value(out)[0])
}

/// Loss value and exact gradient at `at`.
pub fn value_and_gradient<O: Objective + ?Sized>(obj: &O, at: &[f64]) -> Result<(f64, Vector), NumError> {
    check_dim(obj, at)?;
    let mut tape = Tape::<f64>::new();
    let theta = tape.param(at.to_vec());
    let out = obj.build(&mut tape, theta);
    if let Some(op) = tape.non_finite() {
        return Err(NumError::NonFinite { op });
    }
    let mut adj = tape.backward(out)?;
    let g = core::mem::take(&mut adj[theta.0]);
    Ok((tape.value(out)[0], Vector::new(g)?))
}

/// Exact reverse-mode gradient at `at`.
pub fn gradient<O: Objective + ?Sized>(obj: &O, at: &[f64]) -> Result<Vector, NumError> {
    value_and_gradient(obj, at).map(|(_, g)| g)
}

/// Exact `∇²L(at)·v`, by forward-mode differentiation of the reverse sweep.
pub fn hessian_vector_product<O: Objective + ?Sized>(obj: &O, at: &[f64], v: &[f64]) -> Result<Vector, NumError> {
    check_dim(obj, at)?;
    if v.len() != at.len() {
        return Err(NumError::LengthMismatch { left: v.len(), right: at.len() });
    }
    let mut tape = Tape::<Dual>::new();
    let seeds = at.iter().zip(v).map(|(&a, &d)| Dual::new(a, d)).collect();
    let theta = tape.param(seeds);
    let out = obj.build(&mut tape, theta);
    if let Some(op) = tape.non_finite() {
        return Err(NumError::NonFinite { op });
    }
    let adj = tape.backward(out)?;
    Vector::new(adj[theta.0].iter().map(|d| d.eps).collect())
}
