//! Reverse-mode differentiation over complex matrices.
//!
//! Every node holds its forward value. For a real scalar output `L`, the adjoint
//! `Z̄` of a node `Z` is defined by `dL = Re tr(Z̄^H dZ)`, so for a real
//! parameter stored as a complex node with zero imaginary part the partial
//! derivative is `Re Z̄`.

use crate::constraints::EntryJacobian;
use crate::error::{Error, Result};
use crate::linalg::{BlockStructure, Cholesky, ComplexMatrix, C64};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Adjoint(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    AddIdentity(Var),
    InverseHpd(Var),
    LogDetHpd(Var, ComplexMatrix),
    Mask(Var, BlockStructure),
    Entrywise(Var, Vec<EntryJacobian>),
    Sum(Vec<(Var, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: ComplexMatrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<ComplexMatrix>>,
}

impl Adjoints {
    /// Adjoint of `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&ComplexMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<ComplexMatrix>, delta: ComplexMatrix) {
    match slot {
        Some(acc) => acc.axpy(C64::new(1.0, 0.0), &delta).expect("adjoint shapes match their nodes"),
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ComplexMatrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn variable(&mut self, value: ComplexMatrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no adjoint flows into it.
    pub fn constant(&mut self, value: ComplexMatrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &ComplexMatrix {
        &self.nodes[v.0].value
    }

    /// The real part of the `(0,0)` entry, for scalar outputs.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)].re
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    pub fn adjoint(&mut self, a: Var) -> Var {
        let value = self.value(a).adjoint();
        let t = self.tracked(a);
        self.push(value, Op::Adjoint(a), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Sub(a, b), t))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let t = self.tracked(a);
        self.push(value, Op::Scale(a, s), t)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Hadamard(a, b), t))
    }

    /// `X + s I` for square `X`.
    pub fn add_identity(&mut self, a: Var, s: f64) -> Result<Var> {
        let mut value = self.value(a).clone();
        if !value.is_square() {
            return Err(Error::DimensionMismatch {
                op: "add_identity",
                left: value.shape(),
                right: (value.cols(), value.rows()),
            });
        }
        for i in 0..value.rows() {
            value[(i, i)].re += s;
        }
        let t = self.tracked(a);
        Ok(self.push(value, Op::AddIdentity(a), t))
    }

    /// Inverse of a Hermitian positive-definite node.
    pub fn inverse_hpd(&mut self, a: Var) -> Result<Var> {
        let value = Cholesky::new(self.value(a))?.inverse();
        let t = self.tracked(a);
        Ok(self.push(value, Op::InverseHpd(a), t))
    }

    /// Natural log-determinant of a Hermitian positive-definite node, as a `1 x 1` node.
    pub fn ln_det_hpd(&mut self, a: Var) -> Result<Var> {
        let chol = Cholesky::new(self.value(a))?;
        let value = ComplexMatrix::new(1, 1, vec![C64::new(chol.ln_det(), 0.0)])?;
        let t = self.tracked(a);
        let inverse = if t { chol.inverse() } else { ComplexMatrix::zeros(0, 0) };
        Ok(self.push(value, Op::LogDetHpd(a, inverse), t))
    }

    /// Zeroes the off-block entries.
    pub fn mask(&mut self, a: Var, s: BlockStructure) -> Result<Var> {
        let v = self.value(a);
        if v.shape() != s.shape() {
            return Err(Error::DimensionMismatch {
                op: "mask",
                left: v.shape(),
                right: s.shape(),
            });
        }
        let value = v.masked(&s);
        let t = self.tracked(a);
        Ok(self.push(value, Op::Mask(a, s), t))
    }

    /// An entrywise map whose values and real 2x2 Jacobians were computed by the caller.
    pub fn entrywise(&mut self, a: Var, value: ComplexMatrix, jacobians: Vec<EntryJacobian>) -> Result<Var> {
        let shape = self.value(a).shape();
        if value.shape() != shape || jacobians.len() != shape.0 * shape.1 {
            return Err(Error::DimensionMismatch {
                op: "entrywise",
                left: shape,
                right: value.shape(),
            });
        }
        let t = self.tracked(a);
        Ok(self.push(value, Op::Entrywise(a, jacobians), t))
    }

    /// `Σ w_k X_k` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| Error::InvalidArgument("empty weighted sum".into()))?;
        let (r, c) = self.value(first).shape();
        let mut value = ComplexMatrix::zeros(r, c);
        for &(v, w) in terms {
            value.axpy(C64::new(w, 0.0), self.value(v))?;
        }
        let t = terms.iter().any(|&(v, _)| self.tracked(v));
        Ok(self.push(value, Op::Sum(terms.to_vec()), t))
    }

    /// Propagates adjoints from a `1 x 1` real output with seed `1`.
    pub fn backward(&self, output: Var) -> Adjoints {
        let mut grads: Vec<Option<ComplexMatrix>> = vec![None; output.0 + 1];
        let (r, c) = self.value(output).shape();
        grads[output.0] = Some(ComplexMatrix::from_fn(r, c, |_, _| C64::new(1.0, 0.0)));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(ybar) = grads[idx].take() else { continue };
            let send = |grads: &mut Vec<Option<ComplexMatrix>>, v: Var, delta: ComplexMatrix| {
                if self.nodes[v.0].tracked {
                    accumulate(&mut grads[v.0], delta);
                }
            };
            match &node.op {
                Op::Leaf => unreachable!("leaves keep their adjoints"),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.tracked(*a) {
                        send(&mut grads, *a, ybar.matmul_adjoint(bv).expect("shapes recorded"));
                    }
                    if self.tracked(*b) {
                        send(&mut grads, *b, av.adjoint_matmul(&ybar).expect("shapes recorded"));
                    }
                }
                Op::Adjoint(a) => send(&mut grads, *a, ybar.adjoint()),
                Op::Add(a, b) => {
                    send(&mut grads, *a, ybar.clone());
                    send(&mut grads, *b, ybar.clone());
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, ybar.clone());
                    send(&mut grads, *b, ybar.scale(-1.0));
                }
                Op::Scale(a, s) => send(&mut grads, *a, ybar.scale(*s)),
                Op::Hadamard(a, b) => {
                    if self.tracked(*a) {
                        send(&mut grads, *a, self.value(*b).conj().hadamard(&ybar).expect("shapes recorded"));
                    }
                    if self.tracked(*b) {
                        send(&mut grads, *b, self.value(*a).conj().hadamard(&ybar).expect("shapes recorded"));
                    }
                }
                Op::AddIdentity(a) => send(&mut grads, *a, ybar.clone()),
                Op::InverseHpd(a) => {
                    // X̄ = −Y^H Ȳ Y^H with Y Hermitian
                    let y = &node.value;
                    let d = y.matmul(&ybar).expect("square").matmul(y).expect("square").scale(-1.0);
                    send(&mut grads, *a, d);
                }
                Op::LogDetHpd(a, inverse) => {
                    send(&mut grads, *a, inverse.scale(ybar[(0, 0)].re));
                }
                Op::Mask(a, s) => send(&mut grads, *a, ybar.masked(s)),
                Op::Entrywise(a, jac) => {
                    let mut d = ComplexMatrix::zeros(ybar.rows(), ybar.cols());
                    for ((out, y), j) in d.as_mut_slice().iter_mut().zip(ybar.as_slice()).zip(jac) {
                        *out = C64::new(y.re * j[0] + y.im * j[2], y.re * j[1] + y.im * j[3]);
                    }
                    send(&mut grads, *a, d);
                }
                Op::Sum(terms) => {
                    for &(v, w) in terms {
                        send(&mut grads, v, ybar.scale(w));
                    }
                }
            }
        }
        Adjoints { grads }
    }
}
