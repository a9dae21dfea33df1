//! Differentiable vector and matrix helpers used by the losses and the model.

use super::{Tape, Var};
use crate::error::{Error, Result};

pub fn sum<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    let mut acc = tape.constant(0.0);
    for &x in xs {
        acc = acc + x;
    }
    acc
}

pub fn mean<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    sum(tape, xs) / xs.len() as f64
}

pub fn dot<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    assert_eq!(a.len(), b.len(), "dot of mismatched lengths");
    assert!(!a.is_empty(), "dot of empty vectors");
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

pub fn norm<'t>(a: &[Var<'t>]) -> Var<'t> {
    dot(a, a).sqrt()
}

pub fn add_vec<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Vec<Var<'t>> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn scale<'t>(xs: &[Var<'t>], k: f64) -> Vec<Var<'t>> {
    xs.iter().map(|&x| x * k).collect()
}

/// `w` is row-major (rows = outputs). Returns `w · x`.
pub fn matvec<'t>(w: &[Vec<Var<'t>>], x: &[Var<'t>]) -> Vec<Var<'t>> {
    w.iter().map(|row| dot(row, x)).collect()
}

/// Numerically stable softmax: shifting by the (constant) max changes
/// neither the value nor the gradient.
pub fn softmax<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Vec<Var<'t>> {
    let max = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = tape.constant(max);
    let exps: Vec<Var> = xs.iter().map(|&x| (x - shift).exp()).collect();
    let total = sum(tape, &exps);
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity of two vectors. No epsilon smoothing: a zero-norm
/// input is an error, so silent degradation cannot hide in gradient checks.
pub fn cosine_sim<'t>(u: &[Var<'t>], v: &[Var<'t>]) -> Result<Var<'t>> {
    if u.is_empty() || u.len() != v.len() {
        return Err(Error::DimMismatch(format!(
            "cosine_sim expects equal nonzero dimensions, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu.value() == 0.0 {
        return Err(Error::ZeroNorm("cosine_sim first argument".into()));
    }
    if nv.value() == 0.0 {
        return Err(Error::ZeroNorm("cosine_sim second argument".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Entry `(i, j)` is the cosine similarity of row `i` of `a` and row `j` of `b`.
pub fn similarity_matrix<'t>(
    a: &[Vec<Var<'t>>],
    b: &[Vec<Var<'t>>],
) -> Result<Vec<Vec<Var<'t>>>> {
    let dim = a
        .first()
        .or_else(|| b.first())
        .map(|r| r.len())
        .unwrap_or(0);
    for (name, m) in [("A", a), ("B", b)] {
        for (i, row) in m.iter().enumerate() {
            if row.len() != dim || dim == 0 {
                return Err(Error::DimMismatch(format!(
                    "similarity_matrix {name} row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            if dot(row, row).value() == 0.0 {
                return Err(Error::ZeroNorm(format!("similarity_matrix {name} row {i}")));
            }
        }
    }
    a.iter()
        .map(|ra| b.iter().map(|rb| cosine_sim(ra, rb)).collect())
        .collect()
}
