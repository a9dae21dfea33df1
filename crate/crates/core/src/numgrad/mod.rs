//! Reverse-mode automatic differentiation over an explicit expression record.
//!
//! Every differentiable quantity in this crate is a [`Var`] registered on a
//! [`Tape`]. The tape stores nodes in the order they were built, which is a
//! valid topological order, so the backward pass is a single reverse sweep
//! that touches each node exactly once. All arithmetic is `f64`.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

mod check;
mod linalg;

pub use check::{grad_check, grad_check_stencil, relative_error, GradReport, Stencil};
pub use linalg::{
    add_vec, cosine_sim, dot, matvec, mean, norm, scale, similarity_matrix, softmax, sum,
};

#[derive(Clone, Copy)]
enum Op {
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Tanh(u32),
    Sigmoid(u32),
}

struct Node {
    val: f64,
    op: Op,
}

/// How [`Var::detach`] resolves values. `Live` is the normal mode. The
/// gradient checker freezes detached subexpressions at the base point:
/// the analytic pass records them, the perturbed passes replay them, so
/// central differences measure exactly the function the backward pass
/// differentiates.
pub(crate) enum DetachLog {
    Live,
    Record(Vec<f64>),
    Replay { values: Vec<f64>, next: usize },
}

/// Expression record for one evaluation. Single-threaded by construction;
/// distinct tapes are independent and may be used from different threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    detach_log: RefCell<DetachLog>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            detach_log: RefCell::new(DetachLog::Live),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            detach_log: RefCell::new(DetachLog::Live),
        }
    }

    pub(crate) fn recording_detaches() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            detach_log: RefCell::new(DetachLog::Record(Vec::new())),
        }
    }

    pub(crate) fn replaying_detaches(values: Vec<f64>) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            detach_log: RefCell::new(DetachLog::Replay { values, next: 0 }),
        }
    }

    pub(crate) fn take_detach_log(&self) -> Vec<f64> {
        match std::mem::replace(&mut *self.detach_log.borrow_mut(), DetachLog::Live) {
            DetachLog::Record(values) => values,
            _ => Vec::new(),
        }
    }

    /// A differentiable input. Gradients accumulate into leaves.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A constant: carries a value, never a gradient.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(value, Op::Const)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, val: f64, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { val, op });
        Var { tape: self, idx }
    }
}

/// A scalar on a [`Tape`]. `Copy`, so expressions read naturally.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var[{}] = {}", self.idx, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx as usize].val
    }

    /// Same value, zero gradient through the result.
    pub fn detach(self) -> Var<'t> {
        let live = self.value();
        let frozen = {
            let mut log = self.tape.detach_log.borrow_mut();
            match &mut *log {
                DetachLog::Live => live,
                DetachLog::Record(values) => {
                    values.push(live);
                    live
                }
                DetachLog::Replay { values, next } => {
                    let v = values.get(*next).copied().unwrap_or_else(|| {
                        panic!("detach replay exhausted: expression structure must not depend on input values")
                    });
                    *next += 1;
                    v
                }
            }
        };
        self.tape.constant(frozen)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.idx), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.idx), f64::sqrt)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.idx), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), |x| 1.0 / (1.0 + (-x).exp()))
    }

    fn unary(self, op: Op, f: impl FnOnce(f64) -> f64) -> Var<'t> {
        self.tape.push(f(self.value()), op)
    }

    fn binary(self, rhs: Var<'t>, op: Op, f: impl FnOnce(f64, f64) -> f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        self.tape.push(f(self.value(), rhs.value()), op)
    }

    /// Reverse sweep seeded with d(self)/d(self) = 1.
    pub fn backward(self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        let mut grads = vec![0.0; nodes.len()];
        grads[self.idx as usize] = 1.0;
        for i in (0..=self.idx as usize).rev() {
            let g = grads[i];
            if g == 0.0 {
                continue;
            }
            match nodes[i].op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    grads[a as usize] += g;
                    grads[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    grads[a as usize] += g;
                    grads[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    grads[a as usize] += g * nodes[b as usize].val;
                    grads[b as usize] += g * nodes[a as usize].val;
                }
                Op::Div(a, b) => {
                    let bv = nodes[b as usize].val;
                    grads[a as usize] += g / bv;
                    grads[b as usize] -= g * nodes[i].val / bv;
                }
                Op::Neg(a) => grads[a as usize] -= g,
                Op::Exp(a) => grads[a as usize] += g * nodes[i].val,
                Op::Ln(a) => grads[a as usize] += g / nodes[a as usize].val,
                Op::Sqrt(a) => grads[a as usize] += g / (2.0 * nodes[i].val),
                Op::Tanh(a) => {
                    let y = nodes[i].val;
                    grads[a as usize] += g * (1.0 - y * y);
                }
                Op::Sigmoid(a) => {
                    let y = nodes[i].val;
                    grads[a as usize] += g * y * (1.0 - y);
                }
            }
        }
        Gradients { grads }
    }
}

/// Adjoints produced by [`Var::backward`].
pub struct Gradients {
    grads: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> f64 {
        self.grads[var.idx as usize]
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.idx, rhs.idx), |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.idx, rhs.idx), |a, b| a - b)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul(self.idx, rhs.idx), |a, b| a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div(self.idx, rhs.idx), |a, b| a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(-self.value(), Op::Neg(self.idx))
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self + self.tape.constant(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self - self.tape.constant(rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self * self.tape.constant(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self / self.tape.constant(rhs)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.constant(self) - rhs
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.constant(self) * rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let y = x * x;
        let g = y.backward();
        assert_eq!(y.value(), 9.0);
        assert_eq!(g.get(x), 6.0);
    }

    #[test]
    fn fan_out_and_chain() {
        // f(x) = x^2 + exp(x) * x at x = 0.5
        let tape = Tape::new();
        let x = tape.leaf(0.5);
        let y = x * x + x.exp() * x;
        let g = y.backward();
        let expect = 2.0 * 0.5 + 0.5f64.exp() * 0.5 + 0.5f64.exp();
        assert!((g.get(x) - expect).abs() < 1e-14);
    }

    #[test]
    fn detach_blocks_gradient() {
        // d/dx [detach(x) * x] at x = 3 is value(x) = 3, not 2x.
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let y = x.detach() * x;
        let g = y.backward();
        assert_eq!(y.value(), 9.0);
        assert_eq!(g.get(x), 3.0);
    }

    #[test]
    fn detach_preserves_value() {
        let tape = Tape::new();
        let x = tape.leaf(1.75);
        assert_eq!(x.detach().value(), x.value());
    }

    #[test]
    fn detach_equals_numeric_constant() {
        // Replacing detach(e) with constant(value(e)) changes no gradient.
        let build = |use_detach: bool| {
            let tape = Tape::new();
            let x = tape.leaf(0.8);
            let y = tape.leaf(-1.3);
            let e = x.tanh() * y + y.exp();
            let t = if use_detach {
                e.detach()
            } else {
                tape.constant(e.value())
            };
            let out = (x * y - t) * (x * y - t);
            let g = out.backward();
            (out.value(), g.get(x), g.get(y))
        };
        let (v1, gx1, gy1) = build(true);
        let (v2, gx2, gy2) = build(false);
        assert_eq!(v1, v2);
        assert_eq!(gx1, gx2);
        assert_eq!(gy1, gy2);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let tape = Tape::new();
            let xs: Vec<Var> = (0..10).map(|i| tape.leaf(0.1 * i as f64 + 0.3)).collect();
            let mut acc = tape.constant(0.0);
            for (i, &x) in xs.iter().enumerate() {
                acc = acc + x.exp().ln() * x.sqrt() / (x + 1.5) + x.tanh() * (i as f64);
            }
            let g = acc.backward();
            xs.iter().map(|&x| g.get(x).to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sigmoid_backward() {
        let tape = Tape::new();
        let x = tape.leaf(0.3);
        let y = x.sigmoid();
        let g = y.backward();
        let s = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((y.value() - s).abs() < 1e-15);
        assert!((g.get(x) - s * (1.0 - s)).abs() < 1e-15);
    }
}
