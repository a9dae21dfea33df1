//! Contrastive objectives over paired per-segment feature sequences.
//!
//! Three families are provided: plain NT-Xent, a time-weighted NT-Xent whose
//! denominator similarities are scaled by a time-lag kernel, and `mtsc`,
//! which matches each cross-modal similarity to a kernel-decayed, detached
//! intra-modal target. `mtsc` ships in literal and squared residual modes
//! and in full (all time pairs) or part (same-time only) scope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{cosine_sim, Tape, Var};

/// Symmetric weight that grows as the time lag shrinks:
/// `K(i,i) = diagonal`, `K(i,j) = outer(j-i) / |i-j|^exponent` otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeLagKernel {
    pub exponent: f64,
    pub diagonal: f64,
    /// Optional extra lag factor; `None` means the constant 1. Exposed for
    /// experiments only and never serialized.
    #[serde(skip)]
    pub outer: Option<fn(i64) -> f64>,
}

impl Default for TimeLagKernel {
    fn default() -> Self {
        TimeLagKernel {
            exponent: 5.0,
            diagonal: 1.0,
            outer: None,
        }
    }
}

impl TimeLagKernel {
    /// Kernel that is identically 1, which reduces the weighted losses to
    /// their unweighted forms.
    pub fn constant_one() -> Self {
        TimeLagKernel {
            exponent: 0.0,
            diagonal: 1.0,
            outer: None,
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal;
        }
        let d = i.abs_diff(j) as f64;
        let base = if self.exponent.fract() == 0.0 && self.exponent.abs() <= 60.0 {
            d.powi(self.exponent as i32).recip()
        } else {
            d.powf(-self.exponent)
        };
        match self.outer {
            Some(f) => f(j as i64 - i as i64) * base,
            None => base,
        }
    }
}

/// Free-function form of [`TimeLagKernel::weight`].
pub fn time_lag_weight(i: usize, j: usize, kernel: &TimeLagKernel) -> f64 {
    kernel.weight(i, j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// The difference itself; its gradient ignores the detached target.
    Literal,
    /// Squared residual; pulls each similarity toward its target.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// All `T x T` time pairs, averaged by `1/T^2`.
    Full,
    /// Same-time pairs only, averaged by `1/T`.
    Part,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub mode: LossMode,
    pub scope: LossScope,
    pub kernel: TimeLagKernel,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.5,
            mode: LossMode::Squared,
            scope: LossScope::Full,
            kernel: TimeLagKernel::default(),
        }
    }
}

/// Scalar loss plus gradients with respect to both input sequences.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub grad_phi1: Vec<Vec<f64>>,
    pub grad_phi2: Vec<Vec<f64>>,
}

fn check_pairing(n1: usize, n2: usize, min: usize, name: &str) -> Result<()> {
    if n1 != n2 {
        return Err(Error::DimMismatch(format!(
            "{name} expects equally many rows in both sequences, got {n1} and {n2}"
        )));
    }
    if n1 < min {
        return Err(Error::Validation(format!(
            "{name} needs at least {min} rows, got {n1}"
        )));
    }
    Ok(())
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Validation(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// NT-Xent as used here: the positive pair appears only in the numerator,
/// and the denominator sums the `k != i` cross pairs.
pub fn nt_xent_expr<'t>(
    tape: &'t Tape,
    z1: &[Vec<Var<'t>>],
    z2: &[Vec<Var<'t>>],
    tau: f64,
) -> Result<Var<'t>> {
    weighted_nt_xent_expr(tape, z1, z2, tau, &TimeLagKernel::constant_one())
}

/// NT-Xent with each denominator similarity scaled by the kernel weight
/// inside the exponent.
pub fn weighted_nt_xent_expr<'t>(
    tape: &'t Tape,
    z1: &[Vec<Var<'t>>],
    z2: &[Vec<Var<'t>>],
    tau: f64,
    kernel: &TimeLagKernel,
) -> Result<Var<'t>> {
    check_pairing(z1.len(), z2.len(), 2, "nt_xent")?;
    check_temperature(tau)?;
    let n = z1.len();

    let mut sims = Vec::with_capacity(n);
    for row1 in z1 {
        let mut row = Vec::with_capacity(n);
        for row2 in z2 {
            row.push(cosine_sim(row1, row2)?);
        }
        sims.push(row);
    }

    let mut total = tape.constant(0.0);
    for i in 0..n {
        let numerator = (sims[i][i] / tau).exp();
        let mut denominator = tape.constant(0.0);
        for k in 0..n {
            if k == i {
                continue;
            }
            denominator = denominator + (kernel.weight(i, k) * sims[i][k] / tau).exp();
        }
        total = total - (numerator / denominator).ln();
    }
    Ok(total / n as f64)
}

/// Cross-modal similarity matched against a kernel-decayed, detached
/// intra-modal target. Gradients flow only through the cross-modal terms.
pub fn mtsc_expr<'t>(
    tape: &'t Tape,
    phi1: &[Vec<Var<'t>>],
    phi2: &[Vec<Var<'t>>],
    config: &LossConfig,
) -> Result<Var<'t>> {
    check_pairing(phi1.len(), phi2.len(), 1, "mtsc")?;
    let t = phi1.len();

    let term = |i: usize, j: usize| -> Result<Var<'t>> {
        let cross = cosine_sim(&phi1[i], &phi2[j])?;
        let target = cosine_sim(&phi1[i], &phi1[j])?.detach() * config.kernel.weight(i, j);
        let diff = cross - target;
        Ok(match config.mode {
            LossMode::Literal => diff,
            LossMode::Squared => diff * diff,
        })
    };

    let mut total = tape.constant(0.0);
    match config.scope {
        LossScope::Full => {
            for j in 0..t {
                for i in 0..t {
                    total = total + term(i, j)?;
                }
            }
            Ok(total / (t * t) as f64)
        }
        LossScope::Part => {
            for i in 0..t {
                total = total + term(i, i)?;
            }
            Ok(total / t as f64)
        }
    }
}

fn bind_matrix<'t>(tape: &'t Tape, m: &[Vec<f64>]) -> Vec<Vec<Var<'t>>> {
    m.iter()
        .map(|row| row.iter().map(|&x| tape.leaf(x)).collect())
        .collect()
}

fn matrix_grads(bound: &[Vec<Var<'_>>], grads: &crate::numgrad::Gradients) -> Vec<Vec<f64>> {
    bound
        .iter()
        .map(|row| row.iter().map(|&v| grads.get(v)).collect())
        .collect()
}

fn report_from<'t, F>(phi1: &[Vec<f64>], phi2: &[Vec<f64>], build: F) -> Result<LossReport>
where
    F: for<'a> Fn(&'a Tape, &[Vec<Var<'a>>], &[Vec<Var<'a>>]) -> Result<Var<'a>>,
{
    let tape = Tape::new();
    let b1 = bind_matrix(&tape, phi1);
    let b2 = bind_matrix(&tape, phi2);
    let loss = build(&tape, &b1, &b2)?;
    let value = loss.value();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss value {value}")));
    }
    let grads = loss.backward();
    Ok(LossReport {
        loss: value,
        grad_phi1: matrix_grads(&b1, &grads),
        grad_phi2: matrix_grads(&b2, &grads),
    })
}

pub fn nt_xent(z1: &[Vec<f64>], z2: &[Vec<f64>], tau: f64) -> Result<LossReport> {
    report_from(z1, z2, |tape, a, b| nt_xent_expr(tape, a, b, tau))
}

pub fn weighted_nt_xent(
    z1: &[Vec<f64>],
    z2: &[Vec<f64>],
    tau: f64,
    kernel: &TimeLagKernel,
) -> Result<LossReport> {
    report_from(z1, z2, |tape, a, b| {
        weighted_nt_xent_expr(tape, a, b, tau, kernel)
    })
}

pub fn mtsc(phi1: &[Vec<f64>], phi2: &[Vec<f64>], config: &LossConfig) -> Result<LossReport> {
    report_from(phi1, phi2, |tape, a, b| mtsc_expr(tape, a, b, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::grad_check;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        let k = TimeLagKernel::default();
        assert_eq!(k.weight(3, 4), 1.0);
        assert_eq!(k.weight(0, 2), 0.03125);
        assert_eq!(k.weight(5, 5), 1.0);
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_non_increasing(i in 0usize..32, j in 0usize..32) {
            let k = TimeLagKernel::default();
            prop_assert_eq!(k.weight(i, j), k.weight(j, i));
            if i != j {
                let closer = if i < j { (i, j - 1) } else { (i, j + 1) };
                prop_assert!(k.weight(i, j) <= k.weight(closer.0, closer.1) + 1e-15);
                prop_assert!(k.weight(i, j) <= k.diagonal);
            }
        }
    }

    fn unit_rows(rows: &[usize], dim: usize) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                let mut v = vec![0.0; dim];
                v[r] = 1.0;
                v
            })
            .collect()
    }

    #[test]
    fn nt_xent_all_orthogonal_is_zero() {
        // All pairwise similarities 0: numerator e^0 = 1, denominator e^0 = 1.
        let z1 = unit_rows(&[0, 1], 4);
        let z2 = unit_rows(&[2, 3], 4);
        let r = nt_xent(&z1, &z2, 1.0).unwrap();
        assert!(r.loss.abs() < 1e-12, "loss = {}", r.loss);
    }

    #[test]
    fn nt_xent_perfect_positives() {
        // sim(z_i^1, z_i^2) = 1, cross sims 0: -log(e / 1) = -1.
        let z = unit_rows(&[0, 1], 2);
        let r = nt_xent(&z, &z, 1.0).unwrap();
        assert!((r.loss + 1.0).abs() < 1e-12, "loss = {}", r.loss);
        // Halving the temperature doubles every exponent argument.
        let r2 = nt_xent(&z, &z, 0.5).unwrap();
        assert!((r2.loss + 2.0).abs() < 1e-12, "loss = {}", r2.loss);
    }

    #[test]
    fn nt_xent_needs_two_rows() {
        let z = unit_rows(&[0], 2);
        assert!(nt_xent(&z, &z, 1.0).is_err());
    }

    #[test]
    fn weighted_with_unit_kernel_equals_plain() {
        let z1 = vec![vec![0.4, 1.0, -0.3], vec![0.9, -0.2, 0.5], vec![0.1, 0.8, 0.7]];
        let z2 = vec![vec![1.0, 0.1, 0.0], vec![-0.4, 0.6, 0.2], vec![0.3, 0.3, -0.9]];
        let plain = nt_xent(&z1, &z2, 0.5).unwrap();
        let weighted = weighted_nt_xent(&z1, &z2, 0.5, &TimeLagKernel::constant_one()).unwrap();
        assert_eq!(plain.loss, weighted.loss);
        assert_eq!(plain.grad_phi1, weighted.grad_phi1);
        assert_eq!(plain.grad_phi2, weighted.grad_phi2);
    }

    #[test]
    fn weighted_all_zero_sims_ignores_kernel() {
        // exp(K * 0) = 1 for every term, so the kernel drops out; with
        // N = 2 the single denominator term gives -log(1/1) = 0.
        let z1 = unit_rows(&[0, 1], 4);
        let z2 = unit_rows(&[2, 3], 4);
        let r = weighted_nt_xent(&z1, &z2, 1.0, &TimeLagKernel::default()).unwrap();
        assert!(r.loss.abs() < 1e-12, "loss = {}", r.loss);

        let z1 = unit_rows(&[0, 1, 2], 6);
        let z2 = unit_rows(&[3, 4, 5], 6);
        let steep = weighted_nt_xent(&z1, &z2, 1.0, &TimeLagKernel::default()).unwrap();
        let flat = weighted_nt_xent(&z1, &z2, 1.0, &TimeLagKernel::constant_one()).unwrap();
        assert_eq!(steep.loss, flat.loss);
    }

    #[test]
    fn weighted_hand_value_n3() {
        // All pairwise sims 1, tau = 1, p = 5:
        // l_i = -1 + log(sum_{k != i} e^{K(i,k)}).
        let ones = vec![vec![0.6, 0.8]; 3];
        let r = weighted_nt_xent(&ones, &ones, 1.0, &TimeLagKernel::default()).unwrap();
        let e = std::f64::consts::E;
        let thirty_second = (1.0f64 / 32.0).exp();
        let hand = -1.0
            + ((e + thirty_second).ln() + (2.0 * e).ln() + (thirty_second + e).ln()) / 3.0;
        assert!((r.loss - hand).abs() < 1e-12, "{} vs {hand}", r.loss);
    }

    #[test]
    fn mtsc_hand_values_on_constant_rows() {
        // Identical unit rows: every similarity is 1, so term(i,j) = 1 - K(i,j).
        // With T = 3 and p = 5 the only nonzero terms are |i-j| = 2: 31/32.
        let rows = vec![vec![0.6, 0.8]; 3];
        let squared = mtsc(
            &rows,
            &rows,
            &LossConfig {
                mode: LossMode::Squared,
                scope: LossScope::Full,
                ..LossConfig::default()
            },
        )
        .unwrap();
        let expect_sq = 2.0 / 9.0 * (31.0f64 / 32.0).powi(2);
        assert!((squared.loss - expect_sq).abs() < 1e-12);

        let literal = mtsc(
            &rows,
            &rows,
            &LossConfig {
                mode: LossMode::Literal,
                scope: LossScope::Full,
                ..LossConfig::default()
            },
        )
        .unwrap();
        let expect_lit = 2.0 / 9.0 * (31.0 / 32.0);
        assert!((literal.loss - expect_lit).abs() < 1e-12);

        let part = mtsc(
            &rows,
            &rows,
            &LossConfig {
                mode: LossMode::Literal,
                scope: LossScope::Part,
                ..LossConfig::default()
            },
        )
        .unwrap();
        assert!(part.loss.abs() < 1e-12);
    }

    #[test]
    fn mtsc_zero_row_is_an_error() {
        let phi1 = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let phi2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            mtsc(&phi1, &phi2, &LossConfig::default()),
            Err(Error::ZeroNorm(_))
        ));
    }

    /// Rows of `phi2` tilted away from the matching `phi1` axis inside a
    /// private plane: off-diagonal cross similarities are exactly zero.
    fn diagonal_only_inputs(t: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let dim = 2 * t;
        let mut phi1 = Vec::new();
        let mut phi2 = Vec::new();
        for i in 0..t {
            let mut a = vec![0.0; dim];
            a[i] = 1.0;
            phi1.push(a);
            let theta = 0.3 + 0.2 * i as f64;
            let mut b = vec![0.0; dim];
            b[i] = theta.cos();
            b[t + i] = theta.sin();
            phi2.push(b);
        }
        (phi1, phi2)
    }

    #[test]
    fn part_scope_matches_masked_full_scope_after_rescale() {
        // With a zero off-diagonal kernel and inputs whose off-diagonal
        // cross terms vanish, the full sum contains exactly the diagonal
        // terms. T = 4 keeps the two normalizations power-of-two exact.
        let (phi1, phi2) = diagonal_only_inputs(4);
        let masked = TimeLagKernel {
            exponent: 5.0,
            diagonal: 1.0,
            outer: Some(|_| 0.0),
        };
        for mode in [LossMode::Literal, LossMode::Squared] {
            let part = mtsc(
                &phi1,
                &phi2,
                &LossConfig {
                    mode,
                    scope: LossScope::Part,
                    kernel: masked.clone(),
                    ..LossConfig::default()
                },
            )
            .unwrap();
            let full = mtsc(
                &phi1,
                &phi2,
                &LossConfig {
                    mode,
                    scope: LossScope::Full,
                    kernel: masked.clone(),
                    ..LossConfig::default()
                },
            )
            .unwrap();
            assert_eq!(part.loss, full.loss * 4.0, "mode {mode:?}");
        }
    }

    #[test]
    fn squared_mode_nonnegative_and_zero_at_target() {
        // Orthogonal rows with phi2 = phi1: the diagonal cross similarity
        // is 1 = K(i,i) * 1 and off-diagonal cross similarities are
        // 0 = K(i,j) * 0, so every term hits its target exactly.
        let phi = unit_rows(&[0, 1, 2], 3);
        let cfg = LossConfig::default();
        let r = mtsc(&phi, &phi, &cfg).unwrap();
        assert_eq!(r.loss, 0.0);

        // Anything off-target is strictly positive.
        let near = vec![vec![0.3, 1.1, 0.2], vec![-0.7, 0.4, 0.0], vec![0.9, 0.9, -0.5]];
        let other = vec![vec![1.0, 0.0, 0.1], vec![0.0, 1.0, 0.4], vec![1.0, 1.0, 0.3]];
        assert!(mtsc(&near, &other, &cfg).unwrap().loss > 0.0);
        assert!(mtsc(&near, &near, &cfg).unwrap().loss > 0.0);
    }

    #[test]
    fn literal_gradient_wrt_phi2_ignores_the_target() {
        // The detached term contributes nothing, so the gradient w.r.t.
        // phi2 equals that of the plain mean cross-modal similarity.
        let phi1 = vec![vec![0.5, 0.2, -0.4], vec![0.1, 0.9, 0.3]];
        let phi2 = vec![vec![-0.2, 0.7, 0.6], vec![0.8, 0.1, -0.5]];
        let cfg = LossConfig {
            mode: LossMode::Literal,
            scope: LossScope::Full,
            ..LossConfig::default()
        };
        let full = mtsc(&phi1, &phi2, &cfg).unwrap();

        let plain = report_from(&phi1, &phi2, |tape, a, b| {
            let t = a.len();
            let mut total = tape.constant(0.0);
            for j in 0..t {
                for i in 0..t {
                    total = total + cosine_sim(&a[i], &b[j])?;
                }
            }
            Ok(total / (t * t) as f64)
        })
        .unwrap();

        for (ra, rb) in full.grad_phi2.iter().zip(&plain.grad_phi2) {
            for (&a, &b) in ra.iter().zip(rb) {
                assert!((a - b).abs() < 1e-15, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn detach_law_constant_targets_leave_gradients_unchanged() {
        let phi1 = vec![vec![0.5, 0.2, -0.4], vec![0.1, 0.9, 0.3], vec![0.7, -0.6, 0.2]];
        let phi2 = vec![vec![-0.2, 0.7, 0.6], vec![0.8, 0.1, -0.5], vec![0.4, 0.4, 0.4]];
        let cfg = LossConfig::default();
        let with_detach = mtsc(&phi1, &phi2, &cfg).unwrap();

        // Same expression with each target inserted as a plain constant.
        let manual = report_from(&phi1, &phi2, |tape, a, b| {
            let t = a.len();
            let mut total = tape.constant(0.0);
            for j in 0..t {
                for i in 0..t {
                    let cross = cosine_sim(&a[i], &b[j])?;
                    let target_value =
                        cosine_sim(&a[i], &a[j])?.value() * cfg.kernel.weight(i, j);
                    let diff = cross - tape.constant(target_value);
                    total = total + diff * diff;
                }
            }
            Ok(total / (t * t) as f64)
        })
        .unwrap();

        assert_eq!(with_detach.loss, manual.loss);
        assert_eq!(with_detach.grad_phi1, manual.grad_phi1);
        assert_eq!(with_detach.grad_phi2, manual.grad_phi2);
    }

    #[test]
    fn mtsc_squared_gradient_check() {
        // Random 2 x (3 x 4) inputs, flattened into one parameter vector.
        let x: Vec<f64> = vec![
            0.31, -0.52, 0.77, 0.15, 0.94, 0.42, -0.11, 0.63, -0.78, 0.25, 0.49, -0.36,
            0.58, 0.91, -0.44, 0.12, -0.65, 0.33, 0.87, -0.21, 0.09, 0.73, -0.57, 0.41,
        ];
        let cfg = LossConfig::default();
        let report = grad_check(
            |tape, vars| {
                let rows = |off: usize| -> Vec<Vec<Var>> {
                    (0..3).map(|r| vars[off + r * 4..off + r * 4 + 4].to_vec()).collect()
                };
                mtsc_expr(tape, &rows(0), &rows(12), &cfg)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "err = {}", report.max_rel_err);
    }
}
