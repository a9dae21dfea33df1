//! Central finite-difference gradient checking.

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Analytic vs numeric gradients for one scalar function at one point.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradReport {
    /// Max relative error over coordinates where either side reaches
    /// `floor`. Central differences in doubles cannot resolve gradients
    /// below their rounding floor, so comparing both-tiny coordinates
    /// measures noise; a dropped-gradient bug keeps the numeric side
    /// large and stays visible.
    pub fn max_rel_err_above(&self, floor: f64) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .filter(|(a, n)| a.abs().max(n.abs()) >= floor)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

/// Finite-difference stencil for the numeric side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`; truncation O(h^2).
    Central3,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`; truncation O(h^4),
    /// which tolerates the larger step needed to beat rounding.
    Central5,
}

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// `f` builds the scalar expression from leaf vars; the same builder is
/// used for the analytic pass and for every perturbed value-only pass, so
/// the two routes share the function, not the differentiation path.
/// Detached subexpressions are frozen at their base-point values during
/// the perturbed passes, matching what the backward pass differentiates.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_stencil(f, x, eps, Stencil::Central3)
}

pub fn grad_check_stencil<F>(f: F, x: &[f64], eps: f64, stencil: Stencil) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::recording_detaches();
    let leaves: Vec<Var> = x.iter().map(|&v| tape.leaf(v)).collect();
    let out = f(&tape, &leaves)?;
    if !out.value().is_finite() {
        return Err(Error::NonFinite(format!(
            "function value {} at the check point",
            out.value()
        )));
    }
    let grads = out.backward();
    let analytic: Vec<f64> = leaves.iter().map(|&l| grads.get(l)).collect();
    let detached = tape.take_detach_log();

    let eval = |point: &[f64]| -> Result<f64> {
        let tape = Tape::replaying_detaches(detached.clone());
        let leaves: Vec<Var> = point.iter().map(|&v| tape.leaf(v)).collect();
        let out = f(&tape, &leaves)?;
        let v = out.value();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value {v} during gradient check"
            )));
        }
        Ok(v)
    };

    let mut numeric = Vec::with_capacity(x.len());
    let mut point = x.to_vec();
    for i in 0..x.len() {
        let orig = point[i];
        let d = match stencil {
            Stencil::Central3 => {
                point[i] = orig + eps;
                let hi = eval(&point)?;
                point[i] = orig - eps;
                let lo = eval(&point)?;
                (hi - lo) / (2.0 * eps)
            }
            Stencil::Central5 => {
                point[i] = orig + 2.0 * eps;
                let hi2 = eval(&point)?;
                point[i] = orig + eps;
                let hi1 = eval(&point)?;
                point[i] = orig - eps;
                let lo1 = eval(&point)?;
                point[i] = orig - 2.0 * eps;
                let lo2 = eval(&point)?;
                (-hi2 + 8.0 * hi1 - 8.0 * lo1 + lo2) / (12.0 * eps)
            }
        };
        point[i] = orig;
        numeric.push(d);
    }

    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);

    Ok(GradReport {
        analytic,
        numeric,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_checks_tightly() {
        let report = grad_check(|_, xs| Ok(xs[0] * xs[0]), &[1.0], 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-8, "err = {}", report.max_rel_err);
        assert!((report.analytic[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fully_detached_function_has_zero_gradients() {
        let report = grad_check(
            |_, xs| Ok(xs[0].detach() * xs[1].detach() + xs[0].detach()),
            &[2.0, 3.0],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.analytic, vec![0.0, 0.0]);
        for n in &report.numeric {
            assert!(n.abs() < 1e-9);
        }
        assert!(report.max_rel_err < 1e-8);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let res = grad_check(|_, xs| Ok(xs[0].ln()), &[0.0], 1e-5);
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }

    #[test]
    fn transcendental_composition() {
        let report = grad_check(
            |_, xs| Ok((xs[0].exp() + xs[1].sqrt()).tanh() * xs[2].sigmoid() / (xs[0] * xs[0] + 1.0)),
            &[0.4, 2.0, -0.7],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "err = {}", report.max_rel_err);
    }
}
