//! Central finite-difference verification of tape gradients.

use crate::{Fault, Result, Tape, Tensor, TensorError, Var};

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|)`.
    pub max_relative_error: f64,
    /// Coordinate attaining the maximum.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with step `h`.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar. It is evaluated `2 * numel(x) + 1` times, so it must be
/// deterministic.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    finite_difference_check_with_fault(f, x, h, None)
}

/// [`finite_difference_check`] with a deliberately corrupted adjoint on the
/// analytic pass.
#[doc(hidden)]
pub fn finite_difference_check_with_fault<F>(f: F, x: &Tensor<f64>, h: f64, fault: Option<Fault>) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_impl(f, x, &[h], fault)
}

/// Central differences over a ladder of steps, ordered largest first.
///
/// Per coordinate, the adjacent pair of estimates that agree best is kept
/// and its larger-step member is used. Large steps lose accuracy across
/// kinks (ReLU, `abs`); small steps lose it to roundoff when the derivative
/// is tiny relative to the function value. The choice never looks at the
/// analytic gradient.
pub fn finite_difference_check_ladder<F>(f: F, x: &Tensor<f64>, steps: &[f64]) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_impl(f, x, steps, None)
}

#[doc(hidden)]
pub fn finite_difference_check_ladder_with_fault<F>(
    f: F,
    x: &Tensor<f64>,
    steps: &[f64],
    fault: Option<Fault>,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_impl(f, x, steps, fault)
}

fn pick_estimate(estimates: &[f64]) -> f64 {
    if estimates.len() == 1 {
        return estimates[0];
    }
    let best = (0..estimates.len() - 1)
        .min_by(|&a, &b| {
            let da = (estimates[a] - estimates[a + 1]).abs();
            let db = (estimates[b] - estimates[b + 1]).abs();
            da.total_cmp(&db)
        })
        .expect("at least two estimates");
    estimates[best]
}

fn check_impl<F>(f: F, x: &Tensor<f64>, steps: &[f64], fault: Option<Fault>) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    assert!(!steps.is_empty(), "need at least one step");
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tape
        .take_grad(leaf)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(probe);
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = x.clone();
    let mut estimates = Vec::with_capacity(steps.len());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        estimates.clear();
        for &h in steps {
            probe.data_mut()[i] = orig + h;
            let plus = eval(probe.clone())?;
            probe.data_mut()[i] = orig - h;
            let minus = eval(probe.clone())?;
            estimates.push((plus - minus) / (2.0 * h));
        }
        probe.data_mut()[i] = orig;
        let numeric = pick_estimate(&estimates);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_relative_error || i == 0 {
            report = GradCheck {
                max_relative_error: err.max(report.max_relative_error),
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact_on_dyadic_inputs() {
        let x = Tensor::from_fn([3, 4], |i| (i as f64 - 5.0) / 8.0);
        let r = finite_difference_check(|t, v| Ok(t.sum(v)), &x, 1.0 / 1024.0).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn sum_of_squares_is_tight() {
        let x = Tensor::from_fn([10], |i| ((i as f64) * 1.37).sin());
        let r = finite_difference_check(
            |t, v| {
                let s = t.square(v);
                Ok(t.sum(s))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn ladder_picks_the_consistent_pair() {
        // Largest step straddles the kink; the two smaller agree.
        assert_eq!(pick_estimate(&[0.3, 1.0, 1.0 + 1e-9]), 1.0);
        // Smallest step is roundoff noise; the two larger agree.
        assert_eq!(pick_estimate(&[2.0, 2.0 + 1e-12, 2.5]), 2.0);
    }

    #[test]
    fn ladder_handles_a_nearby_kink() {
        // |x| at 5e-6: a 1e-4 step straddles 0, the smaller steps do not.
        let x = Tensor::new([1], vec![5e-6]).unwrap();
        let r = finite_difference_check_ladder(
            |t, v| {
                let a = t.abs(v);
                Ok(t.sum(a))
            },
            &x,
            &[1e-4, 1e-6, 1e-7],
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx |x| at x where the step straddles the kink is wrong by design.
        let x = Tensor::new([1], vec![1e-6]).unwrap();
        let r = finite_difference_check(
            |t, v| {
                let a = t.abs(v);
                Ok(t.sum(a))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(r.max_relative_error > 0.5);
    }
}
