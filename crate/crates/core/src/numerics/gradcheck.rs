//! Central finite-difference gradient checks.

use alloc::vec::Vec;

use crate::math;
use crate::numerics::{Matrix, Tape, Var};
use crate::Result;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is (numerically) zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |a - n| / max(|a|, |n|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// `(input, flat entry)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn projection(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| {
        let k = (r * cols + c) as f64;
        math::cos(1.3 * k + 0.4)
    })
}

fn scalar_loss<F>(tape: &mut Tape, vars: &[Var], f: &F) -> Result<Var>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let out = f(tape, vars)?;
    let (r, c) = tape.shape(out);
    if (r, c) == (1, 1) {
        return Ok(out);
    }
    let w = tape.constant(projection(r, c));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `step` for every entry of every input.
///
/// Non-scalar outputs are contracted with a fixed non-constant projection so
/// the whole Jacobian takes part. `f` must be deterministic.
pub fn gradient_check<F>(inputs: &[Matrix], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = scalar_loss(&mut tape, &vars, &f)?;
    tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, m)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols()))
        })
        .collect();

    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|m| t.constant(m.clone())).collect();
        let l = scalar_loss(&mut t, &vs, &f)?;
        Ok(t.value(l)[(0, 0)])
    };

    let mut values = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for i in 0..values.len() {
        for k in 0..values[i].as_slice().len() {
            let orig = values[i].as_slice()[k];
            values[i].as_mut_slice()[k] = orig + step;
            let up = eval(&values)?;
            values[i].as_mut_slice()[k] = orig - step;
            let down = eval(&values)?;
            values[i].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i].as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, k));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.7]]);
        let r = gradient_check(&[x], 1e-5, |t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        })
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // detaching one factor of x^2 halves the analytic gradient
        let x = Matrix::from_rows(&[[0.5]]);
        let r = gradient_check(&[x], 1e-5, |t, v| {
            let detached = t.constant(t.value(v[0]).clone());
            let y = t.mul(v[0], detached)?;
            t.sum(y)
        })
        .unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }
}
