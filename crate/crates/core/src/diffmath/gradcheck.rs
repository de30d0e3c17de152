//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the tape gradient of the scalar `function` against central
/// differences over every element of every input.
pub fn grad_check_many<F>(function: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = function(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = function(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Domain("grad_check needs a scalar function".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap_or_default()).collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.data.len() {
            let orig = t.data[ei];
            probe[ti].data[ei] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data[ei] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti][ei];
            let err = relative_error(a, numeric);
            if err > report.max_relative_error {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst: (ti, ei),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Single-input form: the maximum relative error over all coordinates.
pub fn grad_check<F>(function: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| function(tape, vars[0]), std::slice::from_ref(input), eps).map(|r| r.max_relative_error)
}
