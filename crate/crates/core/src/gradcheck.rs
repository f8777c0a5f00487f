//! Central finite-difference verification of reverse-mode gradients.
//!
//! The reference derivative only evaluates the forward function, so it is
//! independent of every backward rule it checks. Evaluation is in `f64`.

use crate::error::Result;
use crate::tensor::{Backend, Tape, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest norm-wise relative error `|a - n| / max(|a|, |n|)` over inputs.
    pub max_rel_error: f64,
    /// Index of the input with the largest error.
    pub worst_input: usize,
    pub evaluations: usize,
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(&out).data()[0])
}

/// Compares backpropagated gradients of the scalar `f(inputs)` against
/// central differences with the given `step` on every input element.
pub fn check<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradReport { max_rel_error: 0.0, worst_input: 0, evaluations: 0 };
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work, &f)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work, &f)?;
            work[i].data_mut()[j] = orig;
            report.evaluations += 2;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_input = i;
        }
    }
    Ok(report)
}
