//! Central finite-difference check of tape gradients.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Elements skipped because a kink (ReLU zero, max-pool tie) lies within
    /// one step of the evaluation point.
    pub skipped_kinks: usize,
}

/// Denominator floor for the relative error.
const REL_FLOOR: f64 = 1e-5;

/// Compare analytic gradients of `build` with central differences of step
/// `step` for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let f0 = tape.value(loss).item();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let f_plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - step;
            let f_minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let forward = (f_plus - f0) / step;
            let backward = (f0 - f_minus) / step;
            if (forward - backward).abs() > 1e-3 * numeric.abs().max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
