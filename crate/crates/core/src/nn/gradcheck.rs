//! Central finite-difference gradient checks.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compare the tape gradient of a scalar function of `inputs` with central
/// differences of width `2·step` in every coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = values.iter().map(|v| tape.input(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let t = tape.value(out);
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        Ok(t.item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.input(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape());
        let analytic = grads.wrt(*var).unwrap_or(&zeros).data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let n = (up - down) / (2.0 * step);
            let e = relative_error(a, n);
            if e > worst.max_rel_error {
                worst = GradCheck {
                    max_rel_error: e,
                    input: i,
                    index: j,
                    analytic: a,
                    numeric: n,
                };
            }
        }
    }
    Ok(worst)
}
