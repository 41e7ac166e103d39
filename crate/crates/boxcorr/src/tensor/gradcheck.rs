//! Central-difference verification of recorded gradients.
//!
//! The function under test is evaluated twice per input element at `x ± eps`
//! through off-tape constants, so the finite-difference path exercises the
//! same forward kernels as the recorded one. 64-bit only: at f32 precision
//! central differences cannot separate derivative bugs from rounding noise.

use super::{Tape, Tensor, TensorError};

/// Outcome of one gradient check at one evaluation point.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub elements_checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks analytic gradients of `f` (a scalar-valued tensor function) against
/// central differences at the given point. Every element of every input is
/// perturbed.
pub fn grad_check<F>(
    name: &str,
    f: F,
    inputs: &[(Vec<f64>, Vec<usize>)],
    eps: f64,
    tol: f64,
) -> Result<GradReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape))
        .collect::<Result<_, _>>()?;
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: loss.shape().to_vec(),
        });
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().expect("leaf gradient"))
        .collect();

    let eval = |point: &[(Vec<f64>, Vec<usize>)]| -> Result<f64, TensorError> {
        let consts: Vec<Tensor<f64>> = point
            .iter()
            .map(|(data, shape)| Tensor::constant(data.clone(), shape))
            .collect::<Result<_, _>>()?;
        Ok(f(&consts)?.item())
    };

    let mut max_rel_err = 0.0f64;
    let mut elements_checked = 0;
    let mut point: Vec<(Vec<f64>, Vec<usize>)> = inputs.to_vec();
    for (i, (data, _)) in inputs.iter().enumerate() {
        for e in 0..data.len() {
            let orig = data[e];
            point[i].0[e] = orig + eps;
            let plus = eval(&point)?;
            point[i].0[e] = orig - eps;
            let minus = eval(&point)?;
            point[i].0[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_rel_err = max_rel_err.max(rel_err(analytic[i][e], numeric));
            elements_checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err,
        tol,
        elements_checked,
    })
}
