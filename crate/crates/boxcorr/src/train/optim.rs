//! Optimizers over the online parameter store: SGD with momentum, and LARS
//! with per-parameter trust ratios. All internal arithmetic runs in f64;
//! parameters keep their own precision.

use crate::nn::ParamStore;
use crate::scalar::Scalar;
use indexmap::IndexMap;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGrad { name: String },
    #[error("gradient for {name} has {got} elements, parameter has {want}")]
    SizeMismatch { name: String, got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Lars,
}

/// Shared hyperparameters; `eta`/`eps` only matter for LARS.
#[derive(Debug, Clone, Copy)]
pub struct OptimParams {
    pub momentum: f64,
    pub weight_decay: f64,
    pub eta: f64,
    pub eps: f64,
}

pub enum Optimizer {
    Sgd { p: OptimParams, buf: IndexMap<String, Vec<f64>> },
    Lars { p: OptimParams, buf: IndexMap<String, Vec<f64>> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, p: OptimParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { p, buf: IndexMap::new() },
            OptimizerKind::Lars => Optimizer::Lars { p, buf: IndexMap::new() },
        }
    }

    /// One update over every parameter present in `grads`. Validates all
    /// gradients before touching anything, so a non-finite gradient leaves
    /// parameters and momentum buffers unchanged.
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &IndexMap<String, Vec<S>>,
        lr: f64,
    ) -> Result<(), OptimError> {
        for (name, g) in grads {
            if !params.contains(name) {
                continue;
            }
            let want = params.get(name).expect("checked").data.len();
            if g.len() != want {
                return Err(OptimError::SizeMismatch { name: name.clone(), got: g.len(), want });
            }
            if g.iter().any(|v| !v.as_f64().is_finite()) {
                return Err(OptimError::NonFiniteGrad { name: name.clone() });
            }
        }
        for (name, g) in grads {
            if !params.contains(name) {
                continue;
            }
            match self {
                Optimizer::Sgd { p, buf } => {
                    let param = params.get_mut(name).expect("checked");
                    let v = buf.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    for ((w, gi), vi) in param.data.iter_mut().zip(g).zip(v.iter_mut()) {
                        let d = gi.as_f64() + p.weight_decay * w.as_f64();
                        *vi = p.momentum * *vi + d;
                        *w = S::from_f64(w.as_f64() - lr * *vi);
                    }
                }
                Optimizer::Lars { p, buf } => {
                    let param = params.get_mut(name).expect("checked");
                    // biases and other 1-D parameters skip adaptation and decay
                    let adapt = param.shape.len() > 1;
                    let wd = if adapt { p.weight_decay } else { 0.0 };
                    let d: Vec<f64> = param
                        .data
                        .iter()
                        .zip(g)
                        .map(|(w, gi)| gi.as_f64() + wd * w.as_f64())
                        .collect();
                    let r = if adapt {
                        let w_norm = l2(param.data.iter().map(|v| v.as_f64()));
                        let d_norm = l2(d.iter().copied());
                        if w_norm > 0.0 && d_norm > 0.0 {
                            p.eta * w_norm / (d_norm + p.eps)
                        } else {
                            1.0
                        }
                    } else {
                        1.0
                    };
                    let v = buf.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    for ((w, di), vi) in param.data.iter_mut().zip(d).zip(v.iter_mut()) {
                        *vi = p.momentum * *vi + r * di;
                        *w = S::from_f64(w.as_f64() - lr * *vi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn l2(vals: impl Iterator<Item = f64>) -> f64 {
    vals.map(|v| v * v).sum::<f64>().sqrt()
}
