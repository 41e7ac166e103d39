//! Training objectives over per-view, per-box embeddings.
//!
//! Embeddings arrive as one map per view, keyed by box index; a box appears
//! in a view's map iff it is valid there, so intersecting two maps yields
//! exactly the boxes both views share. All losses sum over ordered view
//! pairs, which covers both directions of every exchange.

use crate::geometry::BoxCxcywh;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("degenerate batch: no box is shared by any pair of views")]
    DegenerateBatch,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

/// Auxiliary localization objective added to the embedding loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    None,
    Prediction,
    Regression,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub normalize_features: bool,
    pub tau: f64,
    pub lambda: f64,
    pub lambda_giou: f64,
    pub lambda_box: f64,
    pub aux_mode: AuxMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            normalize_features: true,
            tau: 0.1,
            lambda: 0.05,
            lambda_giou: 2.0,
            lambda_box: 5.0,
            aux_mode: AuxMode::None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_giou", self.lambda_giou),
            ("lambda_box", self.lambda_box),
        ] {
            if !(v >= 0.0) {
                return Err(LossError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One embedding per (view, box): `embeds[view][box_index] = [d]` tensor.
pub type ViewEmbeds<S> = Vec<BTreeMap<usize, Tensor<S>>>;

/// Scalar components of one step's objective.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub l_byol: f64,
    pub l_box_pred: f64,
    pub l_box_reg: f64,
    pub total: f64,
    /// Matched (view i, view j, box k) triples over ordered pairs.
    pub pair_count: usize,
}

fn matched_keys<S: Scalar>(
    a: &BTreeMap<usize, Tensor<S>>,
    b: &BTreeMap<usize, Tensor<S>>,
) -> Vec<usize> {
    a.keys().filter(|k| b.contains_key(k)).copied().collect()
}

/// Stacks map entries for `keys` into an `[M,d]` matrix.
fn stack_rows<S: Scalar>(
    m: &BTreeMap<usize, Tensor<S>>,
    keys: &[usize],
) -> Result<Tensor<S>, TensorError> {
    let rows: Vec<&Tensor<S>> = keys.iter().map(|k| &m[k]).collect();
    Tensor::stack(&rows)
}

/// Squared-distance exchange loss: sum over ordered view pairs of the mean
/// over shared boxes of the squared distance between the online prediction
/// for a box and the other view's target embedding of the same box. With
/// `normalize_features` both sides are unit-normalized first, bounding each
/// term by 4. Returns the scalar loss and the matched triple count.
pub fn byol_loss<S: Scalar>(
    predicted: &ViewEmbeds<S>,
    targets: &ViewEmbeds<S>,
    cfg: &LossConfig,
) -> Result<(Tensor<S>, usize), LossError> {
    debug_assert_eq!(predicted.len(), targets.len());
    let views = predicted.len();
    let mut total: Option<Tensor<S>> = None;
    let mut triples = 0;
    for i in 0..views {
        for j in 0..views {
            if i == j {
                continue;
            }
            let keys = matched_keys(&predicted[i], &targets[j]);
            if keys.is_empty() {
                continue;
            }
            let mut p = stack_rows(&predicted[i], &keys)?;
            let mut t = stack_rows(&targets[j], &keys)?;
            if cfg.normalize_features {
                p = p.l2_normalize(1)?;
                t = t.l2_normalize(1)?;
            }
            let d = p.sub(&t)?;
            let pair = d
                .mul(&d)?
                .sum_all()?
                .mul_scalar(S::from_usize(keys.len()).recip())?;
            triples += keys.len();
            total = Some(match total {
                Some(acc) => acc.add(&pair)?,
                None => pair,
            });
        }
    }
    match total {
        Some(t) => Ok((t, triples)),
        None => Err(LossError::DegenerateBatch),
    }
}

/// Contrastive box-identification loss. For each ordered view pair, each
/// shared box's embedding in view i must be most similar (cosine, sharpened
/// by `1/tau`) to the same box's embedding in view j among all shared boxes.
/// Normalized by the total matched triple count, so it is a per-box mean.
pub fn box_prediction_loss<S: Scalar>(
    embeds: &ViewEmbeds<S>,
    cfg: &LossConfig,
) -> Result<(Tensor<S>, usize), LossError> {
    let views = embeds.len();
    let mut total: Option<Tensor<S>> = None;
    let mut triples = 0;
    for i in 0..views {
        for j in 0..views {
            if i == j {
                continue;
            }
            let keys = matched_keys(&embeds[i], &embeds[j]);
            if keys.is_empty() {
                continue;
            }
            let m = keys.len();
            let ui = stack_rows(&embeds[i], &keys)?.l2_normalize(1)?;
            let uj = stack_rows(&embeds[j], &keys)?.l2_normalize(1)?;
            let logits = ui
                .matmul(&uj.transpose()?)?
                .mul_scalar(S::from_f64(1.0 / cfg.tau))?;
            let log_probs = logits.softmax(1)?.log()?;
            let mut eye = vec![S::zero(); m * m];
            for k in 0..m {
                eye[k * m + k] = S::one();
            }
            let mask = Tensor::constant(eye, &[m, m])?;
            let pair = log_probs.mul(&mask)?.sum_all()?.neg()?;
            triples += m;
            total = Some(match total {
                Some(acc) => acc.add(&pair)?,
                None => pair,
            });
        }
    }
    match total {
        Some(t) => Ok((t.mul_scalar(S::from_usize(triples).recip())?, triples)),
        None => Err(LossError::DegenerateBatch),
    }
}

/// Converts a `[4]` center-form tensor to corner tensors `(x1,y1,x2,y2)`.
fn cxcywh_to_corners<S: Scalar>(
    b: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>, Tensor<S>), TensorError> {
    let half = S::from_f64(0.5);
    let cx = b.slice(0, 0, 1)?;
    let cy = b.slice(0, 1, 2)?;
    let hw = b.slice(0, 2, 3)?.mul_scalar(half)?;
    let hh = b.slice(0, 3, 4)?.mul_scalar(half)?;
    Ok((cx.sub(&hw)?, cy.sub(&hh)?, cx.add(&hw)?, cy.add(&hh)?))
}

/// Differentiable GIoU between two `[4]` center-form box tensors.
pub fn giou_t<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (ax1, ay1, ax2, ay2) = cxcywh_to_corners(a)?;
    let (bx1, by1, bx2, by2) = cxcywh_to_corners(b)?;
    let iw = ax2.minimum(&bx2)?.sub(&ax1.maximum(&bx1)?)?.relu()?;
    let ih = ay2.minimum(&by2)?.sub(&ay1.maximum(&by1)?)?.relu()?;
    let inter = iw.mul(&ih)?;
    let area_a = ax2.sub(&ax1)?.mul(&ay2.sub(&ay1)?)?;
    let area_b = bx2.sub(&bx1)?.mul(&by2.sub(&by1)?)?;
    let union = area_a.add(&area_b)?.sub(&inter)?;
    let hull_w = ax2.maximum(&bx2)?.sub(&ax1.minimum(&bx1)?)?;
    let hull_h = ay2.maximum(&by2)?.sub(&ay1.minimum(&by1)?)?;
    let hull = hull_w.mul(&hull_h)?;
    inter.div(&union)?.sub(&hull.sub(&union)?.div(&hull)?)
}

/// Localization penalty for one predicted box against its ground truth:
/// `lambda_giou*(1 - giou) + lambda_box*l1`, both in center form.
pub fn box_pair_loss<S: Scalar>(
    pred: &Tensor<S>,
    truth: &BoxCxcywh<f64>,
    cfg: &LossConfig,
) -> Result<Tensor<S>, LossError> {
    let t = Tensor::constant(
        vec![
            S::from_f64(truth.cx),
            S::from_f64(truth.cy),
            S::from_f64(truth.w),
            S::from_f64(truth.h),
        ],
        &[4],
    )?;
    let giou_term = giou_t(pred, &t)?
        .neg()?
        .add_scalar(S::one())?
        .mul_scalar(S::from_f64(cfg.lambda_giou))?;
    let l1_term = pred
        .sub(&t)?
        .abs()?
        .sum_all()?
        .mul_scalar(S::from_f64(cfg.lambda_box))?;
    Ok(giou_term.add(&l1_term)?)
}

/// Aggregate regression loss: one group per ordered view pair, each holding
/// `(decoded box, ground-truth box)` for every shared box; group sums are
/// averaged within the group then summed across groups.
pub fn box_regression_loss<S: Scalar>(
    groups: &[Vec<(Tensor<S>, BoxCxcywh<f64>)>],
    cfg: &LossConfig,
) -> Result<(Tensor<S>, usize), LossError> {
    let mut total: Option<Tensor<S>> = None;
    let mut triples = 0;
    for group in groups {
        if group.is_empty() {
            continue;
        }
        let mut acc: Option<Tensor<S>> = None;
        for (pred, truth) in group {
            let term = box_pair_loss(pred, truth, cfg)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        let pair = acc
            .expect("non-empty group")
            .mul_scalar(S::from_usize(group.len()).recip())?;
        triples += group.len();
        total = Some(match total {
            Some(t) => t.add(&pair)?,
            None => pair,
        });
    }
    match total {
        Some(t) => Ok((t, triples)),
        None => Err(LossError::DegenerateBatch),
    }
}

/// Combines the embedding loss with the configured auxiliary term:
/// `total = l_byol + lambda * aux`. Returns the differentiable total and the
/// scalar breakdown for logging.
pub fn total_loss<S: Scalar>(
    byol: (Tensor<S>, usize),
    aux: Option<(Tensor<S>, usize)>,
    cfg: &LossConfig,
) -> Result<(Tensor<S>, LossBreakdown), LossError> {
    let (l_byol, pair_count) = byol;
    let mut breakdown = LossBreakdown {
        l_byol: l_byol.item().as_f64(),
        l_box_pred: 0.0,
        l_box_reg: 0.0,
        total: 0.0,
        pair_count,
    };
    let total = match (&aux, cfg.aux_mode) {
        (None, _) | (_, AuxMode::None) => l_byol,
        (Some((aux_t, _)), mode) => {
            let v = aux_t.item().as_f64();
            match mode {
                AuxMode::Prediction => breakdown.l_box_pred = v,
                AuxMode::Regression => breakdown.l_box_reg = v,
                AuxMode::None => unreachable!(),
            }
            l_byol.add(&aux_t.mul_scalar(S::from_f64(cfg.lambda))?)?
        }
    };
    breakdown.total = total.item().as_f64();
    Ok((total, breakdown))
}
