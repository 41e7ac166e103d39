//! Training runtime: configuration, the per-step update, and the full run
//! driver with metrics, checkpoints, and evaluation probes.

pub mod data;
pub mod ema;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod synth;

use crate::augment::{AugmentError, AugmentationConfig, ViewSet};
use crate::geometry::{BoxCxcywh, BoxXyxy, GeometryError};
use crate::loss::{
    box_prediction_loss, box_regression_loss, byol_loss, total_loss, AuxMode, LossBreakdown,
    LossConfig, LossError, ViewEmbeds,
};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::{
    backbone_forward, backbone_forward_sized, decoder_forward, predict, project, ArchConfig,
    Binding, Branch, NetError, NetworkPair, ParamStore,
};
use crate::roi::{extract_box_feature, shared_grid_boxes, RoiMode};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};
use data::{BatchSource, stream_seed, DOMAIN_AUG_EVAL, DOMAIN_AUG_TRAIN, DOMAIN_INIT};
use ema::{ema_momentum_at, ema_update};
use eval::eval_retrieval;
use metrics::{MetricsError, MetricsRow, MetricsWriter};
use optim::{OptimError, Optimizer, OptimizerKind, OptimParams};
use schedule::{cosine_lr, Schedule};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use synth::SynthSpec;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("aborted at step {step} after {streak} consecutive faulted steps")]
    Aborted { step: usize, streak: usize },
}

impl TrainError {
    /// Step-level faults skip the step and count toward the abort streak;
    /// anything else is a hard error.
    pub fn is_step_fault(&self) -> bool {
        matches!(
            self,
            TrainError::Tensor(TensorError::NonFinite { .. })
                | TrainError::Net(NetError::Tensor(TensorError::NonFinite { .. }))
                | TrainError::Loss(LossError::Tensor(TensorError::NonFinite { .. }))
                | TrainError::Loss(LossError::DegenerateBatch)
                | TrainError::Optim(OptimError::NonFiniteGrad { .. })
        )
    }
}

/// Full run configuration. An epoch is `images_per_epoch` synthetic images;
/// fractional epochs are honored by flooring the derived step counts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: f64,
    pub images_per_epoch: usize,
    pub batch_size: usize,
    /// Scaled to a peak rate of base_lr * batch_size / 256.
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lars_eta: f64,
    pub lars_eps: f64,
    /// EMA base momentum, cosine-ramped toward 1 over the run.
    pub ema_momentum: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_images: usize,
    pub loss: LossConfig,
    pub aug: AugmentationConfig,
    pub roi: RoiMode,
    pub arch: ArchConfig,
    pub synth: SynthSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3.2,
            images_per_epoch: 1000,
            batch_size: 16,
            base_lr: 2.0,
            warmup_epochs: 10.0,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            weight_decay: 0.0,
            lars_eta: 1e-3,
            lars_eps: 1e-8,
            ema_momentum: 0.996,
            seed: 0,
            checkpoint_every: 100,
            eval_images: 128,
            loss: LossConfig::default(),
            aug: AugmentationConfig::default(),
            roi: RoiMode::Ra1,
            arch: ArchConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        ((self.epochs * self.images_per_epoch as f64) / self.batch_size as f64).floor() as usize
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_epochs * self.images_per_epoch as f64) / self.batch_size as f64).floor()
            as usize
    }

    /// Expected top-1 accuracy of a random ranker, from the candidate count.
    pub fn chance_level(&self) -> f64 {
        match self.roi {
            RoiMode::SharedGrid { c } => 1.0 / (c * c) as f64,
            _ => 1.0 / self.aug.k as f64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.images_per_epoch == 0 {
            return bad("images_per_epoch must be >= 1".into());
        }
        if !(self.epochs > 0.0) {
            return bad(format!("epochs must be > 0, got {}", self.epochs));
        }
        if self.total_steps() == 0 {
            return bad(format!(
                "epochs * images_per_epoch / batch_size must give at least one step, got {}",
                self.total_steps()
            ));
        }
        // warmup longer than the run is legal: the rate then ramps for the
        // whole run and never enters the cosine segment
        if !(self.warmup_epochs >= 0.0) {
            return bad(format!("warmup_epochs must be >= 0, got {}", self.warmup_epochs));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum must lie in [0, 1], got {}", self.ema_momentum));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lars_eta > 0.0) {
            return bad(format!("lars_eta must be > 0, got {}", self.lars_eta));
        }
        if !(self.lars_eps > 0.0) {
            return bad(format!("lars_eps must be > 0, got {}", self.lars_eps));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be >= 1".into());
        }
        if self.eval_images == 0 {
            return bad("eval_images must be >= 1".into());
        }
        self.loss.validate()?;
        self.aug.validate()?;
        self.synth.validate().map_err(TrainError::InvalidConfig)?;
        if self.arch.input_hw != self.aug.view_size {
            return bad(format!(
                "arch.input_hw {} must equal aug.view_size {}",
                self.arch.input_hw, self.aug.view_size
            ));
        }
        match self.roi {
            RoiMode::RaC { c } | RoiMode::SharedGrid { c } if c == 0 => {
                return bad("roi grid size c must be >= 1".into());
            }
            RoiMode::SharedGrid { .. } => {
                if self.aug.views != 2 {
                    return bad(format!(
                        "shared-grid pooling requires exactly 2 views, got {}",
                        self.aug.views
                    ));
                }
                if self.aug.local_views != 0 {
                    return bad("shared-grid pooling cannot be combined with local views".into());
                }
            }
            _ => {}
        }
        if self.loss.aux_mode == AuxMode::Regression
            && self.arch.d_model != self.arch.feat_channels()
        {
            return bad(format!(
                "box regression requires arch.d_model {} to equal the feature channel count {}",
                self.arch.d_model,
                self.arch.feat_channels()
            ));
        }
        if self.aug.local_views > 0 && self.aug.local_view_size < 8 {
            return bad(format!(
                "local_view_size must be >= 8 to pass through the backbone, got {}",
                self.aug.local_view_size
            ));
        }
        Ok(())
    }
}

/// Per-view box lists driving feature extraction: the jointly visible
/// sampled boxes, or a fresh correspondence grid over the crop intersection
/// in grid mode.
pub fn view_box_lists<S>(
    set: &ViewSet<S>,
    roi: RoiMode,
) -> Result<Vec<BTreeMap<usize, BoxXyxy<f64>>>, TrainError> {
    match roi {
        RoiMode::SharedGrid { c } => {
            if set.views.len() != 2 {
                return Err(TrainError::InvalidConfig(format!(
                    "shared-grid pooling requires exactly 2 views, got {}",
                    set.views.len()
                )));
            }
            let (a, b) = shared_grid_boxes(&set.views[0].transform, &set.views[1].transform, c)?;
            Ok(vec![
                a.into_iter().enumerate().collect(),
                b.into_iter().enumerate().collect(),
            ])
        }
        _ => Ok(set.boxes_per_view.clone()),
    }
}

fn split_rows<S: Scalar>(
    t: &Tensor<S>,
    keys: &[usize],
) -> Result<BTreeMap<usize, Tensor<S>>, TrainError> {
    let d = t.shape()[1];
    keys.iter()
        .enumerate()
        .map(|(r, k)| Ok((*k, t.slice(0, r, r + 1)?.reshape(&[d])?)))
        .collect()
}

/// Pools every box of one view into features, projects the stack, and
/// optionally runs the predictor. Returns per-box (projected, predicted)
/// embedding rows.
fn box_rows<S: Scalar>(
    bind: &Binding<S>,
    fmap: &Tensor<S>,
    boxes: &BTreeMap<usize, BoxXyxy<f64>>,
    roi: RoiMode,
    with_predictor: bool,
) -> Result<(BTreeMap<usize, Tensor<S>>, BTreeMap<usize, Tensor<S>>), TrainError> {
    let feats: Vec<Tensor<S>> = boxes
        .values()
        .map(|b| extract_box_feature(fmap, b, roi))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Tensor<S>> = feats.iter().collect();
    let proj = project(bind, &Tensor::stack(&refs)?)?;
    let keys: Vec<usize> = boxes.keys().copied().collect();
    let pred = if with_predictor {
        split_rows(&predict(bind, &proj)?, &keys)?
    } else {
        BTreeMap::new()
    };
    Ok((split_rows(&proj, &keys)?, pred))
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub lr: f64,
    pub m: f64,
    /// Non-degenerate ViewSets that contributed to the step.
    pub used_sets: usize,
}

/// Owns both networks, the optimizer state, and the schedule position.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub pair: NetworkPair<f32>,
    opt: Optimizer,
    schedule: Schedule,
    pub step: usize,
    pub faults: usize,
    pub fault_streak: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let feature_len = cfg.roi.feature_len(cfg.arch.feat_channels());
        let with_decoder = cfg.loss.aux_mode == AuxMode::Regression;
        let pair = NetworkPair::new(
            cfg.arch.clone(),
            feature_len,
            with_decoder,
            stream_seed(cfg.seed, DOMAIN_INIT, 0),
        )?;
        let opt = Optimizer::new(
            cfg.optimizer,
            OptimParams {
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                eta: cfg.lars_eta,
                eps: cfg.lars_eps,
            },
        );
        let schedule = Schedule::new(
            cfg.base_lr,
            cfg.batch_size,
            cfg.warmup_steps(),
            cfg.total_steps(),
        );
        Ok(Trainer {
            cfg,
            pair,
            opt,
            schedule,
            step: 0,
            faults: 0,
            fault_streak: 0,
        })
    }

    /// One optimization step: forward every view of every non-degenerate set
    /// through both networks, average per-image losses, backprop, update the
    /// online parameters, then move the target by EMA. The target branch
    /// runs off-tape, so it structurally cannot receive gradients.
    pub fn train_step(&mut self, batch: &[ViewSet<f32>]) -> Result<StepOutcome, TrainError> {
        let lr = cosine_lr(self.step, &self.schedule);
        let m = ema_momentum_at(self.step, self.cfg.total_steps(), self.cfg.ema_momentum);
        let tape = Tape::new();
        let bind_o = Binding::new(&self.pair.online, Some(&tape), Branch::Online)?;
        let bind_t = Binding::new(&self.pair.target, None, Branch::Target)?;
        let cfg = &self.cfg;
        let arch = &cfg.arch;
        let (hw, ch) = (arch.feat_hw(), arch.feat_channels());

        let mut byol_acc: Option<Tensor<f32>> = None;
        let mut byol_triples = 0usize;
        let mut aux_acc: Option<Tensor<f32>> = None;
        let mut aux_triples = 0usize;
        let mut used = 0usize;

        for set in batch.iter().filter(|s| !s.degenerate) {
            let box_lists = view_box_lists(set, cfg.roi)?;
            let views = set.views.len();
            let mut predicted: ViewEmbeds<f32> = Vec::with_capacity(views);
            let mut targets: ViewEmbeds<f32> = Vec::with_capacity(views);
            let mut online_proj: ViewEmbeds<f32> = Vec::with_capacity(views);
            let mut fmaps_o: Vec<Option<Tensor<f32>>> = Vec::with_capacity(views);

            for (view, boxes) in set.views.iter().zip(&box_lists) {
                if boxes.is_empty() {
                    predicted.push(BTreeMap::new());
                    targets.push(BTreeMap::new());
                    online_proj.push(BTreeMap::new());
                    fmaps_o.push(None);
                    continue;
                }
                let img = view.image.to_tensor()?;
                let y_o = backbone_forward(arch, &bind_o, &img)?;
                let y_t = backbone_forward(arch, &bind_t, &img)?;
                debug_assert_eq!(y_o.shape(), [hw, hw, ch]);
                let (proj_o, pred_o) = box_rows(&bind_o, &y_o, boxes, cfg.roi, true)?;
                let (proj_t, _) = box_rows(&bind_t, &y_t, boxes, cfg.roi, false)?;
                predicted.push(pred_o);
                online_proj.push(proj_o);
                targets.push(proj_t);
                fmaps_o.push(Some(y_o));
            }

            // Box crops forwarded whole act as extra single-box views: their
            // features pair with the global views' RoI features of the same
            // box in the exchange loss, but stay out of the auxiliary terms.
            if cfg.roi.uses_sampled_boxes() {
                for lv in &set.local_views {
                    let img = lv.image.to_tensor()?;
                    let y_o = backbone_forward_sized(arch, &bind_o, &img)?;
                    let y_t = backbone_forward_sized(arch, &bind_t, &img)?;
                    let full = BoxXyxy::new(0.0, 0.0, 1.0, 1.0)?;
                    let whole = BTreeMap::from([(lv.box_index, full)]);
                    let (_, pred_o) = box_rows(&bind_o, &y_o, &whole, cfg.roi, true)?;
                    let (proj_t, _) = box_rows(&bind_t, &y_t, &whole, cfg.roi, false)?;
                    predicted.push(pred_o);
                    targets.push(proj_t);
                }
            }

            let (l_b, n_b) = match byol_loss(&predicted, &targets, &cfg.loss) {
                Ok(v) => v,
                Err(LossError::DegenerateBatch) => continue,
                Err(e) => return Err(e.into()),
            };
            byol_triples += n_b;
            byol_acc = Some(match byol_acc.take() {
                Some(a) => a.add(&l_b)?,
                None => l_b,
            });

            let aux_image = match cfg.loss.aux_mode {
                AuxMode::None => None,
                AuxMode::Prediction => match box_prediction_loss(&online_proj, &cfg.loss) {
                    Ok(v) => Some(v),
                    Err(LossError::DegenerateBatch) => None,
                    Err(e) => return Err(e.into()),
                },
                AuxMode::Regression => {
                    let mut groups: Vec<Vec<(Tensor<f32>, BoxCxcywh<f64>)>> = Vec::new();
                    for i in 0..views {
                        for j in 0..views {
                            if i == j {
                                continue;
                            }
                            let Some(fmap_i) = &fmaps_o[i] else { continue };
                            let mut group = Vec::new();
                            for (k, u_j) in &online_proj[j] {
                                if let Some(truth) = box_lists[i].get(k) {
                                    let pred = decoder_forward(&bind_o, fmap_i, u_j)?;
                                    group.push((pred, truth.to_cxcywh()));
                                }
                            }
                            if !group.is_empty() {
                                groups.push(group);
                            }
                        }
                    }
                    match box_regression_loss(&groups, &cfg.loss) {
                        Ok(v) => Some(v),
                        Err(LossError::DegenerateBatch) => None,
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            if let Some((t, n)) = aux_image {
                aux_triples += n;
                aux_acc = Some(match aux_acc.take() {
                    Some(a) => a.add(&t)?,
                    None => t,
                });
            }
            used += 1;
        }

        if used == 0 {
            return Err(LossError::DegenerateBatch.into());
        }
        let inv = (used as f32).recip();
        let byol_mean = byol_acc.expect("used > 0 implies an accumulated loss").mul_scalar(inv)?;
        let aux = match aux_acc {
            Some(t) => Some((t.mul_scalar(inv)?, aux_triples)),
            None => None,
        };
        let (total, breakdown) = total_loss((byol_mean, byol_triples), aux, &self.cfg.loss)?;
        total.backward()?;
        let grads = bind_o.gradients();
        debug_assert!(
            bind_t.gradients().is_empty(),
            "target branch must stay off the tape"
        );
        self.opt.step(&mut self.pair.online, &grads, lr)?;
        ema_update(&self.pair.online, &mut self.pair.target, m)?;
        Ok(StepOutcome {
            breakdown,
            lr,
            m,
            used_sets: used,
        })
    }
}

/// Both branches in one checkpoint, names prefixed `online.` / `target.`.
pub fn save_pair(pair: &NetworkPair<f32>, path: &Path) -> Result<(), TrainError> {
    let mut combined = ParamStore::<f32>::new();
    for (name, p) in pair.online.iter() {
        combined.insert(&format!("online.{name}"), p.shape.clone(), p.data.clone());
    }
    for (name, p) in pair.target.iter() {
        combined.insert(&format!("target.{name}"), p.shape.clone(), p.data.clone());
    }
    checkpoint::save(&combined, path)?;
    Ok(())
}

pub fn load_pair(
    path: &Path,
    arch: ArchConfig,
    roi_feature_len: usize,
) -> Result<NetworkPair<f32>, TrainError> {
    let combined = checkpoint::load(path)?;
    let mut online = ParamStore::new();
    let mut target = ParamStore::new();
    for (name, p) in combined.iter() {
        if let Some(rest) = name.strip_prefix("online.") {
            online.insert(rest, p.shape.clone(), p.data.clone());
        } else if let Some(rest) = name.strip_prefix("target.") {
            target.insert(rest, p.shape.clone(), p.data.clone());
        } else {
            return Err(TrainError::InvalidConfig(format!(
                "checkpoint parameter {name} lacks an online./target. branch prefix"
            )));
        }
    }
    Ok(NetworkPair {
        online,
        target,
        arch,
        roi_feature_len,
    })
}

/// Evaluation items draw from synth indices disjoint from any training run
/// (training uses 0..steps*batch) and from a separate augmentation domain.
pub const EVAL_INDEX_BASE: u64 = 1 << 32;

pub fn config_hash(cfg: &TrainConfig) -> Result<String, TrainError> {
    let bytes = serde_json::to_vec(cfg)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub steps: usize,
    pub faults: usize,
    pub retrieval_top1: f64,
    pub chance: f64,
    pub boxes_ranked: usize,
    pub min_dim_std: f64,
    pub mean_dim_std: f64,
    pub mean_offdiag_cosine: f64,
    pub config_hash: String,
}

/// Full training run into `out_dir`: writes config.json, a metrics row per
/// executed step, periodic and final checkpoints, and report.json with the
/// retrieval and collapse probes on a held-out evaluation stream.
pub fn run_training(cfg: &TrainConfig, out_dir: &Path) -> Result<RunReport, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    std::fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    let hash = config_hash(cfg)?;
    let mut writer = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let source = BatchSource {
        synth: cfg.synth.clone(),
        aug: cfg.aug.clone(),
        run_seed: cfg.seed,
        domain: DOMAIN_AUG_TRAIN,
    };
    let total = cfg.total_steps();
    for step in 0..total {
        let sets: Vec<ViewSet<f32>> =
            source.batch(step as u64 * cfg.batch_size as u64, cfg.batch_size)?;
        let t0 = Instant::now();
        match trainer.train_step(&sets) {
            Ok(out) => {
                trainer.fault_streak = 0;
                writer.append(&MetricsRow {
                    step,
                    lr: out.lr,
                    m: out.m,
                    l_byol: out.breakdown.l_byol,
                    l_box_pred: out.breakdown.l_box_pred,
                    l_box_reg: out.breakdown.l_box_reg,
                    total: out.breakdown.total,
                    pair_count: out.breakdown.pair_count,
                    wall_ms: t0.elapsed().as_millis() as u64,
                })?;
                if (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total {
                    save_pair(
                        &trainer.pair,
                        &out_dir.join(format!("checkpoints/step{:05}.ckpt", step + 1)),
                    )?;
                }
            }
            Err(e) if e.is_step_fault() => {
                trainer.faults += 1;
                trainer.fault_streak += 1;
                if trainer.fault_streak >= 3 {
                    return Err(TrainError::Aborted {
                        step,
                        streak: trainer.fault_streak,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        trainer.step += 1;
    }
    save_pair(&trainer.pair, &out_dir.join("checkpoints/final.ckpt"))?;

    let eval_source = BatchSource {
        synth: cfg.synth.clone(),
        aug: cfg.aug.clone(),
        run_seed: cfg.seed,
        domain: DOMAIN_AUG_EVAL,
    };
    let sets: Vec<ViewSet<f32>> = eval_source.batch(EVAL_INDEX_BASE, cfg.eval_images)?;
    let ev = eval_retrieval(&trainer.pair, &sets, cfg.roi)?;
    let report = RunReport {
        steps: total,
        faults: trainer.faults,
        retrieval_top1: ev.retrieval_top1,
        chance: cfg.chance_level(),
        boxes_ranked: ev.boxes_ranked,
        min_dim_std: ev.stats.min_dim_std,
        mean_dim_std: ev.stats.mean_dim_std,
        mean_offdiag_cosine: ev.stats.mean_offdiag_cosine,
        config_hash: hash,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}
