//! Evaluation probes on frozen target networks: cross-view box retrieval
//! and embedding collapse statistics.

use crate::nn::{backbone_forward, project, Binding, Branch, NetworkPair};
use crate::roi::{extract_box_feature, RoiMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{view_box_lists, TrainError};
use crate::augment::ViewSet;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub min_dim_std: f64,
    pub mean_dim_std: f64,
    pub mean_offdiag_cosine: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub retrieval_top1: f64,
    pub boxes_ranked: usize,
    pub stats: FeatureStats,
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Collapse diagnostics over unit-normalized embeddings: per-dimension
/// standard deviation (min and mean over dimensions) and the mean cosine
/// similarity over all distinct pairs.
pub fn feature_stats(embeds: &[Vec<f64>]) -> FeatureStats {
    if embeds.is_empty() {
        return FeatureStats { min_dim_std: 0.0, mean_dim_std: 0.0, mean_offdiag_cosine: 0.0 };
    }
    let rows: Vec<Vec<f64>> = embeds.iter().map(|e| normalize(e)).collect();
    let (n, d) = (rows.len(), rows[0].len());
    let mut min_std = f64::INFINITY;
    let mut sum_std = 0.0;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        min_std = min_std.min(std);
        sum_std += std;
    }
    let mut cos_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            cos_sum += rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>();
            pairs += 1;
        }
    }
    FeatureStats {
        min_dim_std: min_std,
        mean_dim_std: sum_std / d as f64,
        mean_offdiag_cosine: if pairs > 0 { cos_sum / pairs as f64 } else { 0.0 },
    }
}

/// Top-1 ranking over per-view embedding maps: for every ordered view pair
/// and every box shared by both, the query embedding from view i must be
/// most cosine-similar to the same box's embedding among all of view j's
/// boxes. Returns (correct, ranked).
pub fn rank_top1(per_view: &[BTreeMap<usize, Vec<f64>>]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for i in 0..per_view.len() {
        for j in 0..per_view.len() {
            if i == j {
                continue;
            }
            for (k, q) in &per_view[i] {
                if !per_view[j].contains_key(k) {
                    continue;
                }
                let qn = normalize(q);
                let mut best: Option<(usize, f64)> = None;
                for (cand, e) in &per_view[j] {
                    let en = normalize(e);
                    let sim: f64 = qn.iter().zip(&en).map(|(a, b)| a * b).sum();
                    if best.map_or(true, |(_, s)| sim > s) {
                        best = Some((*cand, sim));
                    }
                }
                total += 1;
                if best.map(|(c, _)| c) == Some(*k) {
                    correct += 1;
                }
            }
        }
    }
    (correct, total)
}

/// Target-branch box embeddings for every view of one set, as f64 rows.
pub fn target_box_embeddings<S: Scalar>(
    pair: &NetworkPair<S>,
    bind_t: &Binding<S>,
    set: &ViewSet<S>,
    roi: RoiMode,
) -> Result<Vec<BTreeMap<usize, Vec<f64>>>, TrainError> {
    let box_lists = view_box_lists(set, roi)?;
    let mut out = Vec::with_capacity(set.views.len());
    for (view, boxes) in set.views.iter().zip(&box_lists) {
        let mut map = BTreeMap::new();
        if !boxes.is_empty() {
            let fmap = backbone_forward(&pair.arch, bind_t, &view.image.to_tensor()?)?;
            let feats: Vec<Tensor<S>> = boxes
                .values()
                .map(|b| extract_box_feature(&fmap, b, roi))
                .collect::<Result<_, _>>()?;
            let refs: Vec<&Tensor<S>> = feats.iter().collect();
            let embeds = project(bind_t, &Tensor::stack(&refs)?)?;
            let d = embeds.shape()[1];
            for (row, k) in boxes.keys().enumerate() {
                let vals = embeds.data()[row * d..(row + 1) * d]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                map.insert(*k, vals);
            }
        }
        out.push(map);
    }
    Ok(out)
}

/// Retrieval accuracy plus collapse statistics of a frozen pair over a set
/// of evaluation ViewSets. Degenerate sets are skipped.
pub fn eval_retrieval<S: Scalar>(
    pair: &NetworkPair<S>,
    sets: &[ViewSet<S>],
    roi: RoiMode,
) -> Result<EvalReport, TrainError> {
    let bind_t = Binding::new(&pair.target, None, Branch::Target)?;
    let mut correct = 0;
    let mut total = 0;
    let mut all_embeds: Vec<Vec<f64>> = Vec::new();
    for set in sets.iter().filter(|s| !s.degenerate) {
        let per_view = target_box_embeddings(pair, &bind_t, set, roi)?;
        let (c, t) = rank_top1(&per_view);
        correct += c;
        total += t;
        for m in &per_view {
            all_embeds.extend(m.values().cloned());
        }
    }
    Ok(EvalReport {
        retrieval_top1: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        boxes_ranked: total,
        stats: feature_stats(&all_embeds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_signal_collapse() {
        let e = vec![vec![0.6, 0.8, 0.0]; 10];
        let s = feature_stats(&e);
        assert!(s.min_dim_std < 1e-12);
        assert!((s.mean_offdiag_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_embeddings_have_zero_mean_cosine() {
        let e = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let s = feature_stats(&e);
        assert!(s.mean_offdiag_cosine.abs() < 1e-12);
        assert!(s.min_dim_std > 0.1);
    }

    #[test]
    fn copied_embeddings_retrieve_perfectly() {
        let view: BTreeMap<usize, Vec<f64>> = (0..8)
            .map(|k| {
                let mut v = vec![0.0; 8];
                v[k] = 1.0;
                v[(k + 1) % 8] = 0.3;
                (k, v)
            })
            .collect();
        let (correct, total) = rank_top1(&[view.clone(), view]);
        assert_eq!(total, 16);
        assert_eq!(correct, 16);
    }

    #[test]
    fn adversarial_embeddings_retrieve_nothing() {
        // view 1's entry for k is most similar to view 0's k+1
        let a: BTreeMap<usize, Vec<f64>> = (0..4)
            .map(|k| {
                let mut v = vec![0.0; 4];
                v[k] = 1.0;
                (k, v)
            })
            .collect();
        let b: BTreeMap<usize, Vec<f64>> = (0..4)
            .map(|k| {
                let mut v = vec![0.0; 4];
                v[(k + 1) % 4] = 1.0;
                (k, v)
            })
            .collect();
        let (correct, total) = rank_top1(&[a, b]);
        assert_eq!(total, 8);
        assert_eq!(correct, 0);
    }

    #[test]
    fn partial_validity_restricts_ranking_to_shared_boxes() {
        let a = BTreeMap::from([(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])]);
        let b = BTreeMap::from([(0, vec![1.0, 0.0])]);
        let (correct, total) = rank_top1(&[a, b]);
        // only box 0 is shared; both directions rank it
        assert_eq!(total, 2);
        assert_eq!(correct, 2);
    }
}
