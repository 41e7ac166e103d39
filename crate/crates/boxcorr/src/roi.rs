//! Box-feature pooling over feature maps.
//!
//! Three pooling families share one coordinate convention: a normalized box
//! coordinate u maps to continuous feature coordinate `u*S - 0.5` on a map of
//! side S (align-corners=false). `roi_align` reads one bilinear sample per
//! bin center; `avg_overlap` averages the cells the box touches; shared-grid
//! mode derives corresponding box lists from two crop windows instead of
//! sampling boxes at random.

use crate::geometry::{is_valid, project_box, BoxXyxy, GeometryError, ViewTransform};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};
use std::rc::Rc;

/// Pooling mode for turning one box into one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    /// Single bilinear sample at the box center.
    Ra1,
    /// c*c bin centers, one sample each, flattened.
    RaC { c: usize },
    /// Unweighted mean of feature cells overlapping the box.
    Avg,
    /// Grid of corresponding boxes over the crop intersection; each grid box
    /// is pooled like `Ra1`. Only valid when box sampling is disabled.
    SharedGrid { c: usize },
}

impl RoiMode {
    /// Length of the pooled feature for a map with `channels` channels.
    pub fn feature_len(&self, channels: usize) -> usize {
        match self {
            RoiMode::Ra1 | RoiMode::Avg | RoiMode::SharedGrid { .. } => channels,
            RoiMode::RaC { c } => c * c * channels,
        }
    }

    pub fn uses_sampled_boxes(&self) -> bool {
        !matches!(self, RoiMode::SharedGrid { .. })
    }
}

/// RoIAlign: the box is split into `c`×`c` equal bins and each bin center is
/// read with one bilinear sample. Returns `[c,c,C]`, differentiable in `y`.
pub fn roi_align<S: Scalar>(
    y: &Tensor<S>,
    b: &BoxXyxy<f64>,
    c: usize,
) -> Result<Tensor<S>, TensorError> {
    let op = "roi_align";
    let s = y.shape();
    if s.len() != 3 {
        return Err(TensorError::Invalid {
            op,
            detail: format!("expected [H,W,C] map, got shape {s:?}"),
        });
    }
    if c == 0 {
        return Err(TensorError::Invalid {
            op,
            detail: "bin count must be at least 1".into(),
        });
    }
    let (h, w, ch) = (s[0], s[1], s[2]);
    let (bw, bh) = (b.width(), b.height());
    let mut samples = Vec::with_capacity(c * c);
    for i in 0..c {
        for j in 0..c {
            let ux = b.x1 + (j as f64 + 0.5) * bw / c as f64;
            let uy = b.y1 + (i as f64 + 0.5) * bh / c as f64;
            samples.push(y.bilinear_sample(ux * w as f64 - 0.5, uy * h as f64 - 0.5)?);
        }
    }
    let refs: Vec<&Tensor<S>> = samples.iter().collect();
    Tensor::stack(&refs)?.reshape(&[c, c, ch])
}

/// Cells of the feature grid whose extent intersects `b` with positive area,
/// as flat `[H*W]` indices. Empty only for degenerate inputs; callers fall
/// back to the center cell.
fn overlap_cells(b: &BoxXyxy<f64>, h: usize, w: usize) -> Vec<usize> {
    let mut cells = Vec::new();
    for r in 0..h {
        let cy1 = r as f64 / h as f64;
        let cy2 = (r + 1) as f64 / h as f64;
        if cy1 >= b.y2 || cy2 <= b.y1 {
            continue;
        }
        for cc in 0..w {
            let cx1 = cc as f64 / w as f64;
            let cx2 = (cc + 1) as f64 / w as f64;
            if cx1 < b.x2 && cx2 > b.x1 {
                cells.push(r * w + cc);
            }
        }
    }
    cells
}

/// Unweighted mean over the feature cells the box overlaps. Returns `[C]`,
/// differentiable in `y`.
pub fn avg_overlap<S: Scalar>(y: &Tensor<S>, b: &BoxXyxy<f64>) -> Result<Tensor<S>, TensorError> {
    let op = "avg_overlap";
    let s = y.shape();
    if s.len() != 3 {
        return Err(TensorError::Invalid {
            op,
            detail: format!("expected [H,W,C] map, got shape {s:?}"),
        });
    }
    let (h, w, ch) = (s[0], s[1], s[2]);
    let mut cells = overlap_cells(b, h, w);
    if cells.is_empty() {
        let cx = ((b.x1 + b.x2) / 2.0 * w as f64).floor().clamp(0.0, (w - 1) as f64) as usize;
        let cy = ((b.y1 + b.y2) / 2.0 * h as f64).floor().clamp(0.0, (h - 1) as f64) as usize;
        cells.push(cy * w + cx);
    }
    let inv_n = S::from_usize(cells.len()).recip();
    let mut data = vec![S::zero(); ch];
    for &cell in &cells {
        for k in 0..ch {
            data[k] += y.data()[cell * ch + k] * inv_n;
        }
    }
    let numel = y.numel();
    let cells = Rc::new(cells);
    Tensor::from_op(op, &[y], vec![ch], data, move |up, _| {
        let mut g = vec![S::zero(); numel];
        for &cell in cells.iter() {
            for k in 0..ch {
                g[cell * ch + k] += up[k] * inv_n;
            }
        }
        vec![Some(g)]
    })
}

/// One pooled feature vector per box under `mode`, flattened to `[D]`.
pub fn extract_box_feature<S: Scalar>(
    y: &Tensor<S>,
    b: &BoxXyxy<f64>,
    mode: RoiMode,
) -> Result<Tensor<S>, TensorError> {
    let ch = *y.shape().last().expect("rank checked below");
    match mode {
        RoiMode::Ra1 | RoiMode::SharedGrid { .. } => roi_align(y, b, 1)?.reshape(&[ch]),
        RoiMode::RaC { c } => roi_align(y, b, c)?.reshape(&[c * c * ch]),
        RoiMode::Avg => avg_overlap(y, b),
    }
}

/// Splits the base-frame intersection of two crops into a `c`×`c` grid and
/// projects every cell into both view frames. Box k in the first list and
/// box k in the second are the same base region.
pub fn shared_grid_boxes<S: Scalar>(
    t_i: &ViewTransform<S>,
    t_j: &ViewTransform<S>,
    c: usize,
) -> Result<(Vec<BoxXyxy<S>>, Vec<BoxXyxy<S>>), GeometryError> {
    let (a, b) = (&t_i.crop, &t_j.crop);
    let inter = BoxXyxy::new(
        a.x1.max(b.x1),
        a.y1.max(b.y1),
        a.x2.min(b.x2),
        a.y2.min(b.y2),
    )?;
    let (iw, ih) = (inter.width(), inter.height());
    let cf = S::from_usize(c);
    // boundary cells reuse the exact intersection corners so every projected
    // coordinate is bounded by an exact crop-local 0 or 1
    let edge_x = |k: usize| {
        if k == 0 {
            inter.x1
        } else if k == c {
            inter.x2
        } else {
            inter.x1 + S::from_usize(k) * iw / cf
        }
    };
    let edge_y = |k: usize| {
        if k == 0 {
            inter.y1
        } else if k == c {
            inter.y2
        } else {
            inter.y1 + S::from_usize(k) * ih / cf
        }
    };
    let mut in_i = Vec::with_capacity(c * c);
    let mut in_j = Vec::with_capacity(c * c);
    for r in 0..c {
        for cc in 0..c {
            let cell = BoxXyxy {
                x1: edge_x(cc),
                y1: edge_y(r),
                x2: edge_x(cc + 1),
                y2: edge_y(r + 1),
            };
            in_i.push(project_box(&cell, t_i)?);
            in_j.push(project_box(&cell, t_j)?);
        }
    }
    debug_assert!(in_i.iter().chain(&in_j).all(is_valid));
    Ok((in_i, in_j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXyxy<f64> {
        BoxXyxy::new(x1, y1, x2, y2).unwrap()
    }

    fn map(data: Vec<f64>, h: usize, w: usize, c: usize) -> Tensor<f64> {
        Tensor::constant(data, &[h, w, c]).unwrap()
    }

    #[test]
    fn whole_view_single_bin_reads_map_center() {
        let y = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1);
        let out = roi_align(&y, &bx(0.0, 0.0, 1.0, 1.0), 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert!((out.data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_map_pools_to_constant_for_any_box() {
        let y = map(vec![0.7; 8 * 8 * 2], 8, 8, 2);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let x1: f64 = rng.gen_range(0.0..0.6);
            let y1: f64 = rng.gen_range(0.0..0.6);
            let b = bx(x1, y1, x1 + rng.gen_range(0.1..0.4), y1 + rng.gen_range(0.1..0.4));
            let out = roi_align(&y, &b, 3).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn single_bin_equals_multi_bin_with_one_bin() {
        let mut rng = StdRng::seed_from_u64(4);
        let data: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = map(data, 8, 8, 3);
        for _ in 0..50 {
            let x1: f64 = rng.gen_range(0.0..0.6);
            let y1: f64 = rng.gen_range(0.0..0.6);
            let b = bx(x1, y1, x1 + rng.gen_range(0.1..0.4), y1 + rng.gen_range(0.1..0.4));
            let a = roi_align(&y, &b, 1).unwrap();
            let c = extract_box_feature(&y, &b, RoiMode::Ra1).unwrap();
            assert_eq!(a.data(), c.data());
        }
    }

    #[test]
    fn one_cell_translation_reproduces_output() {
        let mut rng = StdRng::seed_from_u64(5);
        let w = 8usize;
        let base: Vec<f64> = (0..w * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // shift content one cell right
        let mut shifted = vec![0.0; w * w];
        for r in 0..w {
            for c in 0..w - 1 {
                shifted[r * w + c + 1] = base[r * w + c];
            }
        }
        let y0 = map(base, w, w, 1);
        let y1 = map(shifted, w, w, 1);
        let b = bx(0.3, 0.3, 0.6, 0.6);
        let b_shift = bx(0.3 + 1.0 / w as f64, 0.3, 0.6 + 1.0 / w as f64, 0.6);
        let a = roi_align(&y0, &b, 1).unwrap();
        let c = roi_align(&y1, &b_shift, 1).unwrap();
        assert!((a.data()[0] - c.data()[0]).abs() < 1e-6);
    }

    #[test]
    fn avg_overlap_whole_view_is_global_mean() {
        let y = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1);
        let out = avg_overlap(&y, &bx(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert!((out.data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn avg_overlap_box_inside_one_cell() {
        let y = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1);
        let out = avg_overlap(&y, &bx(0.55, 0.05, 0.95, 0.45)).unwrap();
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn avg_overlap_left_half_excludes_touching_cells() {
        let y = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2, 1);
        let out = avg_overlap(&y, &bx(0.0, 0.0, 0.5, 1.0)).unwrap();
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn roi_align_matches_brute_force_oracle() {
        let mut rng = StdRng::seed_from_u64(6);
        let (h, w, ch) = (8, 8, 2);
        let data: Vec<f64> = (0..h * w * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = map(data.clone(), h, w, ch);
        for _ in 0..50 {
            let x1: f64 = rng.gen_range(0.0..0.5);
            let y1: f64 = rng.gen_range(0.0..0.5);
            let b = bx(x1, y1, x1 + rng.gen_range(0.1..0.5), y1 + rng.gen_range(0.1..0.5));
            let c = 3usize;
            let got = roi_align(&y, &b, c).unwrap();
            for i in 0..c {
                for j in 0..c {
                    let ux = b.x1 + (j as f64 + 0.5) * b.width() / c as f64;
                    let uy = b.y1 + (i as f64 + 0.5) * b.height() / c as f64;
                    for k in 0..ch {
                        let want = crate::verify::bilinear_oracle(
                            &data,
                            h,
                            w,
                            ch,
                            ux * w as f64 - 0.5,
                            uy * h as f64 - 0.5,
                            k,
                        );
                        let idx = (i * c + j) * ch + k;
                        assert!((got.data()[idx] - want).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(7);
        let data: Vec<f64> = (0..4 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = bx(0.17, 0.23, 0.71, 0.83);
        // weighted sum so every output position contributes distinctly
        let probe: Vec<f64> = (0..8).map(|i| 0.3 + 0.17 * i as f64).collect();
        let r = grad_check(
            "roi_align",
            move |xs| {
                let out = roi_align(&xs[0], &b, 2)?.reshape(&[8])?;
                out.mul(&Tensor::constant(probe.clone(), &[8])?)?.sum_all()
            },
            &[(data.clone(), vec![4, 4, 2])],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "roi_align max rel err {}", r.max_rel_err);

        let r = grad_check(
            "avg_overlap",
            move |xs| avg_overlap(&xs[0], &b)?.sum_all(),
            &[(data, vec![4, 4, 2])],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "avg_overlap max rel err {}", r.max_rel_err);
    }

    #[test]
    fn shared_grid_identity_crops_give_quadrants() {
        let t = ViewTransform::<f64>::identity();
        let (a, b) = shared_grid_boxes(&t, &t, 2).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert_eq!(a[0], bx(0.0, 0.0, 0.5, 0.5));
        assert_eq!(a[3], bx(0.5, 0.5, 1.0, 1.0));
    }

    #[test]
    fn shared_grid_offset_crops_match_hand_projection() {
        let ti = ViewTransform::new(bx(0.0, 0.0, 0.8, 0.8), false);
        let tj = ViewTransform::new(bx(0.2, 0.2, 1.0, 1.0), false);
        let (a, b) = shared_grid_boxes(&ti, &tj, 1).unwrap();
        let close = |u: &BoxXyxy<f64>, v: &BoxXyxy<f64>| {
            (u.x1 - v.x1).abs() < 1e-12
                && (u.y1 - v.y1).abs() < 1e-12
                && (u.x2 - v.x2).abs() < 1e-12
                && (u.y2 - v.y2).abs() < 1e-12
        };
        assert!(close(&a[0], &bx(0.25, 0.25, 1.0, 1.0)));
        assert!(close(&b[0], &bx(0.0, 0.0, 0.75, 0.75)));
    }

    #[test]
    fn shared_grid_boxes_are_valid_even_with_flips() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..200 {
            let mk = |rng: &mut StdRng| {
                let x1: f64 = rng.gen_range(0.0..0.2);
                let y1: f64 = rng.gen_range(0.0..0.2);
                let crop = bx(x1, y1, x1 + rng.gen_range(0.6..0.8), y1 + rng.gen_range(0.6..0.8));
                ViewTransform::new(crop, rng.gen_bool(0.5))
            };
            let (ti, tj) = (mk(&mut rng), mk(&mut rng));
            let (a, b) = shared_grid_boxes(&ti, &tj, 3).unwrap();
            assert!(a.iter().all(is_valid));
            assert!(b.iter().all(is_valid));
        }
    }

    #[test]
    fn shared_grid_rejects_disjoint_crops() {
        let ti = ViewTransform::new(bx(0.0, 0.0, 0.3, 0.3), false);
        let tj = ViewTransform::new(bx(0.6, 0.6, 1.0, 1.0), false);
        assert!(shared_grid_boxes(&ti, &tj, 2).is_err());
    }

    #[test]
    fn feature_len_per_mode() {
        assert_eq!(RoiMode::Ra1.feature_len(64), 64);
        assert_eq!(RoiMode::RaC { c: 3 }.feature_len(64), 9 * 64);
        assert_eq!(RoiMode::Avg.feature_len(64), 64);
        assert_eq!(RoiMode::SharedGrid { c: 7 }.feature_len(64), 64);
        assert!(!RoiMode::SharedGrid { c: 7 }.uses_sampled_boxes());
        assert!(RoiMode::RaC { c: 3 }.uses_sampled_boxes());
    }
}
