//! Self-check suites with independent 64-bit oracles.
//!
//! Every oracle here recomputes its quantity from the mathematical definition
//! with plain f64 arithmetic, sharing no code with the differentiable
//! implementations it judges. Suites report machine-readable pass/fail
//! results; random points are seeded per check name, so reruns are exact.

use crate::geometry::{
    compose_crops, giou, invert_project, iou, is_valid, project_box, BoxCxcywh, BoxXyxy,
    ViewTransform,
};
use crate::loss::{
    box_prediction_loss, box_regression_loss, byol_loss, giou_t, LossConfig, LossError,
};
use crate::roi::{avg_overlap, extract_box_feature, roi_align, shared_grid_boxes, RoiMode};
use crate::tensor::{grad_check, GradReport, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

pub const GRAD_EPS: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: usize,
    pub failures: usize,
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            checks: 0,
            failures: 0,
            results: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks += 1;
        if !passed {
            self.failures += 1;
        }
        self.results.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// Runs the named suite ("all" runs every suite). `inject_fault` adds a
/// fixture op with a deliberately wrong derivative to the grad suite to
/// prove the harness catches and names bad VJPs.
pub fn run_suite(suite: &str, inject_fault: bool) -> Result<Vec<SuiteReport>, String> {
    match suite {
        "grad" => Ok(vec![grad_suite(inject_fault)]),
        "geometry" => Ok(vec![geometry_suite()]),
        "roi" => Ok(vec![roi_suite()]),
        "losses" => Ok(vec![losses_suite()]),
        "all" => Ok(vec![
            grad_suite(inject_fault),
            geometry_suite(),
            roi_suite(),
            losses_suite(),
        ]),
        other => Err(format!(
            "unknown suite {other}; expected grad, geometry, roi, losses, or all"
        )),
    }
}

fn name_seed(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
}

fn seeded(name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(name_seed(name))
}

/// Brute-force bilinear read of channel `k` from a flat `[H,W,C]` buffer at
/// continuous coordinates, borders clamped.
pub fn bilinear_oracle(
    data: &[f64],
    h: usize,
    w: usize,
    c: usize,
    x: f64,
    y: f64,
    k: usize,
) -> f64 {
    let cx = x.clamp(0.0, (w - 1) as f64);
    let cy = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (cx - x0 as f64, cy - y0 as f64);
    let at = |r: usize, cc: usize| data[(r * w + cc) * c + k];
    at(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at(y0, x1) * (1.0 - fy) * fx
        + at(y1, x0) * fy * (1.0 - fx)
        + at(y1, x1) * fy * fx
}

/// Independent iou/giou from the set definitions.
pub fn iou_giou_oracle(a: &BoxXyxy<f64>, b: &BoxXyxy<f64>) -> (f64, f64) {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let i = inter / union;
    let hull = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    (i, i - (hull - union) / hull)
}

fn rand_signed(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    let m = rng.gen_range(lo..hi);
    if rng.gen::<bool>() {
        m
    } else {
        -m
    }
}

fn vec_signed(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rand_signed(rng, lo, hi)).collect()
}

fn vec_range(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Random box in the unit square with each side at least `min_side`.
fn rand_box(rng: &mut ChaCha12Rng, min_side: f64) -> BoxXyxy<f64> {
    let w = rng.gen_range(min_side..1.0);
    let h = rng.gen_range(min_side..1.0);
    let x1 = rng.gen_range(0.0..(1.0 - w));
    let y1 = rng.gen_range(0.0..(1.0 - h));
    BoxXyxy::new(x1, y1, x1 + w, y1 + h).expect("constructive")
}

fn rand_transform(rng: &mut ChaCha12Rng, min_side: f64) -> ViewTransform<f64> {
    ViewTransform::new(rand_box(rng, min_side), rng.gen::<bool>())
}

/// Center-form box away from every kink of the giou surface: the two boxes
/// always overlap with margin and no corner coordinates tie.
fn safe_cxcywh(rng: &mut ChaCha12Rng) -> Vec<f64> {
    vec![
        rng.gen_range(0.4..0.6),
        rng.gen_range(0.4..0.6),
        rng.gen_range(0.3..0.5),
        rng.gen_range(0.3..0.5),
    ]
}

/// Random weights turn a tensor output into a scalar with nontrivial
/// upstream gradients, so VJPs cannot pass by accident of symmetry.
fn weighted(t: &Tensor<f64>, w: &[f64]) -> Result<Tensor<f64>, TensorError> {
    t.mul(&Tensor::constant(w.to_vec(), t.shape())?)?.sum_all()
}

fn loss_err(e: LossError) -> TensorError {
    match e {
        LossError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "loss",
            detail: other.to_string(),
        },
    }
}

fn rows_map(t: &Tensor<f64>, n: usize) -> Result<BTreeMap<usize, Tensor<f64>>, TensorError> {
    let d = t.shape()[1];
    (0..n)
        .map(|r| Ok((r, t.slice(0, r, r + 1)?.reshape(&[d])?)))
        .collect()
}

/// Repeats a gradient check at seeded random points; one result per op.
fn run_points(
    rep: &mut SuiteReport,
    name: &'static str,
    points: usize,
    mut one: impl FnMut(&mut ChaCha12Rng) -> Result<GradReport, TensorError>,
) {
    let mut rng = seeded(name);
    let mut worst = 0.0f64;
    let mut elems = 0usize;
    for p in 0..points {
        match one(&mut rng) {
            Ok(r) => {
                worst = worst.max(r.max_rel_err);
                elems += r.elements_checked;
                if !r.passed() {
                    rep.push(
                        name,
                        false,
                        format!(
                            "point {p}: max rel err {:.3e} exceeds tol {:.1e}",
                            r.max_rel_err, r.tol
                        ),
                    );
                    return;
                }
            }
            Err(e) => {
                rep.push(name, false, format!("point {p}: {e}"));
                return;
            }
        }
    }
    rep.push(
        name,
        true,
        format!("{points} points, {elems} elements, max rel err {worst:.3e}"),
    );
}

/// Central-difference verification of every differentiable primitive plus
/// the pooling ops and all three losses, 10 seeded points each.
pub fn grad_suite(inject_fault: bool) -> SuiteReport {
    let mut rep = SuiteReport::new("grad");
    let n = 10;

    run_points(&mut rep, "add", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "add",
            move |xs| weighted(&xs[0].add(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "add_broadcast", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 3, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "add_broadcast",
            move |xs| weighted(&xs[0].add(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "sub", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "sub",
            move |xs| weighted(&xs[0].sub(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "mul", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "mul",
            move |xs| weighted(&xs[0].mul(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "mul_broadcast", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 3, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "mul_broadcast",
            move |xs| weighted(&xs[0].mul(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "div", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.5, 1.5),
            vec_signed(rng, 6, 0.5, 1.5),
        );
        grad_check(
            "div",
            move |xs| weighted(&xs[0].div(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    // min/max inputs keep an elementwise gap so no point sits on the switch
    run_points(&mut rep, "minimum", n, |rng| {
        let a = vec_signed(rng, 6, 0.1, 1.0);
        let b: Vec<f64> = a.iter().map(|v| v + rand_signed(rng, 0.05, 0.5)).collect();
        let w = vec_signed(rng, 6, 0.5, 1.5);
        grad_check(
            "minimum",
            move |xs| weighted(&xs[0].minimum(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "maximum", n, |rng| {
        let a = vec_signed(rng, 6, 0.1, 1.0);
        let b: Vec<f64> = a.iter().map(|v| v + rand_signed(rng, 0.05, 0.5)).collect();
        let w = vec_signed(rng, 6, 0.5, 1.5);
        grad_check(
            "maximum",
            move |xs| weighted(&xs[0].maximum(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "neg", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "neg",
            move |xs| weighted(&xs[0].neg()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    // relu/abs points stay clear of the kink at 0
    run_points(&mut rep, "relu", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.05, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "relu",
            move |xs| weighted(&xs[0].relu()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "abs", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.05, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "abs",
            move |xs| weighted(&xs[0].abs()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "exp", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "exp",
            move |xs| weighted(&xs[0].exp()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "log", n, |rng| {
        let (a, w) = (vec_range(rng, 6, 0.2, 3.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "log",
            move |xs| weighted(&xs[0].log()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "sigmoid", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 2.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "sigmoid",
            move |xs| weighted(&xs[0].sigmoid()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "tanh", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 2.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "tanh",
            move |xs| weighted(&xs[0].tanh()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "add_scalar", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        let c = rand_signed(rng, 0.1, 2.0);
        grad_check(
            "add_scalar",
            move |xs| weighted(&xs[0].add_scalar(c)?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "mul_scalar", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        let c = rand_signed(rng, 0.1, 2.0);
        grad_check(
            "mul_scalar",
            move |xs| weighted(&xs[0].mul_scalar(c)?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "matmul", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 4, 0.5, 1.5),
        );
        grad_check(
            "matmul",
            move |xs| weighted(&xs[0].matmul(&xs[1])?, &w),
            &[(a, vec![2, 3]), (b, vec![3, 2])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "transpose", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "transpose",
            move |xs| weighted(&xs[0].transpose()?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "reshape", n, |rng| {
        let (a, w) = (vec_signed(rng, 6, 0.1, 1.0), vec_signed(rng, 6, 0.5, 1.5));
        grad_check(
            "reshape",
            move |xs| weighted(&xs[0].reshape(&[6])?, &w),
            &[(a, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "concat_axis0", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 3, 0.1, 1.0),
            vec_signed(rng, 9, 0.5, 1.5),
        );
        grad_check(
            "concat_axis0",
            move |xs| weighted(&Tensor::concat(&[&xs[0], &xs[1]], 0)?, &w),
            &[(a, vec![2, 3]), (b, vec![1, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "concat_axis1", n, |rng| {
        let (a, b, w) = (
            vec_signed(rng, 4, 0.1, 1.0),
            vec_signed(rng, 6, 0.1, 1.0),
            vec_signed(rng, 10, 0.5, 1.5),
        );
        grad_check(
            "concat_axis1",
            move |xs| weighted(&Tensor::concat(&[&xs[0], &xs[1]], 1)?, &w),
            &[(a, vec![2, 2]), (b, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "stack", n, |rng| {
        let (a, b, c, w) = (
            vec_signed(rng, 4, 0.1, 1.0),
            vec_signed(rng, 4, 0.1, 1.0),
            vec_signed(rng, 4, 0.1, 1.0),
            vec_signed(rng, 12, 0.5, 1.5),
        );
        grad_check(
            "stack",
            move |xs| weighted(&Tensor::stack(&[&xs[0], &xs[1], &xs[2]])?, &w),
            &[(a, vec![4]), (b, vec![4]), (c, vec![4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "slice", n, |rng| {
        let (a, w) = (vec_signed(rng, 12, 0.1, 1.0), vec_signed(rng, 8, 0.5, 1.5));
        grad_check(
            "slice",
            move |xs| weighted(&xs[0].slice(0, 1, 3)?, &w),
            &[(a, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "sum_axis", n, |rng| {
        let (a, w) = (vec_signed(rng, 12, 0.1, 1.0), vec_signed(rng, 4, 0.5, 1.5));
        grad_check(
            "sum_axis",
            move |xs| weighted(&xs[0].sum_axis(0)?, &w),
            &[(a, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "mean_axis", n, |rng| {
        let (a, w) = (vec_signed(rng, 12, 0.1, 1.0), vec_signed(rng, 3, 0.5, 1.5));
        grad_check(
            "mean_axis",
            move |xs| weighted(&xs[0].mean_axis(1)?, &w),
            &[(a, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "sum_all", n, |rng| {
        let a = vec_signed(rng, 12, 0.1, 1.0);
        grad_check(
            "sum_all",
            |xs| xs[0].sum_all(),
            &[(a, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "mean_all", n, |rng| {
        let a = vec_signed(rng, 12, 0.1, 1.0);
        grad_check(
            "mean_all",
            |xs| xs[0].mean_all(),
            &[(a, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "softmax", n, |rng| {
        let (a, w) = (vec_signed(rng, 8, 0.1, 2.0), vec_signed(rng, 8, 0.5, 1.5));
        grad_check(
            "softmax",
            move |xs| weighted(&xs[0].softmax(1)?, &w),
            &[(a, vec![2, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "l2_normalize", n, |rng| {
        let (a, w) = (vec_signed(rng, 8, 0.2, 1.0), vec_signed(rng, 8, 0.5, 1.5));
        grad_check(
            "l2_normalize",
            move |xs| weighted(&xs[0].l2_normalize(1)?, &w),
            &[(a, vec![2, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    // interior sample points with fractional parts away from the lattice,
    // where bilinear interpolation is smooth in the coordinates too
    run_points(&mut rep, "bilinear_sample", n, |rng| {
        let a = vec_signed(rng, 60, 0.1, 1.0);
        let w = vec_signed(rng, 3, 0.5, 1.5);
        let x = rng.gen_range(0..4) as f64 + rng.gen_range(0.2..0.8);
        let y = rng.gen_range(0..3) as f64 + rng.gen_range(0.2..0.8);
        grad_check(
            "bilinear_sample",
            move |xs| weighted(&xs[0].bilinear_sample(x, y)?, &w),
            &[(a, vec![4, 5, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "conv2d_stride1", n, |rng| {
        let (x, k, w) = (
            vec_signed(rng, 50, 0.1, 1.0),
            vec_signed(rng, 36, 0.1, 0.5),
            vec_signed(rng, 50, 0.5, 1.5),
        );
        grad_check(
            "conv2d_stride1",
            move |xs| weighted(&xs[0].conv2d(&xs[1], 1, 1)?, &w),
            &[(x, vec![5, 5, 2]), (k, vec![3, 3, 2, 2])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "conv2d_stride2", n, |rng| {
        let (x, k, w) = (
            vec_signed(rng, 50, 0.1, 1.0),
            vec_signed(rng, 36, 0.1, 0.5),
            vec_signed(rng, 18, 0.5, 1.5),
        );
        grad_check(
            "conv2d_stride2",
            move |xs| weighted(&xs[0].conv2d(&xs[1], 2, 1)?, &w),
            &[(x, vec![5, 5, 2]), (k, vec![3, 3, 2, 2])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "roi_align_c1", n, |rng| {
        let a = vec_signed(rng, 108, 0.1, 1.0);
        let w = vec_signed(rng, 3, 0.5, 1.5);
        let b = rand_box(rng, 0.15);
        grad_check(
            "roi_align_c1",
            move |xs| weighted(&roi_align(&xs[0], &b, 1)?, &w),
            &[(a, vec![6, 6, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "roi_align_c3", n, |rng| {
        let a = vec_signed(rng, 108, 0.1, 1.0);
        let w = vec_signed(rng, 27, 0.5, 1.5);
        let b = rand_box(rng, 0.15);
        grad_check(
            "roi_align_c3",
            move |xs| weighted(&roi_align(&xs[0], &b, 3)?, &w),
            &[(a, vec![6, 6, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "avg_overlap", n, |rng| {
        let a = vec_signed(rng, 108, 0.1, 1.0);
        let w = vec_signed(rng, 3, 0.5, 1.5);
        let b = rand_box(rng, 0.1);
        grad_check(
            "avg_overlap",
            move |xs| weighted(&avg_overlap(&xs[0], &b)?, &w),
            &[(a, vec![6, 6, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "giou", n, |rng| {
        let (a, b) = (safe_cxcywh(rng), safe_cxcywh(rng));
        grad_check(
            "giou",
            |xs| giou_t(&xs[0], &xs[1]),
            &[(a, vec![4]), (b, vec![4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "byol_loss", n, |rng| {
        let (p, t) = (vec_signed(rng, 6, 0.3, 1.0), vec_signed(rng, 6, 0.3, 1.0));
        let cfg = LossConfig::default();
        grad_check(
            "byol_loss",
            move |xs| {
                let predicted = vec![rows_map(&xs[0], 2)?, BTreeMap::new()];
                let targets = vec![BTreeMap::new(), rows_map(&xs[1], 2)?];
                byol_loss(&predicted, &targets, &cfg)
                    .map(|(l, _)| l)
                    .map_err(loss_err)
            },
            &[(p, vec![2, 3]), (t, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "byol_loss_raw", n, |rng| {
        let (p, t) = (vec_signed(rng, 6, 0.3, 1.0), vec_signed(rng, 6, 0.3, 1.0));
        let cfg = LossConfig {
            normalize_features: false,
            ..LossConfig::default()
        };
        grad_check(
            "byol_loss_raw",
            move |xs| {
                let predicted = vec![rows_map(&xs[0], 2)?, BTreeMap::new()];
                let targets = vec![BTreeMap::new(), rows_map(&xs[1], 2)?];
                byol_loss(&predicted, &targets, &cfg)
                    .map(|(l, _)| l)
                    .map_err(loss_err)
            },
            &[(p, vec![2, 3]), (t, vec![2, 3])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "box_prediction_loss", n, |rng| {
        let (a, b) = (vec_signed(rng, 12, 0.3, 1.0), vec_signed(rng, 12, 0.3, 1.0));
        // unit temperature keeps the softmax well conditioned for central
        // differences; the 1/tau factor is a separately checked mul_scalar
        let cfg = LossConfig {
            tau: 1.0,
            ..LossConfig::default()
        };
        grad_check(
            "box_prediction_loss",
            move |xs| {
                let embeds = vec![rows_map(&xs[0], 3)?, rows_map(&xs[1], 3)?];
                box_prediction_loss(&embeds, &cfg)
                    .map(|(l, _)| l)
                    .map_err(loss_err)
            },
            &[(a, vec![3, 4]), (b, vec![3, 4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });
    run_points(&mut rep, "box_regression_loss", n, |rng| {
        let (p0, p1) = (safe_cxcywh(rng), safe_cxcywh(rng));
        let t0 = safe_cxcywh(rng);
        let t1 = safe_cxcywh(rng);
        let cfg = LossConfig::default();
        grad_check(
            "box_regression_loss",
            move |xs| {
                let truth = |v: &[f64]| BoxCxcywh {
                    cx: v[0],
                    cy: v[1],
                    w: v[2],
                    h: v[3],
                };
                let groups = vec![
                    vec![(xs[0].clone(), truth(&t0)), (xs[1].clone(), truth(&t1))],
                    vec![(xs[1].clone(), truth(&t0))],
                ];
                box_regression_loss(&groups, &cfg)
                    .map(|(l, _)| l)
                    .map_err(loss_err)
            },
            &[(p0, vec![4]), (p1, vec![4])],
            GRAD_EPS,
            GRAD_TOL,
        )
    });

    if inject_fault {
        // fixture op whose forward doubles but whose VJP claims 1.7;
        // the check must fail and name it
        run_points(&mut rep, "corrupted_scale", 1, |rng| {
            let x = vec_signed(rng, 4, 0.2, 1.0);
            grad_check(
                "corrupted_scale",
                |xs| {
                    let doubled: Vec<f64> = xs[0].data().iter().map(|v| 2.0 * v).collect();
                    Tensor::from_op(
                        "corrupted_scale",
                        &[&xs[0]],
                        xs[0].shape().to_vec(),
                        doubled,
                        |up, _| vec![Some(up.iter().map(|g| g * 1.7).collect())],
                    )?
                    .sum_all()
                },
                &[(x, vec![4])],
                GRAD_EPS,
                GRAD_TOL,
            )
        });
    }
    rep
}

/// Projection round trips, crop composition, and iou/giou against the
/// set-definition oracle.
pub fn geometry_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("geometry");

    {
        let mut rng = seeded("geometry.round_trip");
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let b = rand_box(&mut rng, 0.01);
            let t = rand_transform(&mut rng, 0.05);
            let there = project_box(&b, &t).expect("valid crop");
            let back = invert_project(&there, &t).expect("valid crop");
            let fwd = project_box(&invert_project(&b, &t).expect("valid crop"), &t)
                .expect("valid crop");
            for (x, y) in [
                (back.x1, b.x1),
                (back.y1, b.y1),
                (back.x2, b.x2),
                (back.y2, b.y2),
                (fwd.x1, b.x1),
                (fwd.y1, b.y1),
                (fwd.x2, b.x2),
                (fwd.y2, b.y2),
            ] {
                worst = worst.max((x - y).abs());
            }
        }
        rep.push(
            "project_invert_round_trip",
            worst <= 1e-9,
            format!("10000 random trips both directions, max err {worst:.3e}"),
        );
    }

    {
        let mut rng = seeded("geometry.compose");
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let outer = rand_box(&mut rng, 0.1);
            let inner = rand_box(&mut rng, 0.1);
            let b = rand_box(&mut rng, 0.01);
            let two_step = project_box(
                &project_box(&b, &ViewTransform::new(outer, false)).expect("valid"),
                &ViewTransform::new(inner, false),
            )
            .expect("valid");
            let composed = compose_crops(&outer, &inner).expect("valid");
            let direct =
                project_box(&b, &ViewTransform::new(composed, false)).expect("valid");
            for (x, y) in [
                (two_step.x1, direct.x1),
                (two_step.y1, direct.y1),
                (two_step.x2, direct.x2),
                (two_step.y2, direct.y2),
            ] {
                worst = worst.max((x - y).abs());
            }
        }
        rep.push(
            "crop_composition",
            worst <= 1e-9,
            format!("10000 compositions, max err {worst:.3e}"),
        );
    }

    {
        let mut rng = seeded("geometry.iou_oracle");
        let mut worst = 0.0f64;
        let mut order_ok = true;
        let mut range_ok = true;
        for _ in 0..1000 {
            let a = rand_box(&mut rng, 0.01);
            let b = rand_box(&mut rng, 0.01);
            let (oi, og) = iou_giou_oracle(&a, &b);
            let i = iou(&a, &b);
            let g = giou(&a, &b);
            worst = worst.max((i - oi).abs()).max((g - og).abs());
            order_ok &= g <= i + 1e-12;
            range_ok &= (-1.0..=1.0).contains(&g) && (0.0..=1.0).contains(&i);
        }
        rep.push(
            "iou_giou_oracle",
            worst <= 1e-9,
            format!("1000 pairs, max err {worst:.3e}"),
        );
        rep.push(
            "giou_bounded_by_iou",
            order_ok && range_ok,
            "giou <= iou and both in range on every pair".into(),
        );
    }

    {
        let edge = BoxXyxy::new(0.0, 0.0, 1.0, 1.0).expect("unit");
        let outside = BoxXyxy::new(-1e-12, 0.0, 1.0, 1.0).expect("constructive");
        rep.push(
            "validity_edges",
            is_valid(&edge) && !is_valid(&outside),
            "exact unit box valid, epsilon outside invalid".into(),
        );
    }
    rep
}

/// Pooling against the brute-force bilinear oracle and the grid
/// correspondence invariant.
pub fn roi_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("roi");

    {
        let mut rng = seeded("roi.align_oracle");
        let mut worst = 0.0f64;
        let mut exact = true;
        for _ in 0..500 {
            let h = rng.gen_range(4..=9);
            let w = rng.gen_range(4..=9);
            let ch = rng.gen_range(1..=4);
            let data = vec_signed(&mut rng, h * w * ch, 0.1, 1.0);
            let y = Tensor::constant(data.clone(), &[h, w, ch]).expect("constructive");
            let b = rand_box(&mut rng, 0.1);
            for c in [1usize, 3, 7] {
                let got = roi_align(&y, &b, c).expect("pool");
                for i in 0..c {
                    for j in 0..c {
                        let ux = b.x1 + (j as f64 + 0.5) * b.width() / c as f64;
                        let uy = b.y1 + (i as f64 + 0.5) * b.height() / c as f64;
                        for k in 0..ch {
                            let want = bilinear_oracle(
                                &data,
                                h,
                                w,
                                ch,
                                ux * w as f64 - 0.5,
                                uy * h as f64 - 0.5,
                                k,
                            );
                            let have = got.data()[(i * c + j) * ch + k];
                            worst = worst.max((have - want).abs());
                        }
                    }
                }
            }
            let ra1 = extract_box_feature(&y, &b, RoiMode::Ra1).expect("pool");
            let rac1 = extract_box_feature(&y, &b, RoiMode::RaC { c: 1 }).expect("pool");
            exact &= ra1
                .data()
                .iter()
                .zip(rac1.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
        rep.push(
            "roi_align_oracle",
            worst <= 1e-5,
            format!("500 map/box pairs at c in {{1,3,7}}, max err {worst:.3e}"),
        );
        rep.push(
            "ra1_equals_rac1",
            exact,
            "single-sample mode is bitwise identical to a 1x1 grid".into(),
        );
    }

    {
        let mut rng = seeded("roi.avg_oracle");
        let mut worst = 0.0f64;
        for _ in 0..500 {
            let h = rng.gen_range(4..=9);
            let w = rng.gen_range(4..=9);
            let ch = rng.gen_range(1..=4);
            let data = vec_signed(&mut rng, h * w * ch, 0.1, 1.0);
            let y = Tensor::constant(data.clone(), &[h, w, ch]).expect("constructive");
            let b = rand_box(&mut rng, 0.05);
            let got = avg_overlap(&y, &b).expect("pool");
            // oracle: mean over cells whose extent positively intersects b
            let mut cells = Vec::new();
            for r in 0..h {
                for cc in 0..w {
                    let (cy1, cy2) = (r as f64 / h as f64, (r + 1) as f64 / h as f64);
                    let (cx1, cx2) = (cc as f64 / w as f64, (cc + 1) as f64 / w as f64);
                    let ix = (cx2.min(b.x2) - cx1.max(b.x1)).max(0.0);
                    let iy = (cy2.min(b.y2) - cy1.max(b.y1)).max(0.0);
                    if ix > 0.0 && iy > 0.0 {
                        cells.push(r * w + cc);
                    }
                }
            }
            for k in 0..ch {
                let want: f64 =
                    cells.iter().map(|&cell| data[cell * ch + k]).sum::<f64>() / cells.len() as f64;
                worst = worst.max((got.data()[k] - want).abs());
            }
        }
        rep.push(
            "avg_overlap_oracle",
            worst <= 1e-9,
            format!("500 map/box pairs, max err {worst:.3e}"),
        );
    }

    {
        let mut rng = seeded("roi.shared_grid");
        let mut worst = 0.0f64;
        let mut valid_ok = true;
        let mut checked = 0;
        while checked < 200 {
            let ta = rand_transform(&mut rng, 0.4);
            let tb = rand_transform(&mut rng, 0.4);
            let ix = ta.crop.x2.min(tb.crop.x2) - ta.crop.x1.max(tb.crop.x1);
            let iy = ta.crop.y2.min(tb.crop.y2) - ta.crop.y1.max(tb.crop.y1);
            if ix <= 0.01 || iy <= 0.01 {
                continue;
            }
            checked += 1;
            for c in [1usize, 2, 4] {
                let (ga, gb) = shared_grid_boxes(&ta, &tb, c).expect("overlapping crops");
                for (ba, bb) in ga.iter().zip(&gb) {
                    valid_ok &= is_valid(ba) && is_valid(bb);
                    let base_a = invert_project(ba, &ta).expect("valid");
                    let base_b = invert_project(bb, &tb).expect("valid");
                    for (x, y) in [
                        (base_a.x1, base_b.x1),
                        (base_a.y1, base_b.y1),
                        (base_a.x2, base_b.x2),
                        (base_a.y2, base_b.y2),
                    ] {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        rep.push(
            "shared_grid_correspondence",
            worst <= 1e-9 && valid_ok,
            format!("200 overlapping crop pairs at c in {{1,2,4}}, max base-frame err {worst:.3e}"),
        );
    }
    rep
}

/// Closed-form loss fixtures and the instance-BYOL reduction.
pub fn losses_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("losses");
    let cfg = LossConfig::default();

    {
        // identical unit embeddings: every term vanishes
        let e = Tensor::constant(vec![0.6, 0.8, 0.0, 1.0], &[2, 2]).expect("constructive");
        let m = rows_map(&e, 2).expect("rows");
        let (l, n) = byol_loss(&vec![m.clone(), m.clone()], &vec![m.clone(), m], &cfg)
            .expect("non-degenerate");
        let v = l.item();
        rep.push(
            "byol_zero_when_aligned",
            v.abs() < 1e-12 && n == 4,
            format!("loss {v:.3e} over {n} triples"),
        );
    }

    {
        // orthogonal unit embeddings: each squared distance is exactly 2,
        // two ordered pairs sum to 4
        let p = rows_map(
            &Tensor::constant(vec![1.0, 0.0], &[1, 2]).expect("constructive"),
            1,
        )
        .expect("rows");
        let t = rows_map(
            &Tensor::constant(vec![0.0, 1.0], &[1, 2]).expect("constructive"),
            1,
        )
        .expect("rows");
        let (l, n) = byol_loss(
            &vec![p.clone(), p],
            &vec![t.clone(), t],
            &cfg,
        )
        .expect("non-degenerate");
        let v = l.item();
        rep.push(
            "byol_orthogonal_fixture",
            (v - 4.0).abs() < 1e-12 && n == 2,
            format!("got {v} over {n} triples, want 4.0 over 2"),
        );
    }

    {
        // with one box per view and the whole view as that box, the exchange
        // loss must equal plain instance BYOL on the same pooled vectors
        let mut rng = seeded("losses.reduction");
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let q1 = vec_signed(&mut rng, 5, 0.3, 1.0);
            let q2 = vec_signed(&mut rng, 5, 0.3, 1.0);
            let z1 = vec_signed(&mut rng, 5, 0.3, 1.0);
            let z2 = vec_signed(&mut rng, 5, 0.3, 1.0);
            let row = |v: &[f64]| {
                BTreeMap::from([(
                    0usize,
                    Tensor::constant(v.to_vec(), &[v.len()]).expect("constructive"),
                )])
            };
            let (l, n) = byol_loss(
                &vec![row(&q1), row(&q2)],
                &vec![row(&z1), row(&z2)],
                &cfg,
            )
            .expect("non-degenerate");
            let unit = |v: &[f64]| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect::<Vec<f64>>()
            };
            let sq = |a: &[f64], b: &[f64]| {
                unit(a)
                    .iter()
                    .zip(&unit(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            };
            let oracle = sq(&q1, &z2) + sq(&q2, &z1);
            worst = worst.max((l.item() - oracle).abs());
            if n != 2 {
                worst = f64::INFINITY;
            }
        }
        rep.push(
            "instance_byol_reduction",
            worst <= 1e-6,
            format!("50 random embedding pairs, max err {worst:.3e}"),
        );
    }

    {
        // two orthogonal boxes at unit temperature: soft identification of
        // each among two candidates costs -ln(e / (e + 1)) = 0.31326169
        let e = Tensor::constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).expect("constructive");
        let m = rows_map(&e, 2).expect("rows");
        let unit_tau = LossConfig {
            tau: 1.0,
            ..LossConfig::default()
        };
        let (l, _) = box_prediction_loss(&vec![m.clone(), m], &unit_tau).expect("non-degenerate");
        let v = l.item();
        rep.push(
            "box_prediction_fixture",
            (v - 0.31326).abs() < 1e-5,
            format!("got {v:.6}, want 0.31326"),
        );
    }

    {
        // corners (0,0,2,2) vs (1,1,3,3): iou 1/7, giou 1/7 - 2/9,
        // l1 distance 2 per coordinate pair sums to 2+2+0+0
        let pred: Tensor<f64> =
            Tensor::constant(vec![1.0, 1.0, 2.0, 2.0], &[4]).expect("constructive");
        let truth = BoxCxcywh {
            cx: 2.0,
            cy: 2.0,
            w: 2.0,
            h: 2.0,
        };
        let reg_cfg = LossConfig {
            lambda_giou: 2.0,
            lambda_box: 5.0,
            ..LossConfig::default()
        };
        let (l, n) =
            box_regression_loss(&[vec![(pred, truth)]], &reg_cfg).expect("non-degenerate");
        let v = l.item();
        let want = 2.0 * (1.0 - (1.0 / 7.0 - 2.0 / 9.0)) + 5.0 * 2.0;
        rep.push(
            "box_regression_fixture",
            (v - 12.15873).abs() < 1e-4 && (v - want).abs() < 1e-9 && n == 1,
            format!("got {v:.6}, want {want:.6}"),
        );
    }

    {
        // giou is invariant to uniform rescaling of both boxes
        let a: Tensor<f64> =
            Tensor::constant(vec![0.5, 0.5, 0.4, 0.3], &[4]).expect("constructive");
        let b = Tensor::constant(vec![0.45, 0.55, 0.35, 0.4], &[4]).expect("constructive");
        let a2 = a.mul_scalar(10.0).expect("scale");
        let b2 = b.mul_scalar(10.0).expect("scale");
        let g1 = giou_t(&a, &b).expect("giou").item();
        let g2 = giou_t(&a2, &b2).expect("giou").item();
        rep.push(
            "giou_scale_invariance",
            (g1 - g2).abs() < 1e-12,
            format!("unit frame {g1:.9} vs 10x frame {g2:.9}"),
        );
    }
    rep
}
