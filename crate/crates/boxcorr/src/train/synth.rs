//! Synthetic image source: a noisy canvas with a handful of solid shapes.
//! Shape metadata (kind, box, color) is returned alongside the pixels for
//! diagnostics only; the training pipeline consumes pixels exclusively.

use crate::augment::{Image, CHANNELS};
use crate::geometry::BoxXyxy;
use crate::scalar::Scalar;
use crate::train::data::{stream_seed, DOMAIN_SYNTH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub canvas_size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Additive uniform pixel noise amplitude.
    pub noise: f64,
    /// Dataset identity; separate from the run seed.
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { canvas_size: 96, min_shapes: 2, max_shapes: 5, noise: 0.05, seed: 0 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.canvas_size < 8 {
            return Err(format!("canvas_size must be >= 8, got {}", self.canvas_size));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(format!(
                "shape count range invalid: {}..={}",
                self.min_shapes, self.max_shapes
            ));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(format!("noise must be in [0, 0.5], got {}", self.noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
    Triangle,
}

/// Diagnostic record of one drawn shape; never fed to training.
#[derive(Debug, Clone)]
pub struct ShapeMeta {
    pub kind: ShapeKind,
    pub bbox: BoxXyxy<f64>,
    pub color: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SynthItem<S> {
    pub image: Image<S>,
    pub shapes: Vec<ShapeMeta>,
}

/// Deterministic item `index` of the dataset identified by `spec.seed`.
/// Each item draws from its own RNG stream, so any subset can be generated
/// independently and in any order.
pub fn generate_one<S: Scalar>(spec: &SynthSpec, index: u64) -> SynthItem<S> {
    let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(spec.seed, DOMAIN_SYNTH, index));
    let n = spec.canvas_size;
    let mut image = Image::<S>::zeros(n, n);

    let bg: [f64; 3] = [
        rng.gen_range(0.05..=0.35),
        rng.gen_range(0.05..=0.35),
        rng.gen_range(0.05..=0.35),
    ];
    for r in 0..n {
        for c in 0..n {
            for ch in 0..CHANNELS {
                let v = bg[ch] + rng.gen_range(-spec.noise..=spec.noise);
                image.set(r, c, ch, S::from_f64(v.clamp(0.0, 1.0)));
            }
        }
    }

    let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = match rng.gen_range(0..3u8) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Ellipse,
            _ => ShapeKind::Triangle,
        };
        let color = [
            rng.gen_range(0.2..=1.0),
            rng.gen_range(0.2..=1.0),
            rng.gen_range(0.2..=1.0),
        ];
        let w = rng.gen_range(0.15..=0.45);
        let h = rng.gen_range(0.15..=0.45);
        let x1 = rng.gen_range(0.0..=(1.0 - w));
        let y1 = rng.gen_range(0.0..=(1.0 - h));
        let bbox = BoxXyxy::new(x1, y1, x1 + w, y1 + h).expect("constructed inside the canvas");
        paint(&mut image, kind, &bbox, &color);
        shapes.push(ShapeMeta { kind, bbox, color });
    }
    SynthItem { image, shapes }
}

pub fn generate_synth<S: Scalar>(spec: &SynthSpec, n: usize) -> Vec<SynthItem<S>> {
    (0..n as u64).map(|i| generate_one(spec, i)).collect()
}

fn paint<S: Scalar>(img: &mut Image<S>, kind: ShapeKind, bbox: &BoxXyxy<f64>, color: &[f64; 3]) {
    let n = img.h as f64;
    let (px1, py1) = (bbox.x1 * n, bbox.y1 * n);
    let (px2, py2) = (bbox.x2 * n, bbox.y2 * n);
    let (cx, cy) = ((px1 + px2) / 2.0, (py1 + py2) / 2.0);
    let (a, b) = ((px2 - px1) / 2.0, (py2 - py1) / 2.0);
    let (r0, r1) = (py1.floor().max(0.0) as usize, (py2.ceil() as usize).min(img.h));
    let (c0, c1) = (px1.floor().max(0.0) as usize, (px2.ceil() as usize).min(img.w));
    for r in r0..r1 {
        for c in c0..c1 {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let inside = match kind {
                ShapeKind::Rect => x >= px1 && x < px2 && y >= py1 && y < py2,
                ShapeKind::Ellipse => {
                    let (dx, dy) = ((x - cx) / a, (y - cy) / b);
                    dx * dx + dy * dy <= 1.0
                }
                ShapeKind::Triangle => {
                    // apex at top-center, base along the bottom edge
                    point_in_triangle((x, y), (cx, py1), (px1, py2), (px2, py2))
                }
            };
            if inside {
                for ch in 0..CHANNELS {
                    img.set(r, c, ch, S::from_f64(color[ch]));
                }
            }
        }
    }
}

fn point_in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let sign = |p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)| {
        (p1.0 - p3.0) * (p2.1 - p3.1) - (p2.0 - p3.0) * (p1.1 - p3.1)
    };
    let d1 = sign(p, a, b);
    let d2 = sign(p, b, c);
    let d3 = sign(p, c, a);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}
