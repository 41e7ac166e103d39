//! View construction and box sampling.
//!
//! One source image becomes a base crop, V augmented views of the base, and
//! up to K boxes drawn in the base frame. Every retained box is valid in at
//! least two views, so each box always has a cross-view partner. All crop
//! rectangles are normalized to the frame they live in: the base transform's
//! rect is in source coordinates, each view transform's rect is in base
//! coordinates, and boxes are in base coordinates.

use crate::geometry::{
    is_valid, jitter_box, project_box, BoxXyxy, GeometryError, PhotometricParams, ViewTransform,
};
use crate::scalar::Scalar;
use crate::tensor::{kernels::bilinear_taps, Tensor, TensorError};
use rand::Rng;
use std::collections::BTreeMap;

pub const CHANNELS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("source image {h}x{w} smaller than view size {need}")]
    SourceTooSmall { h: usize, w: usize, need: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Dense row-major HWC image with 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<S> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![S::zero(); h * w * CHANNELS] }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), h * w * CHANNELS, "image data length");
        Image { h, w, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> S {
        self.data[(r * self.w + c) * CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: S) {
        self.data[(r * self.w + c) * CHANNELS + ch] = v;
    }

    /// Clamped bilinear sample at continuous pixel coordinates.
    pub fn sample(&self, x: f64, y: f64, ch: usize) -> f64 {
        let taps = bilinear_taps(self.h, self.w, x, y);
        taps.iter()
            .map(|&(r, c, wt)| self.get(r, c, ch).as_f64() * wt)
            .sum()
    }

    /// Off-tape `[h, w, 3]` tensor of the pixels.
    pub fn to_tensor(&self) -> Result<Tensor<S>, TensorError> {
        Tensor::constant(self.data.clone(), &[self.h, self.w, CHANNELS])
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Number of augmented views V.
    pub views: usize,
    /// Minimum area fraction of the base crop within the source.
    pub s_base: f64,
    /// Minimum area fraction of each view crop within the base.
    pub s_view: f64,
    /// Square output size of each view in pixels.
    pub view_size: usize,
    /// Boxes sampled per image.
    pub k: usize,
    /// Minimum candidate box side, normalized to the base frame.
    pub s_min: f64,
    /// Relative coordinate jitter rate applied once in the base frame.
    pub jitter_n: f64,
    /// Candidate draw budget for box sampling and crop rejection loops.
    pub max_attempts: usize,
    /// Number of per-box local views L (0 disables them).
    pub local_views: usize,
    /// Square output size of each local view in pixels.
    pub local_view_size: usize,
    pub hflip_prob: f64,
    /// Multiplicative brightness/contrast/saturation range.
    pub color_lo: f64,
    pub color_hi: f64,
    pub blur_prob: f64,
    pub blur_sigma_lo: f64,
    pub blur_sigma_hi: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            views: 2,
            s_base: 0.9,
            s_view: 0.6,
            view_size: 64,
            k: 8,
            s_min: 0.05,
            jitter_n: 0.0,
            max_attempts: 800,
            local_views: 0,
            local_view_size: 24,
            hflip_prob: 0.5,
            color_lo: 0.6,
            color_hi: 1.4,
            blur_prob: 0.5,
            blur_sigma_lo: 0.1,
            blur_sigma_hi: 2.0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::InvalidConfig(msg));
        if self.views < 2 {
            return bad(format!("views must be >= 2, got {}", self.views));
        }
        if !(self.s_view > 0.5 && self.s_view <= 1.0) {
            return bad(format!("s_view must be in (0.5, 1], got {}", self.s_view));
        }
        if !(self.s_base > 0.0 && self.s_base <= 1.0) {
            return bad(format!("s_base must be in (0, 1], got {}", self.s_base));
        }
        if !(self.s_min > 0.0 && self.s_min < 1.0) {
            return bad(format!("s_min must be in (0, 1), got {}", self.s_min));
        }
        if self.view_size == 0 || self.local_view_size == 0 {
            return bad("view sizes must be positive".into());
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.max_attempts < self.k {
            return bad(format!(
                "max_attempts {} below k {}",
                self.max_attempts, self.k
            ));
        }
        if !(self.jitter_n >= 0.0) {
            return bad(format!("jitter_n must be >= 0, got {}", self.jitter_n));
        }
        for (name, p) in [("hflip_prob", self.hflip_prob), ("blur_prob", self.blur_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(self.color_lo > 0.0 && self.color_lo <= self.color_hi) {
            return bad("color range must satisfy 0 < lo <= hi".into());
        }
        if !(self.blur_sigma_lo > 0.0 && self.blur_sigma_lo <= self.blur_sigma_hi) {
            return bad("blur sigma range must satisfy 0 < lo <= hi".into());
        }
        Ok(())
    }
}

/// One augmented view: rendered pixels plus the transform that produced them.
#[derive(Debug, Clone)]
pub struct View<S> {
    pub image: Image<S>,
    pub transform: ViewTransform<f64>,
}

/// One per-box local view cropped from the base pixels.
#[derive(Debug, Clone)]
pub struct LocalView<S> {
    pub box_index: usize,
    pub image: Image<S>,
}

/// Everything one source image contributes to a training step.
#[derive(Debug, Clone)]
pub struct ViewSet<S> {
    pub base_transform: ViewTransform<f64>,
    pub views: Vec<View<S>>,
    pub boxes_base: Vec<BoxXyxy<f64>>,
    /// For each view i, box index k -> projected box, present iff valid in i.
    pub boxes_per_view: Vec<BTreeMap<usize, BoxXyxy<f64>>>,
    pub local_views: Vec<LocalView<S>>,
    /// True when box sampling kept nothing; such sets are skipped upstream.
    pub degenerate: bool,
}

impl<S> ViewSet<S> {
    /// Box indices valid in view `i`.
    pub fn valid_set(&self, i: usize) -> Vec<usize> {
        self.boxes_per_view[i].keys().copied().collect()
    }
}

/// Draws a crop rectangle with area fraction in `[scale_min, 1]` and aspect
/// ratio in `[3/4, 4/3]`, uniformly positioned inside the unit frame.
/// Falls back to the full frame when no attempt fits.
fn sample_crop_rect<R: Rng>(scale_min: f64, max_attempts: usize, rng: &mut R) -> BoxXyxy<f64> {
    let log_lo = (3.0f64 / 4.0).ln();
    let log_hi = (4.0f64 / 3.0).ln();
    for _ in 0..max_attempts {
        let area = rng.gen_range(scale_min..=1.0);
        let aspect = rng.gen_range(log_lo..=log_hi).exp();
        let w = (area * aspect).sqrt();
        let h = (area / aspect).sqrt();
        if w <= 1.0 && h <= 1.0 {
            let x1 = rng.gen_range(0.0..=(1.0 - w).max(0.0));
            let y1 = rng.gen_range(0.0..=(1.0 - h).max(0.0));
            if let Ok(b) = BoxXyxy::new(x1, y1, (x1 + w).min(1.0), (y1 + h).min(1.0)) {
                return b;
            }
        }
    }
    BoxXyxy::new(0.0, 0.0, 1.0, 1.0).expect("unit frame")
}

/// Renders `out_h x out_w` pixels by bilinear-sampling `src` inside `crop`
/// (normalized to `src`), mirroring horizontally first when `hflip` is set.
/// Output pixel centers map into the crop with the half-pixel convention.
pub fn render_crop<S: Scalar>(
    src: &Image<S>,
    crop: &BoxXyxy<f64>,
    hflip: bool,
    out_h: usize,
    out_w: usize,
) -> Image<S> {
    let mut out = Image::zeros(out_h, out_w);
    let (cw, ch) = (crop.x2 - crop.x1, crop.y2 - crop.y1);
    for r in 0..out_h {
        let v = crop.y1 + ch * ((r as f64 + 0.5) / out_h as f64);
        let y = v * src.h as f64 - 0.5;
        for c in 0..out_w {
            let mut u = (c as f64 + 0.5) / out_w as f64;
            if hflip {
                u = 1.0 - u;
            }
            let x = (crop.x1 + cw * u) * src.w as f64 - 0.5;
            for k in 0..CHANNELS {
                out.set(r, c, k, S::from_f64(src.sample(x, y, k)));
            }
        }
    }
    out
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Applies brightness, contrast (blend toward mean luma), saturation (blend
/// toward per-pixel luma), then optional Gaussian blur, then clamps to [0,1].
/// Identity parameters leave in-range pixels bitwise unchanged.
pub fn apply_photometric<S: Scalar>(img: &mut Image<S>, p: &PhotometricParams<f64>) {
    let n = img.h * img.w;
    let mut px: Vec<f64> = img.data.iter().map(|v| v.as_f64()).collect();
    for v in px.iter_mut() {
        *v *= p.brightness;
    }
    let mean_l = px
        .chunks_exact(CHANNELS)
        .map(|c| luma(c[0], c[1], c[2]))
        .sum::<f64>()
        / n as f64;
    for v in px.iter_mut() {
        *v = *v * p.contrast + mean_l * (1.0 - p.contrast);
    }
    for c in px.chunks_exact_mut(CHANNELS) {
        let l = luma(c[0], c[1], c[2]);
        for v in c.iter_mut() {
            *v = *v * p.saturation + l * (1.0 - p.saturation);
        }
    }
    if let Some(sigma) = p.blur_sigma {
        gaussian_blur(&mut px, img.h, img.w, sigma);
    }
    for (dst, v) in img.data.iter_mut().zip(px) {
        *dst = S::from_f64(v.clamp(0.0, 1.0));
    }
}

/// Separable Gaussian blur with clamp-to-edge taps, in place.
fn gaussian_blur(px: &mut [f64], h: usize, w: usize, sigma: f64) {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let mut kernel: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let idx = |r: usize, c: usize, ch: usize| (r * w + c) * CHANNELS + ch;
    let mut tmp = px.to_vec();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..CHANNELS {
                let mut acc = kernel[0] * px[idx(r, c, ch)];
                for d in 1..=radius {
                    let left = c.saturating_sub(d);
                    let right = (c + d).min(w - 1);
                    acc += kernel[d] * (px[idx(r, left, ch)] + px[idx(r, right, ch)]);
                }
                tmp[idx(r, c, ch)] = acc;
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            for ch in 0..CHANNELS {
                let mut acc = kernel[0] * tmp[idx(r, c, ch)];
                for d in 1..=radius {
                    let up = r.saturating_sub(d);
                    let down = (r + d).min(h - 1);
                    acc += kernel[d] * (tmp[idx(up, c, ch)] + tmp[idx(down, c, ch)]);
                }
                px[idx(r, c, ch)] = acc;
            }
        }
    }
}

/// Crops the base view out of the source image. The returned transform's
/// rect is in source coordinates; pixels are rendered at the crop's own
/// resolution (at least one pixel per side).
pub fn sample_base_view<S: Scalar, R: Rng>(
    src: &Image<S>,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<(Image<S>, ViewTransform<f64>), AugmentError> {
    if src.h < cfg.view_size || src.w < cfg.view_size {
        return Err(AugmentError::SourceTooSmall { h: src.h, w: src.w, need: cfg.view_size });
    }
    let crop = sample_crop_rect(cfg.s_base, cfg.max_attempts, rng);
    let out_h = (((crop.y2 - crop.y1) * src.h as f64).round() as usize).max(1);
    let out_w = (((crop.x2 - crop.x1) * src.w as f64).round() as usize).max(1);
    let image = render_crop(src, &crop, false, out_h, out_w);
    let transform = ViewTransform {
        crop,
        hflip: false,
        photometric: PhotometricParams::identity(),
    };
    Ok((image, transform))
}

/// Draws V augmented views of the base: a crop with minimum area `s_view`
/// (so any two view crops overlap), a coin-flip mirror, color jitter, and
/// optional blur, rendered at `view_size` squared.
pub fn sample_views<S: Scalar, R: Rng>(
    base: &Image<S>,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Vec<View<S>> {
    (0..cfg.views)
        .map(|_| {
            let crop = sample_crop_rect(cfg.s_view, cfg.max_attempts, rng);
            let hflip = rng.gen_bool(cfg.hflip_prob);
            let photometric = PhotometricParams {
                brightness: rng.gen_range(cfg.color_lo..=cfg.color_hi),
                contrast: rng.gen_range(cfg.color_lo..=cfg.color_hi),
                saturation: rng.gen_range(cfg.color_lo..=cfg.color_hi),
                blur_sigma: rng
                    .gen_bool(cfg.blur_prob)
                    .then(|| rng.gen_range(cfg.blur_sigma_lo..=cfg.blur_sigma_hi)),
            };
            let mut image = render_crop(base, &crop, hflip, cfg.view_size, cfg.view_size);
            apply_photometric(&mut image, &photometric);
            View { image, transform: ViewTransform { crop, hflip, photometric } }
        })
        .collect()
}

/// Draws up to K boxes in the base frame: corners uniform, sides at least
/// `s_min`, jittered once, kept only when the projection is valid in at
/// least two views. Stops after `max_attempts` candidate draws.
pub fn sample_boxes<R: Rng>(
    transforms: &[ViewTransform<f64>],
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (Vec<BoxXyxy<f64>>, Vec<BTreeMap<usize, BoxXyxy<f64>>>) {
    let mut boxes = Vec::new();
    let mut per_view: Vec<BTreeMap<usize, BoxXyxy<f64>>> =
        vec![BTreeMap::new(); transforms.len()];
    for _ in 0..cfg.max_attempts {
        if boxes.len() == cfg.k {
            break;
        }
        let (xa, xb) = (rng.gen::<f64>(), rng.gen::<f64>());
        let (ya, yb) = (rng.gen::<f64>(), rng.gen::<f64>());
        let (x1, x2) = (xa.min(xb), xa.max(xb));
        let (y1, y2) = (ya.min(yb), ya.max(yb));
        if x2 - x1 < cfg.s_min || y2 - y1 < cfg.s_min {
            continue;
        }
        let Ok(candidate) = BoxXyxy::new(x1, y1, x2, y2) else { continue };
        let candidate = jitter_box(&candidate, cfg.jitter_n, rng);
        let projections: Vec<(usize, BoxXyxy<f64>)> = transforms
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                project_box(&candidate, t)
                    .ok()
                    .filter(is_valid)
                    .map(|p| (i, p))
            })
            .collect();
        if projections.len() >= 2 {
            let k = boxes.len();
            boxes.push(candidate);
            for (i, p) in projections {
                per_view[i].insert(k, p);
            }
        }
    }
    (boxes, per_view)
}

/// Crops each selected box out of the base pixels at `local_view_size`
/// squared, keeping its box index for pairing with global-view features.
pub fn build_local_views<S: Scalar>(
    base: &Image<S>,
    boxes: &[BoxXyxy<f64>],
    cfg: &AugmentationConfig,
) -> Vec<LocalView<S>> {
    boxes
        .iter()
        .take(cfg.local_views)
        .enumerate()
        .map(|(k, b)| LocalView {
            box_index: k,
            image: render_crop(base, b, false, cfg.local_view_size, cfg.local_view_size),
        })
        .collect()
}

/// Full pipeline for one source image: base crop, V views, K boxes, and
/// optional local views. A set that kept zero boxes is flagged degenerate.
pub fn build_view_set<S: Scalar, R: Rng>(
    src: &Image<S>,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<ViewSet<S>, AugmentError> {
    let (base_image, base_transform) = sample_base_view(src, cfg, rng)?;
    let views = sample_views(&base_image, cfg, rng);
    let transforms: Vec<ViewTransform<f64>> = views.iter().map(|v| v.transform).collect();
    let (boxes_base, boxes_per_view) = sample_boxes(&transforms, cfg, rng);
    let degenerate = boxes_base.is_empty();
    let local_views = build_local_views(&base_image, &boxes_base, cfg);
    Ok(ViewSet {
        base_transform,
        views,
        boxes_base,
        boxes_per_view,
        local_views,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn test_image(h: usize, w: usize, seed: u64) -> Image<f64> {
        let mut r = rng(seed);
        let data = (0..h * w * CHANNELS).map(|_| r.gen::<f64>()).collect();
        Image::from_data(h, w, data)
    }

    fn small_cfg() -> AugmentationConfig {
        AugmentationConfig {
            view_size: 8,
            local_view_size: 6,
            k: 4,
            max_attempts: 400,
            ..AugmentationConfig::default()
        }
    }

    #[test]
    fn base_scale_one_yields_full_frame() {
        let cfg = AugmentationConfig { s_base: 1.0, ..small_cfg() };
        let src = test_image(16, 16, 1);
        let mut r = rng(7);
        let (img, t) = sample_base_view(&src, &cfg, &mut r).unwrap();
        assert_eq!((t.crop.x1, t.crop.y1, t.crop.x2, t.crop.y2), (0.0, 0.0, 1.0, 1.0));
        assert_eq!((img.h, img.w), (16, 16));
    }

    #[test]
    fn base_crop_area_respects_scale_bounds() {
        let cfg = small_cfg();
        let src = test_image(16, 16, 2);
        let mut r = rng(11);
        for _ in 0..1000 {
            let (_, t) = sample_base_view(&src, &cfg, &mut r).unwrap();
            let area = (t.crop.x2 - t.crop.x1) * (t.crop.y2 - t.crop.y1);
            assert!(area >= cfg.s_base - 1e-9 && area <= 1.0 + 1e-9, "area {area}");
            assert!(is_valid(&t.crop));
        }
    }

    #[test]
    fn view_crop_area_respects_scale_and_views_pairwise_overlap() {
        let cfg = AugmentationConfig { views: 3, ..small_cfg() };
        let base = test_image(15, 15, 3);
        let mut r = rng(13);
        for _ in 0..333 {
            let views = sample_views(&base, &cfg, &mut r);
            for v in &views {
                let c = &v.transform.crop;
                let area = (c.x2 - c.x1) * (c.y2 - c.y1);
                assert!(area >= cfg.s_view - 1e-9, "area {area}");
                assert_eq!((v.image.h, v.image.w), (cfg.view_size, cfg.view_size));
            }
            for i in 0..views.len() {
                for j in (i + 1)..views.len() {
                    let a = &views[i].transform.crop;
                    let b = &views[j].transform.crop;
                    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
                    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
                    assert!(iw > 0.0 && ih > 0.0, "views {i},{j} disjoint");
                }
            }
        }
    }

    #[test]
    fn identity_photometric_is_bitwise_noop() {
        let mut img = test_image(9, 7, 4);
        let before = img.clone();
        apply_photometric(&mut img, &PhotometricParams::identity());
        assert_eq!(img, before);
    }

    #[test]
    fn photometric_output_stays_in_unit_range() {
        let mut r = rng(5);
        for seed in 0..50 {
            let mut img = test_image(8, 8, 100 + seed);
            let p = PhotometricParams {
                brightness: r.gen_range(0.6..=1.4),
                contrast: r.gen_range(0.6..=1.4),
                saturation: r.gen_range(0.6..=1.4),
                blur_sigma: if seed % 2 == 0 { Some(r.gen_range(0.1..=2.0)) } else { None },
            };
            apply_photometric(&mut img, &p);
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let mut img: Image<f64> = Image::zeros(8, 8);
        img.data.fill(0.37);
        let p = PhotometricParams { blur_sigma: Some(1.3), ..PhotometricParams::identity() };
        apply_photometric(&mut img, &p);
        assert!(img.data.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn saturation_leaves_gray_pixels_unchanged() {
        let mut img: Image<f64> = Image::zeros(4, 4);
        img.data.fill(0.5);
        let p = PhotometricParams { saturation: 1.4, ..PhotometricParams::identity() };
        apply_photometric(&mut img, &p);
        assert!(img.data.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn render_full_crop_reproduces_source() {
        let src = test_image(10, 12, 6);
        let crop = BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let out = render_crop(&src, &crop, false, 10, 12);
        for (a, b) in out.data.iter().zip(&src.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn render_hflip_mirrors_columns() {
        let src = test_image(6, 6, 7);
        let crop = BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let flipped = render_crop(&src, &crop, true, 6, 6);
        for r in 0..6 {
            for c in 0..6 {
                for ch in 0..CHANNELS {
                    let a = flipped.get(r, c, ch);
                    let b = src.get(r, 5 - c, ch);
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_transforms_keep_every_candidate() {
        let cfg = AugmentationConfig { jitter_n: 0.0, ..small_cfg() };
        let ident = ViewTransform {
            crop: BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            hflip: false,
            photometric: PhotometricParams::identity(),
        };
        let mut r = rng(17);
        let (boxes, per_view) = sample_boxes(&[ident, ident], &cfg, &mut r);
        assert_eq!(boxes.len(), cfg.k);
        for k in 0..boxes.len() {
            assert!(per_view[0].contains_key(&k) && per_view[1].contains_key(&k));
            assert_eq!(per_view[0][&k], boxes[k]);
        }
    }

    #[test]
    fn kept_boxes_respect_minimum_side_without_jitter() {
        let cfg = AugmentationConfig { jitter_n: 0.0, s_min: 0.2, ..small_cfg() };
        let ident = ViewTransform {
            crop: BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            hflip: false,
            photometric: PhotometricParams::identity(),
        };
        let mut r = rng(19);
        let (boxes, _) = sample_boxes(&[ident, ident], &cfg, &mut r);
        assert!(!boxes.is_empty());
        for b in &boxes {
            assert!(b.x2 - b.x1 >= cfg.s_min && b.y2 - b.y1 >= cfg.s_min);
        }
    }

    #[test]
    fn disjoint_views_yield_degenerate_sampling() {
        // bypasses the s_view > 0.5 invariant on purpose: no box can fit
        // inside two disjoint crops
        let cfg = small_cfg();
        let t1 = ViewTransform {
            crop: BoxXyxy::new(0.0, 0.0, 0.4, 0.4).unwrap(),
            hflip: false,
            photometric: PhotometricParams::identity(),
        };
        let t2 = ViewTransform {
            crop: BoxXyxy::new(0.6, 0.6, 1.0, 1.0).unwrap(),
            hflip: false,
            photometric: PhotometricParams::identity(),
        };
        let mut r = rng(23);
        let (boxes, _) = sample_boxes(&[t1, t2], &cfg, &mut r);
        assert!(boxes.is_empty());
        let src = test_image(16, 16, 8);
        let set = build_view_set(&src, &cfg, &mut r).unwrap();
        // the real pipeline with overlapping views is almost never degenerate
        assert!(!set.degenerate);
    }

    #[test]
    fn local_views_pair_one_image_per_selected_box() {
        let cfg = AugmentationConfig { local_views: 8, k: 8, ..small_cfg() };
        let src = test_image(16, 16, 9);
        let mut r = rng(29);
        let set = build_view_set(&src, &cfg, &mut r).unwrap();
        assert_eq!(set.local_views.len(), set.boxes_base.len().min(8));
        for (i, lv) in set.local_views.iter().enumerate() {
            assert_eq!(lv.box_index, i);
            assert_eq!((lv.image.h, lv.image.w), (cfg.local_view_size, cfg.local_view_size));
            assert_eq!(lv.image.data.len(), cfg.local_view_size * cfg.local_view_size * 3);
        }
    }

    #[test]
    fn full_box_local_view_is_a_resize_of_the_base() {
        let base = test_image(12, 12, 10);
        let cfg = AugmentationConfig { local_views: 1, local_view_size: 6, ..small_cfg() };
        let full = BoxXyxy::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let locals = build_local_views(&base, &[full], &cfg);
        let expected = render_crop(&base, &full, false, 6, 6);
        assert_eq!(locals[0].image, expected);
    }

    #[test]
    fn view_set_invariants_hold_over_many_seeds() {
        // independent projection oracle, written out by hand
        let oracle = |b: &BoxXyxy<f64>, t: &ViewTransform<f64>| -> (f64, f64, f64, f64) {
            let (cw, ch) = (t.crop.x2 - t.crop.x1, t.crop.y2 - t.crop.y1);
            let mut x1 = (b.x1 - t.crop.x1) / cw;
            let mut x2 = (b.x2 - t.crop.x1) / cw;
            let y1 = (b.y1 - t.crop.y1) / ch;
            let y2 = (b.y2 - t.crop.y1) / ch;
            if t.hflip {
                let (a, b2) = (1.0 - x2, 1.0 - x1);
                x1 = a;
                x2 = b2;
            }
            (x1, y1, x2, y2)
        };
        for seed in 0..10_000u64 {
            let cfg = AugmentationConfig {
                views: 2 + (seed % 3) as usize,
                jitter_n: if seed % 2 == 0 { 0.1 } else { 0.0 },
                ..small_cfg()
            };
            let src = test_image(16, 16, seed);
            let mut r = rng(seed.wrapping_mul(0x9e37_79b9));
            let set: ViewSet<f64> = build_view_set(&src, &cfg, &mut r).unwrap();
            assert!(set.boxes_base.len() <= cfg.k);
            assert_eq!(set.views.len(), cfg.views);
            assert_eq!(set.degenerate, set.boxes_base.is_empty());
            for (k, b) in set.boxes_base.iter().enumerate() {
                let appearances = set
                    .boxes_per_view
                    .iter()
                    .filter(|m| m.contains_key(&k))
                    .count();
                assert!(appearances >= 2, "box {k} valid in {appearances} views");
                assert!(is_valid(b));
            }
            for (i, m) in set.boxes_per_view.iter().enumerate() {
                let t = &set.views[i].transform;
                for (k, p) in m {
                    assert!(is_valid(p), "seed {seed} view {i} box {k}");
                    let (ex1, ey1, ex2, ey2) = oracle(&set.boxes_base[*k], t);
                    assert!(
                        (p.x1 - ex1).abs() < 1e-12
                            && (p.y1 - ey1).abs() < 1e-12
                            && (p.x2 - ex2).abs() < 1e-12
                            && (p.y2 - ey2).abs() < 1e-12,
                        "seed {seed} projection mismatch"
                    );
                }
            }
        }
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_view_sets() {
        let cfg = AugmentationConfig { local_views: 2, ..small_cfg() };
        let src = test_image(16, 16, 30);
        let build = || {
            let mut r = rng(31);
            build_view_set(&src, &cfg, &mut r).unwrap()
        };
        let (a, b): (ViewSet<f64>, ViewSet<f64>) = (build(), build());
        assert_eq!(a.base_transform.crop, b.base_transform.crop);
        assert_eq!(a.boxes_base, b.boxes_base);
        assert_eq!(a.boxes_per_view, b.boxes_per_view);
        assert_eq!(a.views.len(), b.views.len());
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.transform.crop, vb.transform.crop);
            assert_eq!(va.transform.hflip, vb.transform.hflip);
        }
        for (la, lb) in a.local_views.iter().zip(&b.local_views) {
            assert_eq!(la.box_index, lb.box_index);
            assert_eq!(la.image, lb.image);
        }
    }

    #[test]
    fn config_validation_rejects_out_of_range_fields() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let cases: Vec<AugmentationConfig> = vec![
            AugmentationConfig { views: 1, ..Default::default() },
            AugmentationConfig { s_view: 0.5, ..Default::default() },
            AugmentationConfig { s_min: 0.0, ..Default::default() },
            AugmentationConfig { s_min: 1.0, ..Default::default() },
            AugmentationConfig { view_size: 0, ..Default::default() },
            AugmentationConfig { k: 0, ..Default::default() },
            AugmentationConfig { max_attempts: 3, k: 8, ..Default::default() },
            AugmentationConfig { jitter_n: -0.1, ..Default::default() },
            AugmentationConfig { hflip_prob: 1.5, ..Default::default() },
            AugmentationConfig { color_lo: 0.0, ..Default::default() },
            AugmentationConfig { blur_sigma_lo: 0.0, ..Default::default() },
        ];
        for (i, c) in cases.iter().enumerate() {
            assert!(c.validate().is_err(), "case {i} should fail");
        }
    }

    #[test]
    fn source_smaller_than_view_size_is_rejected() {
        let cfg = AugmentationConfig::default(); // view_size 64
        let src = test_image(16, 16, 40);
        let mut r = rng(41);
        assert!(matches!(
            sample_base_view(&src, &cfg, &mut r),
            Err(AugmentError::SourceTooSmall { .. })
        ));
    }
}
