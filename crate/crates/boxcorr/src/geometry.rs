//! Box algebra and the affine maps between crop coordinate frames.
//!
//! Boxes are axis-aligned with normalized corner coordinates relative to a
//! named frame (source canvas, base view, or augmented view). Projecting a
//! box through a crop-plus-flip transform, inverting that projection, and
//! composing nested crops are all exact affine maps, so round trips are
//! reproducible to float precision. IoU/GIoU here are plain functions used
//! for geometry checks and as oracles; the differentiable versions used by
//! training live with the losses.

use crate::scalar::Scalar;
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners must be finite with x1 < x2, y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("degenerate crop: zero width or height")]
    DegenerateCrop,
}

/// Corner-form box: top-left `(x1, y1)`, bottom-right `(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxXyxy<S> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

/// Center-form box used by the box-decoder head output.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxCxcywh<S> {
    pub cx: S,
    pub cy: S,
    pub w: S,
    pub h: S,
}

impl<S: Scalar> BoxXyxy<S> {
    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Result<Self, GeometryError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox {
                x1: x1.as_f64(),
                y1: y1.as_f64(),
                x2: x2.as_f64(),
                y2: y2.as_f64(),
            });
        }
        Ok(BoxXyxy { x1, y1, x2, y2 })
    }

    pub fn unit() -> Self {
        BoxXyxy {
            x1: S::zero(),
            y1: S::zero(),
            x2: S::one(),
            y2: S::one(),
        }
    }

    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }

    pub fn to_cxcywh(&self) -> BoxCxcywh<S> {
        let two = S::from_f64(2.0);
        BoxCxcywh {
            cx: (self.x1 + self.x2) / two,
            cy: (self.y1 + self.y2) / two,
            w: self.width(),
            h: self.height(),
        }
    }
}

impl<S: Scalar> BoxCxcywh<S> {
    pub fn to_xyxy(&self) -> BoxXyxy<S> {
        let two = S::from_f64(2.0);
        BoxXyxy {
            x1: self.cx - self.w / two,
            y1: self.cy - self.h / two,
            x2: self.cx + self.w / two,
            y2: self.cy + self.h / two,
        }
    }
}

/// Per-view photometric parameters; scales of 1 and no blur are the identity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhotometricParams<S> {
    pub brightness: S,
    pub contrast: S,
    pub saturation: S,
    pub blur_sigma: Option<S>,
}

impl<S: Scalar> PhotometricParams<S> {
    pub fn identity() -> Self {
        PhotometricParams {
            brightness: S::one(),
            contrast: S::one(),
            saturation: S::one(),
            blur_sigma: None,
        }
    }
}

/// Crop window in the parent frame plus horizontal flip and photometric
/// parameters. The geometric part defines the coordinate map; photometric
/// parameters ride along for the renderer and never affect box projection.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViewTransform<S> {
    pub crop: BoxXyxy<S>,
    pub hflip: bool,
    pub photometric: PhotometricParams<S>,
}

impl<S: Scalar> ViewTransform<S> {
    pub fn new(crop: BoxXyxy<S>, hflip: bool) -> Self {
        ViewTransform {
            crop,
            hflip,
            photometric: PhotometricParams::identity(),
        }
    }

    pub fn identity() -> Self {
        ViewTransform::new(BoxXyxy::unit(), false)
    }
}

fn crop_extents<S: Scalar>(crop: &BoxXyxy<S>) -> Result<(S, S), GeometryError> {
    let (w, h) = (crop.width(), crop.height());
    if w <= S::zero() || h <= S::zero() {
        return Err(GeometryError::DegenerateCrop);
    }
    Ok((w, h))
}

/// Maps a parent-frame box into a view's crop-local coordinates. Output can
/// lie outside `[0,1]`; validity is a separate check.
pub fn project_box<S: Scalar>(
    b: &BoxXyxy<S>,
    t: &ViewTransform<S>,
) -> Result<BoxXyxy<S>, GeometryError> {
    let (w, h) = crop_extents(&t.crop)?;
    let mut x1 = (b.x1 - t.crop.x1) / w;
    let mut x2 = (b.x2 - t.crop.x1) / w;
    let y1 = (b.y1 - t.crop.y1) / h;
    let y2 = (b.y2 - t.crop.y1) / h;
    if t.hflip {
        let (fx1, fx2) = (S::one() - x2, S::one() - x1);
        x1 = fx1;
        x2 = fx2;
    }
    Ok(BoxXyxy { x1, y1, x2, y2 })
}

/// Exact inverse of [`project_box`].
pub fn invert_project<S: Scalar>(
    b: &BoxXyxy<S>,
    t: &ViewTransform<S>,
) -> Result<BoxXyxy<S>, GeometryError> {
    let (w, h) = crop_extents(&t.crop)?;
    let (mut x1, mut x2) = (b.x1, b.x2);
    if t.hflip {
        let (fx1, fx2) = (S::one() - x2, S::one() - x1);
        x1 = fx1;
        x2 = fx2;
    }
    Ok(BoxXyxy {
        x1: t.crop.x1 + x1 * w,
        y1: t.crop.y1 + b.y1 * h,
        x2: t.crop.x1 + x2 * w,
        y2: t.crop.y1 + b.y2 * h,
    })
}

/// A crop rect expressed in `outer`'s local frame, rewritten in the frame
/// `outer` itself lives in. Projecting through `outer` then `inner` equals
/// projecting through `compose_crops(outer, inner)` once.
pub fn compose_crops<S: Scalar>(
    outer: &BoxXyxy<S>,
    inner: &BoxXyxy<S>,
) -> Result<BoxXyxy<S>, GeometryError> {
    let (w, h) = crop_extents(outer)?;
    Ok(BoxXyxy {
        x1: outer.x1 + inner.x1 * w,
        y1: outer.y1 + inner.y1 * h,
        x2: outer.x1 + inner.x2 * w,
        y2: outer.y1 + inner.y2 * h,
    })
}

/// True iff the box lies entirely inside the unit square of its frame.
pub fn is_valid<S: Scalar>(b: &BoxXyxy<S>) -> bool {
    S::zero() <= b.x1 && b.x1 < b.x2 && b.x2 <= S::one()
        && S::zero() <= b.y1 && b.y1 < b.y2 && b.y2 <= S::one()
}

/// Intersection over union; 0 for disjoint boxes. Any units, not just `[0,1]`.
pub fn iou<S: Scalar>(a: &BoxXyxy<S>, b: &BoxXyxy<S>) -> S {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(S::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(S::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    inter / union
}

/// IoU minus the fraction of the enclosing hull not covered by the union.
pub fn giou<S: Scalar>(a: &BoxXyxy<S>, b: &BoxXyxy<S>) -> S {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(S::zero());
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(S::zero());
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let hull = (a.x2.max(b.x2) - a.x1.min(b.x1)) * (a.y2.max(b.y2) - a.y1.min(b.y1));
    inter / union - (hull - union) / hull
}

/// Perturbs each corner coordinate by uniform noise within `±n` times its
/// magnitude, then clamps to the unit square and reorders corners. If the
/// noise collapses the box to zero width or height, the input is returned
/// unchanged so callers always get a usable box.
pub fn jitter_box<S: Scalar, R: Rng>(b: &BoxXyxy<S>, n: S, rng: &mut R) -> BoxXyxy<S> {
    if n <= S::zero() {
        return *b;
    }
    let amp = n.as_f64();
    let mut bump =
        |c: S| -> S { c + S::from_f64(rng.gen_range(-amp..=amp)) * c.abs() };
    let (ax1, ay1, ax2, ay2) = (bump(b.x1), bump(b.y1), bump(b.x2), bump(b.y2));
    let clamp = |c: S| c.max(S::zero()).min(S::one());
    let (mut x1, mut x2) = (clamp(ax1), clamp(ax2));
    let (mut y1, mut y2) = (clamp(ay1), clamp(ay2));
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y1 > y2 {
        std::mem::swap(&mut y1, &mut y2);
    }
    if x1 == x2 || y1 == y2 {
        return *b;
    }
    BoxXyxy { x1, y1, x2, y2 }
}
