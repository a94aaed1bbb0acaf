use ndarray::{Array4, ArrayView3, ArrayView4, ArrayViewMut3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageDataset, ImageSet};
use crate::{Error, Result};

/// Random rotation plus horizontal/vertical shift, applied per image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_degrees: f64,
    /// Maximum shift as a fraction of the side length, in `[0, 1)`.
    pub shift_fraction: f64,
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_degrees: 10.0,
            shift_fraction: 0.10,
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees.is_finite()) {
            return Err(Error::Config(format!(
                "rotation_degrees must be >= 0, got {}",
                self.rotation_degrees
            )));
        }
        if !(0.0..1.0).contains(&self.shift_fraction) {
            return Err(Error::Config(format!(
                "shift_fraction must lie in [0, 1), got {}",
                self.shift_fraction
            )));
        }
        Ok(())
    }
}

/// Bilinear lookup at continuous pixel coordinates. Out-of-canvas neighbours
/// contribute `fill` when given, otherwise the nearest edge pixel.
fn bilinear(img: &ArrayView3<'_, f32>, y: f64, x: f64, ch: usize, fill: Option<f32>) -> f32 {
    let (h, w, _) = img.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = (y - y0) as f32;
    let fx = (x - x0) as f32;
    let at = |yy: f64, xx: f64| -> f32 {
        let inside = yy >= 0.0 && xx >= 0.0 && yy < h as f64 && xx < w as f64;
        match (inside, fill) {
            (true, _) => img[[yy as usize, xx as usize, ch]],
            (false, Some(v)) => v,
            (false, None) => {
                let yc = yy.clamp(0.0, (h - 1) as f64) as usize;
                let xc = xx.clamp(0.0, (w - 1) as f64) as usize;
                img[[yc, xc, ch]]
            }
        }
    };
    // skip zero-weight neighbours so exact grid positions read exactly one pixel
    let mut v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
    if fx > 0.0 {
        v += (1.0 - fy) * fx * at(y0, x0 + 1.0);
    }
    if fy > 0.0 {
        v += fy * (1.0 - fx) * at(y0 + 1.0, x0);
        if fx > 0.0 {
            v += fy * fx * at(y0 + 1.0, x0 + 1.0);
        }
    }
    v
}

/// Bilinear resampling of every image to `side x side` (half-pixel centres).
pub fn resize_images(images: ArrayView4<'_, f32>, side: usize) -> Array4<f32> {
    let (n, h, w, c) = images.dim();
    let sy = h as f64 / side as f64;
    let sx = w as f64 / side as f64;
    let mut out = Array4::zeros((n, side, side, c));
    for (src, mut dst) in images.outer_iter().zip(out.outer_iter_mut()) {
        for oy in 0..side {
            let y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            for ox in 0..side {
                let x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                for ch in 0..c {
                    dst[[oy, ox, ch]] = bilinear(&src, y, x, ch, None).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

pub fn resize_to_canvas(ds: ImageDataset, side: usize) -> Result<ImageDataset> {
    if side == 0 {
        return Err(Error::Config("canvas side must be positive".into()));
    }
    if ds.images.height() == side && ds.images.width() == side {
        return Ok(ds);
    }
    let images = ImageSet::new(resize_images(ds.images.view(), side))?;
    Ok(ImageDataset { images, ..ds })
}

fn warp(
    src: ArrayView3<'_, f32>,
    mut dst: ArrayViewMut3<'_, f32>,
    angle: f64,
    shift_y: f64,
    shift_x: f64,
) {
    let (h, w, c) = src.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    for oy in 0..h {
        for ox in 0..w {
            // inverse map: undo the shift, then rotate back about the centre
            let dy = oy as f64 - shift_y - cy;
            let dx = ox as f64 - shift_x - cx;
            let sy = cos * dy - sin * dx + cy;
            let sx = sin * dy + cos * dx + cx;
            for ch in 0..c {
                dst[[oy, ox, ch]] = if sy <= -1.0 || sx <= -1.0 || sy >= h as f64 || sx >= w as f64 {
                    0.0
                } else {
                    bilinear(&src, sy, sx, ch, Some(0.0)).clamp(0.0, 1.0)
                };
            }
        }
    }
}

/// Rotates each image by a uniform angle in `±rotation_degrees` and shifts
/// it by independent uniform offsets in `±shift_fraction` of the side.
/// Uncovered pixels are 0.
pub fn augment<R: Rng + ?Sized>(batch: &Array4<f32>, cfg: &AugmentConfig, rng: &mut R) -> Array4<f32> {
    if !cfg.enabled || (cfg.rotation_degrees == 0.0 && cfg.shift_fraction == 0.0) {
        return batch.clone();
    }
    let (_, h, w, _) = batch.dim();
    let mut out = Array4::zeros(batch.dim());
    for (src, dst) in batch.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let r = cfg.rotation_degrees;
        let f = cfg.shift_fraction;
        let angle = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 }.to_radians();
        let sy = if f > 0.0 { rng.random_range(-f..=f) * h as f64 } else { 0.0 };
        let sx = if f > 0.0 { rng.random_range(-f..=f) * w as f64 } else { 0.0 };
        warp(src, dst, angle, sy, sx);
    }
    out
}
