//! Image grids and the score plot.

use std::path::Path;

use anyhow::Context;
use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::ArrayView4;

pub const UPSCALE: u32 = 4;

/// Lays out `[n, h, w, c]` images row-major on a `cols`-wide grid with a
/// one-pixel gap, averaging colour channels to gray, then upscales by
/// nearest neighbour.
pub fn grid(images: ArrayView4<'_, f32>, cols: usize) -> GrayImage {
    let (n, h, w, c) = images.dim();
    let cols = cols.max(1);
    let rows = n.div_ceil(cols).max(1);
    let gw = (cols * (w + 1) + 1) as u32;
    let gh = (rows * (h + 1) + 1) as u32;
    let mut img = GrayImage::from_pixel(gw, gh, Luma([64]));
    for i in 0..n {
        let (r, col) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                let v = (0..c).map(|k| images[[i, y, x, k]]).sum::<f32>() / c as f32;
                let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel((col * (w + 1) + 1 + x) as u32, (r * (h + 1) + 1 + y) as u32, Luma([px]));
            }
        }
    }
    upscale(&img)
}

fn upscale(img: &GrayImage) -> GrayImage {
    image::imageops::resize(
        img,
        img.width() * UPSCALE,
        img.height() * UPSCALE,
        image::imageops::FilterType::Nearest,
    )
}

pub fn save(img: &GrayImage, path: &Path) -> anyhow::Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Two score series on a [0, 1] axis with a dashed 0.5 reference line.
pub fn score_plot(disc: &[f64], gen: &[f64], path: &Path) -> anyhow::Result<()> {
    let (w, h, pad) = (640u32, 320u32, 20u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (pw, ph) = (w - 2 * pad, h - 2 * pad);
    let ys = |v: f64| pad + ((1.0 - v.clamp(0.0, 1.0)) * ph as f64).round() as u32;
    for x in pad..=pad + pw {
        img.put_pixel(x, pad + ph, Rgb([0, 0, 0]));
        if (x / 6) % 2 == 0 {
            img.put_pixel(x, ys(0.5), Rgb([160, 160, 160]));
        }
    }
    for y in pad..=pad + ph {
        img.put_pixel(pad, y, Rgb([0, 0, 0]));
    }
    let n = disc.len().max(gen.len());
    let xs = |i: usize| pad + if n > 1 { (i as f64 / (n - 1) as f64 * pw as f64).round() as u32 } else { 0 };
    for (series, colour) in [(disc, Rgb([31, 119, 180])), (gen, Rgb([214, 39, 40]))] {
        for i in 1..series.len() {
            line(&mut img, (xs(i - 1), ys(series[i - 1])), (xs(i), ys(series[i])), colour);
        }
        if series.len() == 1 {
            img.put_pixel(xs(0), ys(series[0]), colour);
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn line(img: &mut RgbImage, a: (u32, u32), b: (u32, u32), c: Rgb<u8>) {
    let (x0, y0, x1, y1) = (a.0 as i64, a.1 as i64, b.0 as i64, b.1 as i64);
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        img.put_pixel(x as u32, y as u32, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn grid_geometry_and_nearest_upscale() {
        let imgs = Array4::from_shape_fn((3, 2, 2, 1), |(i, y, x, _)| if (i + y + x) % 2 == 0 { 1.0 } else { 0.0 });
        let g = grid(imgs.view(), 2);
        assert_eq!(g.dimensions(), ((2 * 3 + 1) * UPSCALE, (2 * 3 + 1) * UPSCALE));
        // first pixel of image 0 is white and fills a 4x4 block
        for dy in 0..UPSCALE {
            for dx in 0..UPSCALE {
                assert_eq!(g.get_pixel(UPSCALE + dx, UPSCALE + dy)[0], 255);
            }
        }
    }

    #[test]
    fn plot_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        score_plot(&[0.9, 0.6, 0.5], &[0.1, 0.4, 0.5], &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!(img.width(), 640);
    }
}
