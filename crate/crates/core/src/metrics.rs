//! Reconstruction quality measures.

use crate::error::{Result, WppError};
use crate::image::Image;

/// Length of the uniform blur used by [`blur_effect`].
pub const BLUR_LENGTH: usize = 9;

/// Boundary excluded from every evaluation.
pub const EVAL_MARGIN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub blur_effect: f64,
    pub crop: usize,
}

/// `-10 log10(mean((x - y)²))`, for intensities in `[0, 1]`.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    let mse = x.sub(y)?.norm_sq() / x.len() as f64;
    if mse == 0.0 {
        return Err(WppError::ZeroMse);
    }
    Ok(-10.0 * mse.log10())
}

/// Central `(d1 - 2m) x (d2 - 2m)` sub-image.
pub fn crop_boundary(x: &Image, margin: usize) -> Result<Image> {
    let (d1, d2) = x.dims();
    if 2 * margin >= d1.min(d2) {
        return Err(WppError::dim(format!(
            "margin {margin} leaves nothing of a {d1}x{d2} image"
        )));
    }
    x.crop(margin, margin, d1 - 2 * margin, d2 - 2 * margin)
}

/// Half-sample symmetric index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

fn uniform_filter(x: &Image, along_rows: bool) -> Image {
    let half = (BLUR_LENGTH / 2) as isize;
    let (r, c) = x.dims();
    Image::from_fn(r, c, |i, j| {
        let mut acc = 0.0;
        for t in -half..=half {
            acc += if along_rows {
                x.get(reflect(i as isize + t, r), j)
            } else {
                x.get(i, reflect(j as isize + t, c))
            };
        }
        acc / BLUR_LENGTH as f64
    })
}

/// Blur ratio along one axis: how much of the neighbour variation of `x`
/// survives a length-9 uniform blur.
fn directional_blur(x: &Image, along_rows: bool) -> f64 {
    let blurred = uniform_filter(x, along_rows);
    let (r, c) = x.dims();
    let (dr, dc) = if along_rows { (1, 0) } else { (0, 1) };
    let mut sharp_total = 0.0;
    let mut kept_total = 0.0;
    // difference arrays are restricted to indices [2, d - 1) on both axes
    for i in 2..(r - 1).min(r - dr) {
        for j in 2..(c - 1).min(c - dc) {
            let d_sharp = (x.get(i + dr, j + dc) - x.get(i, j)).abs();
            let d_blur = (blurred.get(i + dr, j + dc) - blurred.get(i, j)).abs();
            sharp_total += d_sharp;
            kept_total += (d_sharp - d_blur).max(0.0);
        }
    }
    if sharp_total == 0.0 {
        return 0.0;
    }
    ((sharp_total - kept_total) / sharp_total).clamp(0.0, 1.0)
}

/// Perceptual blur in `[0, 1]` (0 sharp, 1 blurry); the maximum over the
/// vertical and horizontal directions. Images without any variation map to 0.
pub fn blur_effect(x: &Image) -> Result<f64> {
    let (r, c) = x.dims();
    if r < BLUR_LENGTH || c < BLUR_LENGTH {
        return Err(WppError::TooSmall(format!(
            "blur effect needs at least {BLUR_LENGTH}x{BLUR_LENGTH}, got {r}x{c}"
        )));
    }
    Ok(directional_blur(x, true).max(directional_blur(x, false)))
}

/// PSNR and blur effect after cropping `margin` pixels from `x` and `truth`.
pub fn evaluate(x: &Image, truth: &Image, margin: usize) -> Result<MetricsReport> {
    let xc = crop_boundary(x, margin)?;
    let tc = crop_boundary(truth, margin)?;
    Ok(MetricsReport {
        psnr: psnr(&xc, &tc)?,
        blur_effect: blur_effect(&xc)?,
        crop: margin,
    })
}

/// 3x3 box blur with edge replication.
pub fn box_blur3(x: &Image) -> Image {
    let (r, c) = x.dims();
    Image::from_fn(r, c, |i, j| {
        let mut acc = 0.0;
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let ii = (i as isize + di).clamp(0, r as isize - 1) as usize;
                let jj = (j as isize + dj).clamp(0, c as isize - 1) as usize;
                acc += x.get(ii, jj);
            }
        }
        acc / 9.0
    })
}
