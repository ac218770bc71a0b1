//! Blur kernel and bias from one registered high/low resolution pair, for the
//! Fourier model `y = S(k ⊛ x + b)`.
//!
//! With `M = m1 m2`, `N = n1 n2` the model reads `ŷ = (N/M) D(k̂ ⊙ x̂) + N b e₀`,
//! so `(M/N) Dᵀ(ŷ ⊘ D(x̂))` recovers `k̂` on the retained band plus the constant
//! `M b / x̂₀₀` at DC. Back in the pixel domain the kernel sits in the top-left
//! window and everything outside is the flat offset `b / x̂₀₀`.

use rustfft::num_complex::Complex;

use super::fourier::{embed, fft2, ifft2_real, select};
use crate::error::{Result, WppError};
use crate::image::Image;

/// Added to `|D(x̂)|` (phase kept) before dividing.
const QUOTIENT_FLOOR: f64 = 1e-5;

/// Estimates a `kernel_size x kernel_size` kernel and scalar bias such that
/// `y_ref ≈ S(k ⊛ x_ref + b)`.
pub fn estimate_operator(x_ref: &Image, y_ref: &Image, kernel_size: usize) -> Result<(Image, f64)> {
    let m = x_ref.dims();
    let n = y_ref.dims();
    if n.0 > m.0 || n.1 > m.1 {
        return Err(WppError::dim(format!(
            "low-resolution image {n:?} larger than high-resolution {m:?}"
        )));
    }
    if kernel_size == 0 || kernel_size > m.0 || kernel_size > m.1 {
        return Err(WppError::dim(format!(
            "kernel size {kernel_size} does not fit {m:?}"
        )));
    }
    if kernel_size == m.0 && kernel_size == m.1 {
        return Err(WppError::dim("no pixels outside the kernel window to estimate the bias"));
    }
    let xh = fft2(x_ref);
    let dc = xh[0];
    if dc.norm() <= f64::EPSILON * x_ref.len() as f64 {
        return Err(WppError::Estimation(
            "high-resolution image has zero mean (DC coefficient vanishes)".into(),
        ));
    }
    let yh = fft2(y_ref);
    let dx = select(&xh, m, n);
    let ratio = (m.0 * m.1) as f64 / (n.0 * n.1) as f64;
    let quotient: Vec<Complex<f64>> = yh
        .iter()
        .zip(&dx)
        .map(|(y, d)| {
            let r = d.norm();
            let stabilised = if r > 0.0 {
                d * ((r + QUOTIENT_FLOOR) / r)
            } else {
                Complex::new(QUOTIENT_FLOOR, 0.0)
            };
            y / stabilised * ratio
        })
        .collect();
    // the real part is the projection onto real kernels
    let (plane, _) = ifft2_real(embed(&quotient, n, m), m.0, m.1);

    let mut outside = 0.0;
    let mut count = 0usize;
    for i in 0..m.0 {
        for j in 0..m.1 {
            if i >= kernel_size || j >= kernel_size {
                outside += plane.get(i, j);
                count += 1;
            }
        }
    }
    let offset = outside / count as f64;
    let bias = offset * dc.re;
    let kernel = Image::from_fn(kernel_size, kernel_size, |i, j| plane.get(i, j) - offset);
    Ok((kernel, bias))
}
