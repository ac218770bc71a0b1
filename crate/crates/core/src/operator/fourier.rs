//! 2-D DFT helpers and the spectral-truncation downsampler.
//!
//! Conventions: the forward transform is unnormalised, the inverse carries
//! `1/(rows*cols)`. Spectra are stored row-major like images.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, WppError};
use crate::image::Image;

pub(crate) type Spectrum = Vec<Complex<f64>>;

fn fft2_in_place(data: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            column[i] = data[i * cols + j];
        }
        col_fft.process(&mut column);
        for i in 0..rows {
            data[i * cols + j] = column[i];
        }
    }
    if inverse {
        let norm = 1.0 / (rows * cols) as f64;
        data.iter_mut().for_each(|v| *v *= norm);
    }
}

pub(crate) fn fft2(img: &Image) -> Spectrum {
    let mut data: Spectrum = img.as_slice().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_in_place(&mut data, img.rows(), img.cols(), false);
    data
}

/// Inverse DFT; returns the real part and the largest imaginary magnitude.
pub(crate) fn ifft2_real(mut spec: Spectrum, rows: usize, cols: usize) -> (Image, f64) {
    fft2_in_place(&mut spec, rows, cols, true);
    let residue = spec.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    let values = spec.iter().map(|v| v.re).collect();
    (
        Image::from_vec(rows, cols, values).expect("finite spectrum"),
        residue,
    )
}

/// Source frequency index kept for target index `i`: `i` when `i <= n/2`,
/// otherwise `i + m - n`.
#[inline]
pub(crate) fn kept_index(i: usize, n: usize, m: usize) -> usize {
    if 2 * i <= n {
        i
    } else {
        i + m - n
    }
}

/// Frequency selection `D` from an `m1 x m2` to an `n1 x n2` spectrum.
pub(crate) fn select(spec: &[Complex<f64>], m: (usize, usize), n: (usize, usize)) -> Spectrum {
    let mut out = Vec::with_capacity(n.0 * n.1);
    for i in 0..n.0 {
        let si = kept_index(i, n.0, m.0);
        for j in 0..n.1 {
            out.push(spec[si * m.1 + kept_index(j, n.1, m.1)]);
        }
    }
    out
}

/// `Dᵀ`: zero-filled embedding of an `n1 x n2` spectrum into `m1 x m2`.
pub(crate) fn embed(spec: &[Complex<f64>], n: (usize, usize), m: (usize, usize)) -> Spectrum {
    let mut out = vec![Complex::new(0.0, 0.0); m.0 * m.1];
    for i in 0..n.0 {
        let si = kept_index(i, n.0, m.0);
        for j in 0..n.1 {
            out[si * m.1 + kept_index(j, n.1, m.1)] = spec[i * n.1 + j];
        }
    }
    out
}

/// Averages every bin with the conjugate of its point reflection.
///
/// A no-op on the selected spectrum of a real image except at the Nyquist
/// bins of even target sizes, whose conjugate partner is dropped by `D`.
pub(crate) fn hermitian_part(spec: &mut [Complex<f64>], n: (usize, usize)) {
    let orig = spec.to_vec();
    for i in 0..n.0 {
        let ri = (n.0 - i) % n.0;
        for j in 0..n.1 {
            let rj = (n.1 - j) % n.1;
            spec[i * n.1 + j] = (orig[i * n.1 + j] + orig[ri * n.1 + rj].conj()) * 0.5;
        }
    }
}

pub(crate) fn check_target(m: (usize, usize), n: (usize, usize)) -> Result<()> {
    if n.0 == 0 || n.1 == 0 || n.0 > m.0 || n.1 > m.1 {
        return Err(WppError::dim(format!(
            "Fourier target {n:?} must be non-empty and no larger than {m:?}"
        )));
    }
    Ok(())
}

/// `S(x) = (n1 n2 / m1 m2) F⁻¹ D F x`, together with the largest imaginary
/// magnitude of the inverse transform before it is discarded.
pub fn fourier_downsample_with_residue(x: &Image, target: (usize, usize)) -> Result<(Image, f64)> {
    let m = x.dims();
    check_target(m, target)?;
    let scale = (target.0 * target.1) as f64 / (m.0 * m.1) as f64;
    let mut sel = select(&fft2(x), m, target);
    hermitian_part(&mut sel, target);
    sel.iter_mut().for_each(|v| *v *= scale);
    Ok(ifft2_real(sel, target.0, target.1))
}

/// Spectral-truncation downsampling to `target` dims.
pub fn fourier_downsample(x: &Image, target: (usize, usize)) -> Result<Image> {
    fourier_downsample_with_residue(x, target).map(|(img, _)| img)
}
