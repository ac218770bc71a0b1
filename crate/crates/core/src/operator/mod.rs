//! The superresolution forward model `f(x) = S(k * x + b)`, its adjoint,
//! noise injection and operator estimation.

mod estimate;
mod fourier;

pub use estimate::estimate_operator;
pub use fourier::{fourier_downsample, fourier_downsample_with_residue};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, WppError};
use crate::image::Image;
use fourier::{embed, fft2, hermitian_part, ifft2_real, select};

/// How the blurred image is brought to the low-resolution grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleMode {
    /// Zero-padded correlation evaluated every `stride` pixels.
    StridedConv,
    /// Circular convolution followed by spectral truncation to `target`.
    FourierDownsample { target: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    kernel: Image,
    bias: f64,
    stride: usize,
    mode: DownsampleMode,
}

impl ForwardOperator {
    /// Strided correlation operator. Output pixel `(i, j)` reads the input
    /// window whose top-left corner is `(i*stride - c1, j*stride - c2)` with
    /// `c = floor((kernel_size - stride) / 2)`, which centres the kernel over
    /// the `stride x stride` block of the output pixel. Outside pixels are 0.
    pub fn strided(kernel: Image, bias: f64, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(WppError::invalid("stride must be at least 1"));
        }
        Self::check_parts(&kernel, bias)?;
        Ok(ForwardOperator {
            kernel,
            bias,
            stride,
            mode: DownsampleMode::StridedConv,
        })
    }

    /// Fourier operator `S(k ⊛ x + b)` onto a `target` grid. The kernel is
    /// zero-padded at the top-left of the input plane. `factor` is the
    /// magnification used for bicubic initialisation.
    pub fn fourier(kernel: Image, bias: f64, target: (usize, usize), factor: usize) -> Result<Self> {
        if factor == 0 || target.0 == 0 || target.1 == 0 {
            return Err(WppError::invalid("Fourier target and factor must be positive"));
        }
        Self::check_parts(&kernel, bias)?;
        Ok(ForwardOperator {
            kernel,
            bias,
            stride: factor,
            mode: DownsampleMode::FourierDownsample { target },
        })
    }

    /// Pure subsampling by `stride` without blur.
    pub fn identity(stride: usize) -> Result<Self> {
        Self::strided(Image::filled(1, 1, 1.0), 0.0, stride)
    }

    fn check_parts(kernel: &Image, bias: f64) -> Result<()> {
        if !kernel.is_finite() || !bias.is_finite() {
            return Err(WppError::invalid("kernel and bias must be finite"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> &Image {
        &self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn mode(&self) -> DownsampleMode {
        self.mode
    }

    pub fn with_bias(&self, bias: f64) -> Self {
        ForwardOperator { bias, ..self.clone() }
    }

    /// Low-resolution dims for a high-resolution input of `dims`.
    pub fn output_dims(&self, dims: (usize, usize)) -> Result<(usize, usize)> {
        match self.mode {
            DownsampleMode::StridedConv => Ok((dims.0.div_ceil(self.stride), dims.1.div_ceil(self.stride))),
            DownsampleMode::FourierDownsample { target } => {
                fourier::check_target(dims, target)?;
                let k = self.kernel.dims();
                if k.0 > dims.0 || k.1 > dims.1 {
                    return Err(WppError::dim(format!("kernel {k:?} larger than image {dims:?}")));
                }
                Ok(target)
            }
        }
    }

    fn offsets(&self) -> (isize, isize) {
        let s = self.stride as isize;
        let (k1, k2) = self.kernel.dims();
        ((k1 as isize - s).div_euclid(2), (k2 as isize - s).div_euclid(2))
    }

    /// Linear part `x ↦ S(k * x)`.
    pub fn apply_linear(&self, x: &Image) -> Result<Image> {
        let out = self.output_dims(x.dims())?;
        match self.mode {
            DownsampleMode::StridedConv => Ok(self.strided_forward(x, out)),
            DownsampleMode::FourierDownsample { target } => {
                let m = x.dims();
                let kh = fft2(&self.padded_kernel(m));
                let xh = fft2(x);
                let prod: Vec<_> = kh.iter().zip(&xh).map(|(a, b)| a * b).collect();
                let mut sel = select(&prod, m, target);
                hermitian_part(&mut sel, target);
                let scale = (target.0 * target.1) as f64 / (m.0 * m.1) as f64;
                sel.iter_mut().for_each(|v| *v *= scale);
                Ok(ifft2_real(sel, target.0, target.1).0)
            }
        }
    }

    /// `f(x) = S(k * x) + b`.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        let b = self.bias;
        Ok(self.apply_linear(x)?.map(|v| v + b))
    }

    /// Adjoint of [`apply_linear`](Self::apply_linear) for inputs of `input_dims`.
    pub fn adjoint(&self, g: &Image, input_dims: (usize, usize)) -> Result<Image> {
        let out = self.output_dims(input_dims)?;
        if g.dims() != out {
            return Err(WppError::dim(format!(
                "adjoint input {:?}, expected {out:?} for inputs {input_dims:?}",
                g.dims()
            )));
        }
        match self.mode {
            DownsampleMode::StridedConv => Ok(self.strided_adjoint(g, input_dims)),
            DownsampleMode::FourierDownsample { target } => {
                let m = input_dims;
                let emb = embed(&fft2(g), target, m);
                let kh = fft2(&self.padded_kernel(m));
                let prod: Vec<_> = kh.iter().zip(&emb).map(|(a, b)| a.conj() * b).collect();
                Ok(ifft2_real(prod, m.0, m.1).0)
            }
        }
    }

    fn padded_kernel(&self, dims: (usize, usize)) -> Image {
        let k = &self.kernel;
        Image::from_fn(dims.0, dims.1, |i, j| {
            if i < k.rows() && j < k.cols() {
                k.get(i, j)
            } else {
                0.0
            }
        })
    }

    fn strided_forward(&self, x: &Image, out: (usize, usize)) -> Image {
        let (c1, c2) = self.offsets();
        let s = self.stride as isize;
        let (d1, d2) = (x.rows() as isize, x.cols() as isize);
        let k = &self.kernel;
        Image::from_fn(out.0, out.1, |i, j| {
            let r0 = i as isize * s - c1;
            let q0 = j as isize * s - c2;
            let mut acc = 0.0;
            for u in 0..k.rows() {
                let r = r0 + u as isize;
                if r < 0 || r >= d1 {
                    continue;
                }
                for v in 0..k.cols() {
                    let q = q0 + v as isize;
                    if q >= 0 && q < d2 {
                        acc += k.get(u, v) * x.get(r as usize, q as usize);
                    }
                }
            }
            acc
        })
    }

    fn strided_adjoint(&self, g: &Image, dims: (usize, usize)) -> Image {
        let (c1, c2) = self.offsets();
        let s = self.stride as isize;
        let (d1, d2) = (dims.0 as isize, dims.1 as isize);
        let k = &self.kernel;
        let mut x = Image::zeros(dims.0, dims.1);
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let gv = g.get(i, j);
                if gv == 0.0 {
                    continue;
                }
                let r0 = i as isize * s - c1;
                let q0 = j as isize * s - c2;
                for u in 0..k.rows() {
                    let r = r0 + u as isize;
                    if r < 0 || r >= d1 {
                        continue;
                    }
                    for v in 0..k.cols() {
                        let q = q0 + v as isize;
                        if q >= 0 && q < d2 {
                            x.add_at(r as usize, q as usize, k.get(u, v) * gv);
                        }
                    }
                }
            }
        }
        x
    }
}

pub fn apply_forward(x: &Image, op: &ForwardOperator) -> Result<Image> {
    op.apply(x)
}

pub fn apply_adjoint(g: &Image, op: &ForwardOperator, input_dims: (usize, usize)) -> Result<Image> {
    op.adjoint(g, input_dims)
}

/// `size x size` Gaussian sampled at pixel centres around `(size-1)/2`,
/// normalised to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Image> {
    if size == 0 || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(WppError::invalid(format!(
            "gaussian kernel needs size >= 1 and sigma > 0, got {size}, {sigma}"
        )));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let raw = Image::from_fn(size, size, |i, j| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let total = raw.sum();
    Ok(raw.scale(1.0 / total))
}

/// Additive white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

/// `y + σ ξ` with a seeded standard normal field `ξ`.
pub fn add_noise(y: &Image, nm: &NoiseModel) -> Result<Image> {
    if !(nm.sigma >= 0.0 && nm.sigma.is_finite()) {
        return Err(WppError::invalid(format!("noise sigma {} is invalid", nm.sigma)));
    }
    if nm.sigma == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
    Ok(y.map(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + nm.sigma * z
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn gaussian_kernel_properties() {
        assert_eq!(gaussian_kernel(1, 2.0).unwrap().as_slice(), &[1.0]);
        for (size, sigma) in [(16, 2.0), (15, 3.0), (4, 0.7)] {
            let k = gaussian_kernel(size, sigma).unwrap();
            assert!((k.sum() - 1.0).abs() < 1e-12);
            for i in 0..size {
                for j in 0..size {
                    assert_eq!(k.get(i, j), k.get(size - 1 - i, size - 1 - j));
                }
            }
        }
        let k = gaussian_kernel(16, 2.0).unwrap();
        let max = k.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        for i in 0..16 {
            for j in 0..16 {
                let central = (7..=8).contains(&i) && (7..=8).contains(&j);
                assert_eq!(k.get(i, j) == max, central, "({i},{j})");
            }
        }
        assert!(gaussian_kernel(0, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
    }

    #[test]
    fn strided_output_dims() {
        let op = ForwardOperator::strided(gaussian_kernel(16, 2.0).unwrap(), 0.0, 4).unwrap();
        assert_eq!(op.apply(&Image::zeros(100, 100)).unwrap().dims(), (25, 25));
        assert_eq!(op.apply(&Image::zeros(101, 98)).unwrap().dims(), (26, 25));
    }

    #[test]
    fn impulse_response_is_flipped_kernel_around_the_impulse() {
        let k = Image::from_fn(3, 3, |i, j| (3 * i + j + 1) as f64);
        let op = ForwardOperator::strided(k.clone(), 0.0, 1).unwrap();
        let mut x = Image::zeros(9, 9);
        x.set(4, 4, 1.0);
        let y = op.apply(&x).unwrap();
        for du in -1isize..=1 {
            for dv in -1isize..=1 {
                let v = y.get((4 + du) as usize, (4 + dv) as usize);
                assert_eq!(v, k.get((1 - du) as usize, (1 - dv) as usize));
            }
        }
        assert_eq!(y.sum(), k.sum());
    }

    #[test]
    fn identity_stride_one_is_identity_with_identity_adjoint() {
        let op = ForwardOperator::identity(1).unwrap();
        let x = random_image(6, 7, 1);
        assert_eq!(op.apply(&x).unwrap(), x);
        assert_eq!(op.adjoint(&x, (6, 7)).unwrap(), x);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let op = ForwardOperator::strided(gaussian_kernel(5, 1.0).unwrap(), 0.3, 3).unwrap();
        let z = op.adjoint(&Image::zeros(4, 4), (12, 11)).unwrap();
        assert_eq!(z.dims(), (12, 11));
        assert_eq!(z.max_abs(), 0.0);
        assert!(op.adjoint(&Image::zeros(5, 4), (12, 11)).is_err());
    }

    #[test]
    fn dot_test_both_modes() {
        let mut seed = 10;
        for stride in [4usize, 6] {
            for dims in [(24usize, 24usize), (37, 29)] {
                let ops = [
                    ForwardOperator::strided(gaussian_kernel(16, 2.0).unwrap(), 0.1, stride).unwrap(),
                    ForwardOperator::fourier(
                        gaussian_kernel(7, 1.5).unwrap(),
                        0.1,
                        (dims.0 / stride, dims.1 / stride),
                        stride,
                    )
                    .unwrap(),
                ];
                for op in ops {
                    seed += 1;
                    let x = random_image(dims.0, dims.1, seed);
                    let out = op.output_dims(dims).unwrap();
                    let g = random_image(out.0, out.1, seed + 100);
                    let lhs = op.apply_linear(&x).unwrap().dot(&g).unwrap();
                    let rhs = x.dot(&op.adjoint(&g, dims).unwrap()).unwrap();
                    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
                }
            }
        }
    }

    #[test]
    fn fourier_mode_preserves_constants() {
        let op = ForwardOperator::fourier(gaussian_kernel(9, 2.0).unwrap(), 0.0, (10, 10), 4).unwrap();
        let y = op.apply(&Image::filled(40, 40, 0.6)).unwrap();
        assert!(y.as_slice().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn noise_cases() {
        let y = random_image(10, 10, 3);
        assert_eq!(add_noise(&y, &NoiseModel { sigma: 0.0, seed: 1 }).unwrap(), y);
        let nm = NoiseModel { sigma: 0.01, seed: 7 };
        assert_eq!(add_noise(&y, &nm).unwrap(), add_noise(&y, &nm).unwrap());
        let z = add_noise(&Image::zeros(100, 100), &nm).unwrap();
        let mean = z.mean();
        let sd = (z.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64).sqrt();
        assert!((0.008..=0.012).contains(&sd), "{sd}");
    }
}
