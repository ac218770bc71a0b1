//! Grayscale images, dense patch extraction and empirical patch distributions.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WppError};

/// A `rows x cols` grid of real intensities stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "image dimensions must be positive");
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds an image from row-major values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(WppError::dim(format!("empty image {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(WppError::dim(format!(
                "{} values for a {rows}x{cols} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(WppError::invalid(format!("non-finite pixel value {v}")));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(WppError::dim("ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Image { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_dims(other)?;
        Ok(Image {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Image) -> Result<()> {
        self.check_same_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-image with top-left corner `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Image> {
        if rows == 0 || cols == 0 || r0 + rows > self.rows || c0 + cols > self.cols {
            return Err(WppError::dim(format!(
                "crop {rows}x{cols} at ({r0},{c0}) outside {}x{} image",
                self.rows, self.cols
            )));
        }
        Ok(Image::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j)))
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(WppError::dim(format!(
                "image dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// A single `s1 x s2` patch flattened column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    s1: usize,
    s2: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn new(s1: usize, s2: usize, values: Vec<f64>) -> Result<Self> {
        if s1 == 0 || s2 == 0 || values.len() != s1 * s2 {
            return Err(WppError::dim(format!(
                "{} values for a {s1}x{s2} patch",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WppError::invalid("non-finite patch value"));
        }
        Ok(Patch { s1, s2, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.s1, self.s2)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Uniform empirical measure over equally shaped patches.
///
/// Patches are stored contiguously, one flattened patch after the other.
/// Repeated patches stay distinct atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDistribution {
    s1: usize,
    s2: usize,
    data: Vec<f64>,
}

impl PatchDistribution {
    /// Builds a distribution from contiguous flattened patches.
    pub fn from_flat(s1: usize, s2: usize, data: Vec<f64>) -> Result<Self> {
        let s = s1 * s2;
        if s == 0 || data.is_empty() || !data.len().is_multiple_of(s) {
            return Err(WppError::dim(format!(
                "{} values do not form {s1}x{s2} patches",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WppError::invalid("non-finite patch value"));
        }
        Ok(PatchDistribution { s1, s2, data })
    }

    pub fn from_patches(patches: &[Patch]) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| WppError::invalid("empty patch list"))?;
        let (s1, s2) = first.shape();
        let mut data = Vec::with_capacity(patches.len() * s1 * s2);
        for p in patches {
            if p.shape() != (s1, s2) {
                return Err(WppError::dim(format!(
                    "patch shape {:?} vs {:?}",
                    p.shape(),
                    (s1, s2)
                )));
            }
            data.extend_from_slice(&p.values);
        }
        Ok(PatchDistribution { s1, s2, data })
    }

    /// Distribution of 1x1 patches, i.e. plain scalar atoms.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, 1, values.to_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.s1, self.s2)
    }

    /// Flattened patch length `s1 * s2`.
    pub fn patch_len(&self) -> usize {
        self.s1 * self.s2
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.patch_len()
    }

    pub fn patch(&self, k: usize) -> &[f64] {
        let s = self.patch_len();
        &self.data[k * s..(k + 1) * s]
    }

    pub fn to_patch(&self, k: usize) -> Patch {
        Patch {
            s1: self.s1,
            s2: self.s2,
            values: self.patch(k).to_vec(),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.patch_len())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn check_compatible(&self, other: &PatchDistribution) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(WppError::dim(format!(
                "patch shapes {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Number of stride-1 patch positions `(d1 - s1 + 1)(d2 - s2 + 1)`.
pub fn patch_count(dims: (usize, usize), s1: usize, s2: usize) -> usize {
    (dims.0 + 1 - s1) * (dims.1 + 1 - s2)
}

/// Top-left corner of patch `j` in column-major scan order.
#[inline]
pub(crate) fn patch_origin(j: usize, rows: usize, s1: usize) -> (usize, usize) {
    let per_col = rows + 1 - s1;
    (j % per_col, j / per_col)
}

/// All overlapping `s1 x s2` patches at stride 1.
///
/// Patch positions are scanned column-major (the row offset varies fastest)
/// and every patch is flattened column-major.
pub fn extract_patches(img: &Image, s1: usize, s2: usize) -> Result<PatchDistribution> {
    let (d1, d2) = img.dims();
    if s1 == 0 || s2 == 0 || s1 > d1 || s2 > d2 {
        return Err(WppError::dim(format!(
            "patch {s1}x{s2} does not fit a {d1}x{d2} image"
        )));
    }
    let n = patch_count((d1, d2), s1, s2);
    let mut data = Vec::with_capacity(n * s1 * s2);
    for c0 in 0..=d2 - s2 {
        for r0 in 0..=d1 - s1 {
            for dc in 0..s2 {
                for dr in 0..s1 {
                    data.push(img.get(r0 + dr, c0 + dc));
                }
            }
        }
    }
    Ok(PatchDistribution { s1, s2, data })
}

/// Uniform sample without replacement of `min(count, N)` patches.
///
/// The selected patches keep their original relative order.
pub fn subsample_distribution(
    dist: &PatchDistribution,
    count: usize,
    seed: u64,
) -> Result<PatchDistribution> {
    if count == 0 {
        return Err(WppError::invalid("subsample count must be at least 1"));
    }
    let n = dist.count();
    if count >= n {
        return Ok(dist.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    let mut data = Vec::with_capacity(count * dist.patch_len());
    for k in picked {
        data.extend_from_slice(dist.patch(k));
    }
    Ok(PatchDistribution {
        s1: dist.s1,
        s2: dist.s2,
        data,
    })
}

/// Concatenation of distributions, i.e. the uniform mixture over all atoms.
pub fn merge_distributions(dists: &[PatchDistribution]) -> Result<PatchDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| WppError::invalid("merge of an empty list"))?;
    let total = dists.iter().map(|d| d.data.len()).sum();
    let mut data = Vec::with_capacity(total);
    for d in dists {
        first.check_compatible(d)?;
        data.extend_from_slice(&d.data);
    }
    Ok(PatchDistribution {
        s1: first.s1,
        s2: first.s2,
        data,
    })
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: four source taps (edge replicated) and their weights.
fn cubic_taps(n_in: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    let last = n_in as isize - 1;
    (0..n_in * factor)
        .map(|o| {
            // pixel-centre alignment
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for t in 0..4 {
                let k = base as isize - 1 + t as isize;
                idx[t] = k.clamp(0, last) as usize;
                w[t] = keys_weight(frac - (t as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic upsampling by an integer factor.
pub fn bicubic_upsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(WppError::invalid("upsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (r, c) = img.dims();
    let row_taps = cubic_taps(r, factor);
    let col_taps = cubic_taps(c, factor);
    // columns first
    let wide = Image::from_fn(r, c * factor, |i, j| {
        let (idx, w) = &col_taps[j];
        (0..4).map(|t| w[t] * img.get(i, idx[t])).sum()
    });
    Ok(Image::from_fn(r * factor, c * factor, |i, j| {
        let (idx, w) = &row_taps[i];
        (0..4).map(|t| w[t] * wide.get(idx[t], j)).sum()
    }))
}
