//! Exact c-transform argmins for many source patches at once.
//!
//! Scores `‖q_k‖² - 2⟨p, q_k⟩ - ψ_k` are computed blockwise with a matrix
//! product. Because the expansion loses a few ulps, every reference whose
//! score lies within a rounding bound of the block minimum is re-evaluated
//! with the direct formula `‖p - q_k‖² - ψ_k`, and the lowest index among the
//! exact minimisers wins. The result is identical to the brute-force scan.

use crate::image::PatchDistribution;

const BLOCK: usize = 128;
/// Below this many multiply-adds per source, the direct scan is used.
const DIRECT_LIMIT: usize = 2048;

#[inline]
pub(crate) fn sq_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Direct scan: `(min_k ‖p - q_k‖² - ψ_k, lowest argmin)`.
pub(crate) fn c_transform_direct(p: &[f64], reference: &PatchDistribution, psi: &[f64]) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (k, q) in reference.iter().enumerate() {
        let v = sq_dist(p, q) - psi[k];
        if v < best {
            best = v;
            arg = k;
        }
    }
    (best, arg)
}

/// Reference patches with cached squared norms.
pub(crate) struct RefIndex<'a> {
    reference: &'a PatchDistribution,
    norms: Vec<f64>,
    max_norm: f64,
}

impl<'a> RefIndex<'a> {
    pub(crate) fn new(reference: &'a PatchDistribution) -> Self {
        let norms: Vec<f64> = reference.iter().map(|q| q.iter().map(|v| v * v).sum()).collect();
        let max_norm = norms.iter().fold(0.0f64, |m, &v| m.max(v));
        RefIndex {
            reference,
            norms,
            max_norm,
        }
    }

    /// Argmin and c-transform value for each of the contiguous patches in
    /// `src` (flattened, `s` values each).
    pub(crate) fn assign(&self, src: &[f64], psi: &[f64], kappa: &mut [usize], values: &mut [f64]) {
        let s = self.reference.patch_len();
        let m = self.reference.count();
        let n = src.len() / s;
        debug_assert_eq!(kappa.len(), n);
        debug_assert_eq!(values.len(), n);
        debug_assert_eq!(psi.len(), m);
        if m * s <= DIRECT_LIMIT || m < 8 {
            for (j, p) in src.chunks_exact(s).enumerate() {
                let (v, k) = c_transform_direct(p, self.reference, psi);
                kappa[j] = k;
                values[j] = v;
            }
            return;
        }

        let psi_max = psi.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let refs = self.reference.as_flat();
        let mut scores = vec![0.0; BLOCK * m];
        let mut start = 0;
        while start < n {
            let rows = BLOCK.min(n - start);
            let block = &src[start * s..(start + rows) * s];
            // scores = -2 * block * refs^T
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    s,
                    m,
                    -2.0,
                    block.as_ptr(),
                    s as isize,
                    1,
                    refs.as_ptr(),
                    1,
                    s as isize,
                    0.0,
                    scores.as_mut_ptr(),
                    m as isize,
                    1,
                );
            }
            for r in 0..rows {
                let p = &block[r * s..(r + 1) * s];
                let row = &mut scores[r * m..(r + 1) * m];
                let mut min = f64::INFINITY;
                for k in 0..m {
                    let v = row[k] + self.norms[k] - psi[k];
                    row[k] = v;
                    if v < min {
                        min = v;
                    }
                }
                let p_norm: f64 = p.iter().map(|v| v * v).sum();
                let slack = 1e-11 * (1.0 + p_norm + self.max_norm + psi_max);
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for k in 0..m {
                    if row[k] <= min + slack {
                        let v = sq_dist(p, self.reference.patch(k)) - psi[k];
                        if v < best {
                            best = v;
                            arg = k;
                        }
                    }
                }
                kappa[start + r] = arg;
                values[start + r] = best;
            }
            start += rows;
        }
    }
}
