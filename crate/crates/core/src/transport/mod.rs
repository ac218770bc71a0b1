//! Semi-discrete squared Wasserstein-2 distance between patch distributions.
//!
//! For a source measure `μ = (1/N) Σ_j δ_{p_j}` and a reference
//! `ν = (1/Ñ) Σ_k δ_{q_k}` the dual objective is
//!
//! ```text
//! F(ψ) = (1/N) Σ_j ψ^c(p_j) + (1/Ñ) Σ_k ψ_k,    ψ^c(p) = min_k ‖p - q_k‖² - ψ_k
//! ```
//!
//! and `W2²(μ, ν) = max_ψ F(ψ)`. `F` is concave with supergradient
//! `∂F/∂ψ_k = 1/Ñ - #{j : κ_ψ(j) = k} / N`, which [`ascend_dual`] follows.
//! At the ascended potential the gradient of `W2²` with respect to the source
//! patches is `(2/N) (p_j - q_{κ(j)})`, scattered back onto pixels by
//! [`w2_gradient_image`].

mod exact;
mod nearest;

pub use exact::{cost_matrix, hungarian, transport_simplex, w2_exact_lp, TransportPlan, MAX_EXACT_CELLS};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WppError};
use crate::image::{extract_patches, patch_origin, Image, Patch, PatchDistribution};
use nearest::{c_transform_direct, RefIndex};

/// Kantorovich potential on the reference patches.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential(Vec<f64>);

impl DualPotential {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WppError::invalid("non-finite dual potential"));
        }
        Ok(DualPotential(values))
    }

    pub fn zeros(len: usize) -> Self {
        DualPotential(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `ψ + c·1`
    pub fn shifted(&self, c: f64) -> Self {
        DualPotential(self.0.iter().map(|v| v + c).collect())
    }

    fn check_against(&self, reference: &PatchDistribution) -> Result<()> {
        if self.0.len() != reference.count() {
            return Err(WppError::dim(format!(
                "potential of length {} for {} reference patches",
                self.0.len(),
                reference.count()
            )));
        }
        Ok(())
    }
}

/// Per source patch, the index of the reference patch attaining the c-transform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn new(kappa: Vec<usize>) -> Self {
        Assignment(kappa)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Settings of the (stochastic) supergradient ascent on `ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualAscentConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Source patches drawn per step; 0 means all of them.
    pub minibatch: usize,
    pub seed: u64,
    pub decay: StepDecay,
}

/// Step size schedule of the dual ascent, restarted on every call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecay {
    /// `η_t = η`
    Constant,
    /// `η_t = η / t`
    InverseTime,
}

impl StepDecay {
    fn factor(self, t: usize) -> f64 {
        match self {
            StepDecay::Constant => 1.0,
            StepDecay::InverseTime => 1.0 / t as f64,
        }
    }
}

impl std::str::FromStr for StepDecay {
    type Err = WppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(StepDecay::Constant),
            "inverse_time" => Ok(StepDecay::InverseTime),
            other => Err(WppError::invalid(format!(
                "step decay must be constant or inverse_time, got '{other}'"
            ))),
        }
    }
}

impl Default for DualAscentConfig {
    fn default() -> Self {
        DualAscentConfig {
            steps: 20,
            step_size: 1.0,
            minibatch: 10_000,
            seed: 0,
            decay: StepDecay::InverseTime,
        }
    }
}

impl DualAscentConfig {
    pub fn full_batch(steps: usize, step_size: f64) -> Self {
        DualAscentConfig {
            steps,
            step_size,
            minibatch: 0,
            seed: 0,
            decay: StepDecay::InverseTime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(WppError::invalid(format!(
                "dual step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// `min_k ‖p - q_k‖² - ψ_k` and the lowest minimising index.
pub fn c_transform(psi: &DualPotential, p: &Patch, reference: &PatchDistribution) -> Result<(f64, usize)> {
    psi.check_against(reference)?;
    if p.shape() != reference.shape() {
        return Err(WppError::dim(format!(
            "patch shape {:?} vs reference {:?}",
            p.shape(),
            reference.shape()
        )));
    }
    Ok(c_transform_direct(p.values(), reference, psi.values()))
}

/// c-transform values and argmins for every source patch.
pub fn assign_all(
    src: &PatchDistribution,
    reference: &PatchDistribution,
    psi: &DualPotential,
) -> Result<(Assignment, Vec<f64>)> {
    src.check_compatible(reference)?;
    psi.check_against(reference)?;
    let n = src.count();
    let mut kappa = vec![0; n];
    let mut values = vec![0.0; n];
    RefIndex::new(reference).assign(src.as_flat(), psi.values(), &mut kappa, &mut values);
    Ok((Assignment(kappa), values))
}

fn objective_from_values(values: &[f64], psi: &DualPotential) -> f64 {
    let a: f64 = values.iter().sum::<f64>() / values.len() as f64;
    let b: f64 = psi.values().iter().sum::<f64>() / psi.len() as f64;
    a + b
}

/// `F(ψ) = (1/N) Σ_j ψ^c(p_j) + (1/Ñ) Σ_k ψ_k`.
pub fn dual_objective(psi: &DualPotential, src: &PatchDistribution, reference: &PatchDistribution) -> Result<f64> {
    let (_, values) = assign_all(src, reference, psi)?;
    Ok(objective_from_values(&values, psi))
}

/// Runs `cfg.steps` supergradient steps from `psi0` with step `step_size * decay(t)`, `t = 1..=steps`.
pub fn ascend_dual(
    src: &PatchDistribution,
    reference: &PatchDistribution,
    psi0: &DualPotential,
    cfg: &DualAscentConfig,
) -> Result<DualPotential> {
    ascend_dual_observed(src, reference, psi0, cfg, |_, _| {})
}

/// [`ascend_dual`] calling `observer(t, ψ_t)` for every raw iterate,
/// `t = 0..=steps`.
pub fn ascend_dual_observed(
    src: &PatchDistribution,
    reference: &PatchDistribution,
    psi0: &DualPotential,
    cfg: &DualAscentConfig,
    mut observer: impl FnMut(usize, &DualPotential),
) -> Result<DualPotential> {
    cfg.validate()?;
    src.check_compatible(reference)?;
    psi0.check_against(reference)?;
    let n = src.count();
    let m = reference.count();
    let s = src.patch_len();
    let batch = if cfg.minibatch == 0 || cfg.minibatch >= n {
        n
    } else {
        cfg.minibatch
    };
    let index = RefIndex::new(reference);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut psi = psi0.clone();
    let mut kappa = vec![0usize; batch];
    let mut values = vec![0.0; batch];
    let mut gathered = Vec::new();
    let mut counts = vec![0usize; m];
    observer(0, &psi);
    for t in 1..=cfg.steps {
        let patches: &[f64] = if batch == n {
            src.as_flat()
        } else {
            gathered.clear();
            for j in index::sample(&mut rng, n, batch) {
                gathered.extend_from_slice(src.patch(j));
            }
            &gathered
        };
        debug_assert_eq!(patches.len(), batch * s);
        index.assign(patches, psi.values(), &mut kappa, &mut values);
        counts.iter_mut().for_each(|c| *c = 0);
        for &k in &kappa {
            counts[k] += 1;
        }
        let inv_m = 1.0 / m as f64;
        let inv_b = 1.0 / batch as f64;
        let eta = cfg.step_size * cfg.decay.factor(t);
        for (p, &c) in psi.0.iter_mut().zip(&counts) {
            *p += eta * (inv_m - c as f64 * inv_b);
        }
        observer(t, &psi);
    }
    Ok(psi)
}

/// Result of a semi-dual W2² evaluation.
#[derive(Debug, Clone)]
pub struct SemidualW2 {
    /// `F` at the ascended potential, a lower bound on the exact value.
    pub value: f64,
    pub psi: DualPotential,
    pub assign: Assignment,
}

/// Ascends `ψ` (zeros unless `psi0` is given) and evaluates `F` there.
pub fn w2_semidual(
    src: &PatchDistribution,
    reference: &PatchDistribution,
    cfg: &DualAscentConfig,
    psi0: Option<&DualPotential>,
) -> Result<SemidualW2> {
    let start = match psi0 {
        Some(p) => p.clone(),
        None => DualPotential::zeros(reference.count()),
    };
    let psi = ascend_dual(src, reference, &start, cfg)?;
    let (assign, values) = assign_all(src, reference, &psi)?;
    Ok(SemidualW2 {
        value: objective_from_values(&values, &psi),
        psi,
        assign,
    })
}

/// Adds `scale * (P_j(x) - q_{κ(j)})` onto the pixels of every patch `j`
/// (overlap-add, the adjoint of patch extraction).
pub(crate) fn scatter_patch_residuals(
    x: &Image,
    reference: &PatchDistribution,
    kappa: &[usize],
    scale: f64,
    out: &mut Image,
) {
    let (s1, s2) = reference.shape();
    let rows = x.rows();
    for (j, &k) in kappa.iter().enumerate() {
        let (r0, c0) = patch_origin(j, rows, s1);
        let q = reference.patch(k);
        for dc in 0..s2 {
            for dr in 0..s1 {
                let (r, c) = (r0 + dr, c0 + dc);
                out.add_at(r, c, scale * (x.get(r, c) - q[dc * s1 + dr]));
            }
        }
    }
}

/// Gradient of `W2²(μ_x, μ_ref)` with respect to the pixels of `x` for a
/// fixed assignment: `(2/N) Σ_j P_jᵀ (P_j(x) - q_{κ(j)})`.
pub fn w2_gradient_image(
    x: &Image,
    reference: &PatchDistribution,
    assign: &Assignment,
    s1: usize,
    s2: usize,
) -> Result<Image> {
    if reference.shape() != (s1, s2) {
        return Err(WppError::dim(format!(
            "reference patches {:?} vs requested {s1}x{s2}",
            reference.shape()
        )));
    }
    let (d1, d2) = x.dims();
    if s1 > d1 || s2 > d2 {
        return Err(WppError::dim("patch larger than image"));
    }
    let n = crate::image::patch_count(x.dims(), s1, s2);
    if assign.len() != n {
        return Err(WppError::dim(format!(
            "assignment of length {} for {n} patches",
            assign.len()
        )));
    }
    if assign.indices().iter().any(|&k| k >= reference.count()) {
        return Err(WppError::dim("assignment index outside the reference"));
    }
    let mut g = Image::zeros(d1, d2);
    scatter_patch_residuals(x, reference, assign.indices(), 2.0 / n as f64, &mut g);
    Ok(g)
}

/// Semi-dual W2² of the merged patch distribution of several images.
#[derive(Debug, Clone)]
pub struct BatchW2 {
    pub value: f64,
    /// Gradient of the merged W2² with respect to each image.
    pub grads: Vec<Image>,
    pub psi: DualPotential,
}

/// `W2²((1/b) Σ_i μ_{x_i}, μ_ref)` and its gradient with respect to every
/// `x_i`. With a single image this is [`w2_semidual`] plus
/// [`w2_gradient_image`].
pub fn batch_w2(
    images: &[Image],
    reference: &PatchDistribution,
    cfg: &DualAscentConfig,
    psi0: Option<&DualPotential>,
) -> Result<BatchW2> {
    if images.is_empty() {
        return Err(WppError::invalid("empty image batch"));
    }
    let (s1, s2) = reference.shape();
    let dists = images
        .iter()
        .map(|x| extract_patches(x, s1, s2))
        .collect::<Result<Vec<_>>>()?;
    let merged = crate::image::merge_distributions(&dists)?;
    let est = w2_semidual(&merged, reference, cfg, psi0)?;
    let total = merged.count();
    let scale = 2.0 / total as f64;
    let mut grads = Vec::with_capacity(images.len());
    let mut offset = 0;
    for (x, d) in images.iter().zip(&dists) {
        let mut g = Image::zeros(x.rows(), x.cols());
        let kappa = &est.assign.indices()[offset..offset + d.count()];
        scatter_patch_residuals(x, reference, kappa, scale, &mut g);
        grads.push(g);
        offset += d.count();
    }
    Ok(BatchW2 {
        value: est.value,
        grads,
        psi: est.psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn scalars(v: &[f64]) -> PatchDistribution {
        PatchDistribution::from_scalars(v).unwrap()
    }

    #[test]
    fn c_transform_single_reference() {
        let reference = PatchDistribution::from_flat(1, 2, vec![0.2, 0.7]).unwrap();
        let p = Patch::new(1, 2, vec![0.5, 0.3]).unwrap();
        let (v, k) = c_transform(&DualPotential::zeros(1), &p, &reference).unwrap();
        assert!((v - (0.09 + 0.16)).abs() < 1e-15);
        assert_eq!(k, 0);
    }

    #[test]
    fn c_transform_two_scalars() {
        let reference = scalars(&[0.0, 1.0]);
        let p = Patch::new(1, 1, vec![0.4]).unwrap();
        let (v, k) = c_transform(&DualPotential::zeros(2), &p, &reference).unwrap();
        assert!((v - 0.16).abs() < 1e-15);
        assert_eq!(k, 0);
    }

    #[test]
    fn c_transform_shift_identity_and_tie_break() {
        let reference = scalars(&[0.0, 1.0, 0.3]);
        let p = Patch::new(1, 1, vec![0.5]).unwrap();
        let psi = DualPotential::new(vec![0.1, -0.2, 0.05]).unwrap();
        let (v0, k0) = c_transform(&psi, &p, &reference).unwrap();
        let (v1, k1) = c_transform(&psi.shifted(0.75), &p, &reference).unwrap();
        assert!((v0 - 0.75 - v1).abs() < 1e-12);
        assert_eq!(k0, k1);
        // equidistant references: lowest index wins
        let tie = scalars(&[0.0, 1.0]);
        let half = Patch::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(c_transform(&DualPotential::zeros(2), &half, &tie).unwrap().1, 0);
    }

    #[test]
    fn c_transform_shape_errors() {
        let reference = scalars(&[0.0, 1.0]);
        let p = Patch::new(1, 2, vec![0.4, 0.1]).unwrap();
        assert!(c_transform(&DualPotential::zeros(2), &p, &reference).is_err());
        let q = Patch::new(1, 1, vec![0.4]).unwrap();
        assert!(c_transform(&DualPotential::zeros(3), &q, &reference).is_err());
    }

    #[test]
    fn dual_objective_at_zero_is_mean_nearest_distance() {
        let src = scalars(&[0.1, 0.9, 0.45]);
        let reference = scalars(&[0.0, 0.5, 1.0]);
        let f = dual_objective(&DualPotential::zeros(3), &src, &reference).unwrap();
        let expect = (0.01 + 0.01 + 0.0025) / 3.0;
        assert!((f - expect).abs() < 1e-15);
        assert_eq!(dual_objective(&DualPotential::zeros(3), &reference, &reference).unwrap(), 0.0);
    }

    #[test]
    fn zero_steps_and_identical_measures() {
        let d = scalars(&[0.1, 0.4, 0.8]);
        let psi0 = DualPotential::new(vec![0.3, -0.1, 0.2]).unwrap();
        let cfg = DualAscentConfig::full_batch(0, 1.0);
        assert_eq!(ascend_dual(&d, &d, &psi0, &cfg).unwrap(), psi0);

        let cfg = DualAscentConfig::full_batch(50, 1.0);
        let est = w2_semidual(&d, &d, &cfg, None).unwrap();
        assert!(est.value.abs() < 1e-9);
        assert_eq!(est.assign.indices(), &[0, 1, 2]);
        assert_eq!(est.psi, DualPotential::zeros(3));
    }

    #[test]
    fn singleton_measures_give_squared_distance() {
        let a = PatchDistribution::from_flat(2, 1, vec![0.2, 0.9]).unwrap();
        let b = PatchDistribution::from_flat(2, 1, vec![0.6, 0.1]).unwrap();
        for steps in [0, 1, 7] {
            let est = w2_semidual(&a, &b, &DualAscentConfig::full_batch(steps, 1.0), None).unwrap();
            assert!((est.value - (0.16 + 0.64)).abs() < 1e-12);
        }
    }

    #[test]
    fn stochastic_ascent_is_deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = scalars(&(0..50).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let reference = scalars(&(0..20).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let cfg = DualAscentConfig {
            steps: 30,
            step_size: 0.5,
            minibatch: 10,
            seed: 42,
            decay: StepDecay::Constant,
        };
        let z = DualPotential::zeros(20);
        let a = ascend_dual(&src, &reference, &z, &cfg).unwrap();
        let b = ascend_dual(&src, &reference, &z, &cfg).unwrap();
        assert_eq!(a, b);
        let c = ascend_dual(&src, &reference, &z, &DualAscentConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_of_single_pixel() {
        let x = Image::filled(1, 1, 0.7);
        let reference = scalars(&[0.2]);
        let g = w2_gradient_image(&x, &reference, &Assignment::new(vec![0]), 1, 1).unwrap();
        assert!((g.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_on_own_patches() {
        let x = Image::from_fn(5, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
        let reference = extract_patches(&x, 2, 3).unwrap();
        let assign = Assignment::new((0..reference.count()).collect());
        let g = w2_gradient_image(&x, &reference, &assign, 2, 3).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(w2_gradient_image(&x, &reference, &Assignment::new(vec![0; 3]), 2, 3).is_err());
    }

    #[test]
    fn batch_of_one_matches_single_image_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Image::from_fn(7, 7, |_, _| rng.random::<f64>());
        let r = Image::from_fn(6, 6, |_, _| rng.random::<f64>());
        let reference = extract_patches(&r, 2, 2).unwrap();
        let cfg = DualAscentConfig::full_batch(10, 1.0);
        let b = batch_w2(std::slice::from_ref(&x), &reference, &cfg, None).unwrap();
        let est = w2_semidual(&extract_patches(&x, 2, 2).unwrap(), &reference, &cfg, None).unwrap();
        let g = w2_gradient_image(&x, &reference, &est.assign, 2, 2).unwrap();
        assert_eq!(b.value, est.value);
        assert_eq!(b.grads[0], g);
    }
}
