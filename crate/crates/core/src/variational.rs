//! Variational reconstruction with the Wasserstein patch prior:
//! minimise `J(x) = ½‖f(x) - y‖² + λ W2²(μ_x, μ_ref)` over the pixels of `x`.

use crate::error::{Result, WppError};
use crate::image::{bicubic_upsample, extract_patches, Image, PatchDistribution};
use crate::operator::ForwardOperator;
use crate::optim::{Adam, AdamConfig};
use crate::transport::{
    assign_all, w2_gradient_image, w2_semidual, Assignment, DualAscentConfig, DualPotential,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionConfig {
    pub lambda: f64,
    /// Noise level of the observation; only used to report `ρ = λ/σ²`.
    pub noise_sigma: f64,
    pub outer_iterations: usize,
    pub adam: AdamConfig,
    pub dual: DualAscentConfig,
    pub patch: (usize, usize),
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            lambda: 12.5,
            noise_sigma: 0.01,
            outer_iterations: 200,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            dual: DualAscentConfig::default(),
            patch: (6, 6),
        }
    }
}

impl ReconstructionConfig {
    /// Weight of the prior in the posterior `exp(-ρ W2²)` reading of `J`.
    pub fn rho(&self) -> Option<f64> {
        (self.noise_sigma > 0.0).then(|| self.lambda / (self.noise_sigma * self.noise_sigma))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(WppError::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(WppError::invalid("optimizer step must be positive"));
        }
        self.dual.validate()
    }
}

/// Value of `J` split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub fidelity: f64,
    pub wpp: f64,
}

fn check_reference(reference: &PatchDistribution, cfg: &ReconstructionConfig) -> Result<()> {
    if reference.shape() != cfg.patch {
        return Err(WppError::dim(format!(
            "reference patches {:?} vs configured {:?}",
            reference.shape(),
            cfg.patch
        )));
    }
    Ok(())
}

fn residual(x: &Image, y: &Image, op: &ForwardOperator) -> Result<Image> {
    let fx = op.apply(x)?;
    fx.sub(y)
        .map_err(|_| WppError::dim(format!("f(x) is {:?} but y is {:?}", fx.dims(), y.dims())))
}

fn ascend(
    x: &Image,
    reference: &PatchDistribution,
    cfg: &ReconstructionConfig,
    psi: Option<&DualPotential>,
    seed_offset: u64,
) -> Result<(f64, DualPotential, Assignment)> {
    if cfg.lambda == 0.0 {
        // the prior is switched off; skip the transport work entirely
        let psi = psi.cloned().unwrap_or_else(|| DualPotential::zeros(reference.count()));
        return Ok((0.0, psi, Assignment::new(Vec::new())));
    }
    let src = extract_patches(x, cfg.patch.0, cfg.patch.1)?;
    let dual = DualAscentConfig {
        seed: cfg.dual.seed.wrapping_add(seed_offset),
        ..cfg.dual
    };
    let est = w2_semidual(&src, reference, &dual, psi)?;
    Ok((est.value, est.psi, est.assign))
}

/// `J(x)` with the prior evaluated at a freshly ascended potential.
pub fn objective(
    x: &Image,
    y: &Image,
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &ReconstructionConfig,
) -> Result<ObjectiveValue> {
    check_reference(reference, cfg)?;
    let fidelity = 0.5 * residual(x, y, op)?.norm_sq();
    let (wpp, _, _) = if cfg.lambda == 0.0 {
        (0.0, DualPotential::zeros(0), Assignment::new(Vec::new()))
    } else {
        ascend(x, reference, cfg, None, 0)?
    };
    Ok(ObjectiveValue {
        total: fidelity + cfg.lambda * wpp,
        fidelity,
        wpp,
    })
}

/// `J` with the potential and assignment held fixed: the prior term becomes
/// `(1/N) Σ_j (‖P_j(x) - q_{κ(j)}‖² - ψ_{κ(j)}) + mean(ψ)`, a smooth function of `x`.
pub fn frozen_objective(
    x: &Image,
    y: &Image,
    op: &ForwardOperator,
    reference: &PatchDistribution,
    psi: &DualPotential,
    assign: &Assignment,
    lambda: f64,
) -> Result<f64> {
    let fidelity = 0.5 * residual(x, y, op)?.norm_sq();
    let (s1, s2) = reference.shape();
    let src = extract_patches(x, s1, s2)?;
    if assign.len() != src.count() {
        return Err(WppError::dim("assignment does not match the patches of x"));
    }
    let mut acc = 0.0;
    for (p, &k) in src.iter().zip(assign.indices()) {
        let q = reference.patch(k);
        let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += d - psi.values()[k];
    }
    let mean_psi = psi.values().iter().sum::<f64>() / psi.len() as f64;
    Ok(fidelity + lambda * (acc / src.count() as f64 + mean_psi))
}

/// `fᵀ(f(x) - y) + λ ∇_x W2²` for a fixed assignment.
pub fn gradient_at(
    x: &Image,
    y: &Image,
    op: &ForwardOperator,
    reference: &PatchDistribution,
    assign: &Assignment,
    lambda: f64,
) -> Result<Image> {
    let r = residual(x, y, op)?;
    let mut g = op.adjoint(&r, x.dims())?;
    if lambda != 0.0 {
        let (s1, s2) = reference.shape();
        let w = w2_gradient_image(x, reference, assign, s1, s2)?;
        g.axpy(lambda, &w)?;
    }
    Ok(g)
}

/// Gradient of `J` at the assignment induced by the ascended potential;
/// returns that potential for warm starting.
pub fn gradient(
    x: &Image,
    y: &Image,
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &ReconstructionConfig,
    psi_warm: Option<&DualPotential>,
) -> Result<(Image, DualPotential)> {
    check_reference(reference, cfg)?;
    let (_, psi, assign) = ascend(x, reference, cfg, psi_warm, 0)?;
    let g = gradient_at(x, y, op, reference, &assign, cfg.lambda)?;
    Ok((g, psi))
}

/// One row of the optimisation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub value: ObjectiveValue,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub x: Image,
    /// `J` at every iterate `x_0 ..= x_T`.
    pub trace: Vec<TraceRow>,
    pub psi: DualPotential,
}

/// Adam on `J` from the bicubic upsampling of `y`, with `ψ` warm-started
/// across iterations. The result is clamped to `[0, 1]`.
pub fn reconstruct(
    y: &Image,
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    check_reference(reference, cfg)?;
    let mut x = bicubic_upsample(y, op.stride())?;
    let out = op.output_dims(x.dims())?;
    if out != y.dims() {
        return Err(WppError::dim(format!(
            "operator maps the {:?} initialiser to {out:?}, observation is {:?}",
            x.dims(),
            y.dims()
        )));
    }
    let mut adam = Adam::new(x.len(), cfg.adam);
    let mut psi: Option<DualPotential> = None;
    let mut trace = Vec::with_capacity(cfg.outer_iterations + 1);
    for t in 0..=cfg.outer_iterations {
        let (wpp, new_psi, assign) = ascend(&x, reference, cfg, psi.as_ref(), t as u64)?;
        let r = residual(&x, y, op)?;
        let fidelity = 0.5 * r.norm_sq();
        trace.push(TraceRow {
            iteration: t,
            value: ObjectiveValue {
                total: fidelity + cfg.lambda * wpp,
                fidelity,
                wpp,
            },
        });
        psi = Some(new_psi);
        if t == cfg.outer_iterations {
            break;
        }
        let mut g = op.adjoint(&r, x.dims())?;
        if cfg.lambda != 0.0 {
            let w = w2_gradient_image(&x, reference, &assign, cfg.patch.0, cfg.patch.1)?;
            g.axpy(cfg.lambda, &w)?;
        }
        adam.step(x.as_mut_slice(), g.as_slice());
    }
    Ok(Reconstruction {
        x: x.clamp01(),
        trace,
        psi: psi.unwrap_or_else(|| DualPotential::zeros(reference.count())),
    })
}

/// Assignment of the patches of `x` at a given potential.
pub fn assignment_for(x: &Image, reference: &PatchDistribution, psi: &DualPotential) -> Result<Assignment> {
    let (s1, s2) = reference.shape();
    let src = extract_patches(x, s1, s2)?;
    Ok(assign_all(&src, reference, psi)?.0)
}
