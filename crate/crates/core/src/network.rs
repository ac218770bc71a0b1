//! A small residual CNN `G_θ` and its training on the batched WPP loss.
//!
//! `G_θ(y) = up(y) + R_θ(up(y))` where `up` is bicubic upsampling and `R_θ`
//! stacks 3x3 zero-padded convolutions with ReLU between them and a linear
//! last layer. Gradients are computed by hand (im2col + GEMM) and checked
//! against finite differences in the tests.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, WppError};
use crate::image::{bicubic_upsample, Image, PatchDistribution};
use crate::operator::ForwardOperator;
use crate::optim::{Adam, AdamConfig};
use crate::transport::{batch_w2, DualAscentConfig, DualPotential};

const KSIZE: usize = 3;
const TAPS: usize = KSIZE * KSIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Number of convolution layers.
    pub depth: usize,
    /// Hidden channel count.
    pub channels: usize,
    /// Upsampling factor of the bicubic skip.
    pub factor: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            depth: 8,
            channels: 32,
            factor: 4,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.channels == 0 || self.factor == 0 {
            return Err(WppError::invalid(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    /// `(in, out)` channels of layer `l`.
    fn layer_channels(&self, l: usize) -> (usize, usize) {
        let cin = if l == 0 { 1 } else { self.channels };
        let cout = if l + 1 == self.depth { 1 } else { self.channels };
        (cin, cout)
    }

    /// Offset of the weights of every layer plus the total length.
    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.depth);
        let mut total = 0;
        for l in 0..self.depth {
            offs.push(total);
            let (cin, cout) = self.layer_channels(l);
            total += cout * cin * TAPS + cout;
        }
        (offs, total)
    }

    pub fn parameter_count(&self) -> usize {
        self.offsets().1
    }
}

/// Flat parameter vector; layer `l` holds `cout x cin x 3 x 3` weights
/// followed by `cout` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (offsets, total) = arch.offsets();
        Ok(NetworkParams {
            arch,
            offsets,
            values: vec![0.0; total],
        })
    }

    /// He-scaled normal weights (std `sqrt(2 / fan_in)`), zero biases. With
    /// `zero_last` the output layer starts at zero so that `G_θ` is exactly
    /// bicubic upsampling.
    pub fn he_init(arch: Architecture, seed: u64, zero_last: bool) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..arch.depth {
            if zero_last && l + 1 == arch.depth {
                continue;
            }
            let (cin, cout) = arch.layer_channels(l);
            let normal = Normal::new(0.0, (2.0 / (cin * TAPS) as f64).sqrt()).expect("valid std");
            let off = p.offsets[l];
            for w in &mut p.values[off..off + cout * cin * TAPS] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(p)
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if values.len() != p.values.len() {
            return Err(WppError::dim(format!(
                "{} parameters for an architecture with {}",
                values.len(),
                p.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(WppError::invalid("non-finite network parameter"));
        }
        p.values = values;
        Ok(p)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (cin, cout) = self.arch.layer_channels(l);
        let off = self.offsets[l];
        let nw = cout * cin * TAPS;
        (&self.values[off..off + nw], &self.values[off + nw..off + nw + cout])
    }

    /// Plain-text dump with an architecture header.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "wppnet-params v1");
        let _ = writeln!(s, "depth {}", self.arch.depth);
        let _ = writeln!(s, "channels {}", self.arch.channels);
        let _ = writeln!(s, "factor {}", self.arch.factor);
        let _ = writeln!(s, "values {}", self.values.len());
        for v in &self.values {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| WppError::Config(format!("parameter file: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("wppnet-params v1") {
            return Err(bad("missing 'wppnet-params v1' header"));
        }
        let mut field = |name: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(line))?;
            if k != name {
                return Err(bad(&format!("expected '{name}', found '{k}'")));
            }
            v.trim().parse().map_err(|_| bad(line))
        };
        let arch = Architecture {
            depth: field("depth")?,
            channels: field("channels")?,
            factor: field("factor")?,
        };
        let count = field("values")?;
        let values = lines
            .map(|l| l.parse::<f64>().map_err(|_| bad(l)))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(bad("value count does not match header"));
        }
        Self::from_values(arch, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| WppError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WppError::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Row-major `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable through the strides
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `(cin * 9) x (h * w)` matrix of shifted copies of the input channels.
fn im2col(input: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; cin * TAPS * hw];
    for c in 0..cin {
        let chan = &input[c * hw..(c + 1) * hw];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &mut cols[((c * TAPS) + ky * KSIZE + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &chan[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cin * hw];
    for c in 0..cin {
        let chan = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &cols[((c * TAPS) + ky * KSIZE + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut chan[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Inputs of every layer (post-activation), kept for the backward pass.
pub struct ForwardCache {
    h: usize,
    w: usize,
    inputs: Vec<Vec<f64>>,
}

/// `G_θ(y)` and the activations needed by [`backward`].
pub fn forward_cached(theta: &NetworkParams, y: &Image) -> Result<(Image, ForwardCache)> {
    let arch = theta.arch;
    let up = bicubic_upsample(y, arch.factor)?;
    let (h, w) = up.dims();
    let hw = h * w;
    let mut inputs = Vec::with_capacity(arch.depth);
    let mut act = up.as_slice().to_vec();
    for l in 0..arch.depth {
        let (cin, cout) = arch.layer_channels(l);
        let (weights, bias) = theta.layer(l);
        let cols = im2col(&act, cin, h, w);
        let mut z = vec![0.0; cout * hw];
        for (o, b) in bias.iter().enumerate() {
            z[o * hw..(o + 1) * hw].fill(*b);
        }
        gemm(
            cout,
            cin * TAPS,
            hw,
            1.0,
            weights,
            ((cin * TAPS) as isize, 1),
            &cols,
            (hw as isize, 1),
            1.0,
            &mut z,
        );
        if l + 1 < arch.depth {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut act, z));
    }
    let out = up.add(&Image::from_vec(h, w, act)?)?;
    Ok((out, ForwardCache { h, w, inputs }))
}

/// `G_θ(y) = up(y) + R_θ(up(y))`.
pub fn forward_net(theta: &NetworkParams, y: &Image) -> Result<Image> {
    forward_cached(theta, y).map(|(x, _)| x)
}

/// Gradient of `⟨G_θ(y), upstream⟩` with respect to `θ`, from a cache.
pub fn backward(theta: &NetworkParams, cache: &ForwardCache, upstream: &Image) -> Result<Vec<f64>> {
    let arch = theta.arch;
    let (h, w) = (cache.h, cache.w);
    if upstream.dims() != (h, w) {
        return Err(WppError::dim(format!(
            "upstream {:?} vs network output {:?}",
            upstream.dims(),
            (h, w)
        )));
    }
    let hw = h * w;
    let mut grads = vec![0.0; theta.values.len()];
    let mut delta = upstream.as_slice().to_vec();
    for l in (0..arch.depth).rev() {
        let (cin, cout) = arch.layer_channels(l);
        let (weights, _) = theta.layer(l);
        let input = &cache.inputs[l];
        let cols = im2col(input, cin, h, w);
        let off = theta.offsets[l];
        let nw = cout * cin * TAPS;
        {
            let (gw, gb) = grads[off..off + nw + cout].split_at_mut(nw);
            // dW = delta * colsᵀ
            gemm(
                cout,
                hw,
                cin * TAPS,
                1.0,
                &delta,
                (hw as isize, 1),
                &cols,
                (1, hw as isize),
                0.0,
                gw,
            );
            for (o, g) in gb.iter_mut().enumerate() {
                *g = delta[o * hw..(o + 1) * hw].iter().sum();
            }
        }
        if l == 0 {
            break;
        }
        // dcols = Wᵀ delta
        let mut dcols = vec![0.0; cin * TAPS * hw];
        gemm(
            cin * TAPS,
            cout,
            hw,
            1.0,
            weights,
            (1, (cin * TAPS) as isize),
            &delta,
            (hw as isize, 1),
            0.0,
            &mut dcols,
        );
        let mut d_in = col2im(&dcols, cin, h, w);
        // ReLU mask of the previous layer
        for (d, a) in d_in.iter_mut().zip(input) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        delta = d_in;
    }
    Ok(grads)
}

/// Gradient of `⟨G_θ(y), upstream⟩` with respect to every weight and bias.
pub fn backward_net(theta: &NetworkParams, y: &Image, upstream: &Image) -> Result<Vec<f64>> {
    let (_, cache) = forward_cached(theta, y)?;
    backward(theta, &cache, upstream)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub dual: DualAscentConfig,
    pub patch: (usize, usize),
    pub arch: Architecture,
    pub seed: u64,
    /// Start with a zero output layer, i.e. from plain bicubic upsampling.
    pub zero_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 12.5,
            batch_size: 25,
            epochs: 30,
            adam: AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            },
            dual: DualAscentConfig::default(),
            patch: (6, 6),
            arch: Architecture::default(),
            seed: 0,
            zero_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(WppError::invalid("batch size must be at least 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(WppError::invalid("learning rate must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(WppError::invalid("lambda must be >= 0"));
        }
        self.arch.validate()?;
        self.dual.validate()
    }
}

/// Batched loss value with its parts and parameter gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// `(1/b) Σ_i ‖f(G_θ(y_i)) - y_i‖²`
    pub fidelity: f64,
    /// Semi-dual W2² of the merged patch distribution.
    pub wpp: f64,
    pub grads: Vec<f64>,
    pub psi: DualPotential,
}

/// `(1/b) Σ_i ‖f(G_θ(y_i)) - y_i‖² + λ W2²((1/b) Σ_i μ_{G_θ(y_i)}, μ_ref)`
/// and its gradient in `θ`.
pub fn wppnet_loss(
    theta: &NetworkParams,
    batch: &[Image],
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &TrainConfig,
    psi_warm: Option<&DualPotential>,
) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(WppError::invalid("empty batch"));
    }
    if reference.shape() != cfg.patch {
        return Err(WppError::dim("reference patch shape differs from the configured patch"));
    }
    let b = batch.len() as f64;
    let outputs = batch
        .iter()
        .map(|y| forward_net(theta, y))
        .collect::<Result<Vec<_>>>()?;
    let (wpp, w2_grads, psi) = if cfg.lambda == 0.0 {
        let psi = psi_warm
            .cloned()
            .unwrap_or_else(|| DualPotential::zeros(reference.count()));
        (0.0, None, psi)
    } else {
        let bw = batch_w2(&outputs, reference, &cfg.dual, psi_warm)?;
        (bw.value, Some(bw.grads), bw.psi)
    };
    let mut fidelity = 0.0;
    let mut grads = vec![0.0; theta.values.len()];
    for (i, (y, x)) in batch.iter().zip(&outputs).enumerate() {
        let r = op.apply(x)?.sub(y).map_err(|_| {
            WppError::dim(format!("f(G(y)) does not match y of dims {:?}", y.dims()))
        })?;
        fidelity += r.norm_sq() / b;
        let mut upstream = op.adjoint(&r, x.dims())?.scale(2.0 / b);
        if let Some(g) = &w2_grads {
            upstream.axpy(cfg.lambda, &g[i])?;
        }
        // recomputing the forward pass keeps only one image's activations alive
        let (_, cache) = forward_cached(theta, y)?;
        let gi = backward(theta, &cache, &upstream)?;
        grads.iter_mut().zip(&gi).for_each(|(a, g)| *a += g);
    }
    Ok(LossEval {
        value: fidelity + cfg.lambda * wpp,
        fidelity,
        wpp,
        grads,
        psi,
    })
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub theta: NetworkParams,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fixed disjoint partition of `0..n` into batches of `batch_size`.
pub fn batch_partition(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains from [`NetworkParams::he_init`] seeded with `cfg.seed`.
pub fn train(
    dataset: &[Image],
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let theta = NetworkParams::he_init(cfg.arch, cfg.seed, cfg.zero_init)?;
    train_from(theta, dataset, op, reference, cfg, |_, _| {})
}

/// Adam on the batched loss; `on_epoch(epoch, mean_loss)` after every epoch.
/// The dual potential of each batch is carried over to the next epoch.
pub fn train_from(
    mut theta: NetworkParams,
    dataset: &[Image],
    op: &ForwardOperator,
    reference: &PatchDistribution,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainResult> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(WppError::invalid("empty training set"));
    }
    if theta.arch != cfg.arch {
        return Err(WppError::invalid("initial parameters do not match the architecture"));
    }
    let batches = batch_partition(dataset.len(), cfg.batch_size, cfg.seed);
    let mut psis: Vec<Option<DualPotential>> = vec![None; batches.len()];
    let mut adam = Adam::new(theta.values.len(), cfg.adam);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<Image> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let step_cfg = TrainConfig {
                dual: DualAscentConfig {
                    seed: cfg.dual.seed.wrapping_add(step),
                    ..cfg.dual
                },
                ..cfg.clone()
            };
            let eval = wppnet_loss(&theta, &batch, op, reference, &step_cfg, psis[bi].as_ref())?;
            if !eval.value.is_finite() {
                return Err(WppError::Solver(format!("loss diverged in epoch {epoch}")));
            }
            total += eval.value;
            adam.step(&mut theta.values, &eval.grads);
            psis[bi] = Some(eval.psi);
            step += 1;
        }
        let mean = total / batches.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainResult { theta, epoch_losses })
}
