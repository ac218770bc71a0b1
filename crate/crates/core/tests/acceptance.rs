//! Acceptance criteria 1-8. Each test prints one line
//! `acceptance <n> PASS|FAIL <details>` before asserting.
//!
//! Run with: cargo test --release --test acceptance

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpp_core::image::{
    bicubic_upsample, extract_patches, merge_distributions, subsample_distribution, Image,
    PatchDistribution,
};
use wpp_core::metrics::{blur_effect, box_blur3, crop_boundary, evaluate, psnr, EVAL_MARGIN};
use wpp_core::network::{
    backward_net, forward_net, train_from, wppnet_loss, Architecture, NetworkParams, TrainConfig,
};
use wpp_core::operator::{
    add_noise, estimate_operator, fourier_downsample, fourier_downsample_with_residue,
    gaussian_kernel, ForwardOperator, NoiseModel,
};
use wpp_core::optim::AdamConfig;
use wpp_core::texture::{generate_texture, TextureSpec};
use wpp_core::transport::{
    ascend_dual_observed, assign_all, dual_objective, w2_exact_lp, w2_gradient_image,
    DualAscentConfig, DualPotential,
};
use wpp_core::variational::{frozen_objective, gradient_at, reconstruct, ReconstructionConfig};

fn report(n: u32, pass: bool, details: String) {
    // written to the handle directly so the line survives output capture
    let line = format!("acceptance {n} {} {details}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    drop(out);
    assert!(pass, "acceptance {n} failed: {details}");
}

fn random_image(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

fn random_dist(n: usize, s: usize, rng: &mut ChaCha8Rng) -> PatchDistribution {
    let data = (0..n * s * s).map(|_| rng.random::<f64>()).collect();
    PatchDistribution::from_flat(s, s, data).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn criterion_1_dual_primal_agreement() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_gap: f64 = 0.0;
    let mut worst_violation = f64::NEG_INFINITY;
    for _ in 0..50 {
        let s = rng.random_range(1..=3);
        let n = rng.random_range(2..=8);
        let src = random_dist(n, s, &mut rng);
        let reference = random_dist(n, s, &mut rng);
        let (exact, _) = w2_exact_lp(&src, &reference).unwrap();
        let cfg = DualAscentConfig::full_batch(500, 1.0);
        let mut best = f64::NEG_INFINITY;
        let mut observe = |_: usize, psi: &DualPotential| {
            let f = dual_objective(psi, &src, &reference).unwrap();
            worst_violation = worst_violation.max(f - exact);
            best = best.max(f);
        };
        let psi = ascend_dual_observed(&src, &reference, &DualPotential::zeros(n), &cfg, &mut observe)
            .unwrap();
        observe(500, &psi);
        worst_gap = worst_gap.max((exact - best) / exact);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        worst_gap < 1e-3 && worst_violation <= 1e-9 && secs < 10.0,
        format!("max_rel_gap={worst_gap:.3e} max_dual_minus_primal={worst_violation:.3e} secs={secs:.2}"),
    );
}

/// `F_ψ(x)` with `ψ` fixed: the prior whose gradient is the overlap-add.
fn fixed_psi_objective(x: &Image, reference: &PatchDistribution, psi: &DualPotential) -> f64 {
    let (s1, s2) = reference.shape();
    let src = extract_patches(x, s1, s2).unwrap();
    dual_objective(psi, &src, reference).unwrap()
}

#[test]
fn criterion_2_gradient_suites() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-6;

    // (a) W2 image gradient at a point where every patch has a unique nearest
    // reference patch, so the assignment is locally constant.
    let x = random_image(9, 8, &mut rng);
    let reference = random_dist(40, 3, &mut rng);
    let src = extract_patches(&x, 3, 3).unwrap();
    let psi = DualPotential::new((0..40).map(|_| rng.random::<f64>() * 0.1).collect()).unwrap();
    let (assign, _) = assign_all(&src, &reference, &psi).unwrap();
    let g = w2_gradient_image(&x, &reference, &assign, 3, 3).unwrap();
    let mut fd = vec![0.0; x.len()];
    for (i, v) in fd.iter_mut().enumerate() {
        let mut xp = x.clone();
        xp.as_mut_slice()[i] += h;
        let mut xm = x.clone();
        xm.as_mut_slice()[i] -= h;
        for xs in [&xp, &xm] {
            let a = assign_all(&extract_patches(xs, 3, 3).unwrap(), &reference, &psi).unwrap().0;
            assert_eq!(a, assign, "assignment changed under the finite-difference step");
        }
        *v = (fixed_psi_objective(&xp, &reference, &psi) - fixed_psi_objective(&xm, &reference, &psi))
            / (2.0 * h);
    }
    let err_a = rel_err(&fd, g.as_slice());

    // (b) network parameter gradients on a tiny net
    let arch = Architecture {
        depth: 3,
        channels: 3,
        factor: 2,
    };
    let mut theta = NetworkParams::he_init(arch, 7, false).unwrap();
    // nonzero biases keep pre-activations off the ReLU kink at exactly 0
    for v in theta.values_mut() {
        *v += rng.random::<f64>() * 0.1 - 0.05;
    }
    let y = random_image(5, 6, &mut rng);
    let up = random_image(10, 12, &mut rng);
    let g_net = backward_net(&theta, &y, &up).unwrap();
    let inner = |t: &NetworkParams| forward_net(t, &y).unwrap().dot(&up).unwrap();
    let fd_net = finite_diff(&theta, h, inner);
    let err_b1 = rel_err(&fd_net, &g_net);

    let op = ForwardOperator::strided(gaussian_kernel(4, 1.0).unwrap(), 0.02, 2).unwrap();
    let batch: Vec<Image> = (0..2).map(|_| random_image(5, 6, &mut rng)).collect();
    let ref3 = random_dist(30, 3, &mut rng);
    let cfg = TrainConfig {
        lambda: 0.0,
        batch_size: 2,
        patch: (3, 3),
        arch,
        ..TrainConfig::default()
    };
    let eval = wppnet_loss(&theta, &batch, &op, &ref3, &cfg, None).unwrap();
    let loss = |t: &NetworkParams| wppnet_loss(t, &batch, &op, &ref3, &cfg, None).unwrap().value;
    let err_b2 = rel_err(&finite_diff(&theta, h, loss), &eval.grads);
    let err_b = err_b1.max(err_b2);

    // (c) variational objective with frozen potential and assignment
    let kernel = gaussian_kernel(6, 1.5).unwrap();
    let op4 = ForwardOperator::strided(kernel, 0.01, 3).unwrap();
    let xv = random_image(12, 15, &mut rng);
    let yv = random_image(4, 5, &mut rng);
    let refv = random_dist(25, 3, &mut rng);
    let psiv = DualPotential::new((0..25).map(|_| rng.random::<f64>() * 0.2).collect()).unwrap();
    let av = assign_all(&extract_patches(&xv, 3, 3).unwrap(), &refv, &psiv).unwrap().0;
    let gv = gradient_at(&xv, &yv, &op4, &refv, &av, 12.5).unwrap();
    let mut fdv = vec![0.0; xv.len()];
    for (i, v) in fdv.iter_mut().enumerate() {
        let mut xp = xv.clone();
        xp.as_mut_slice()[i] += h;
        let mut xm = xv.clone();
        xm.as_mut_slice()[i] -= h;
        let jp = frozen_objective(&xp, &yv, &op4, &refv, &psiv, &av, 12.5).unwrap();
        let jm = frozen_objective(&xm, &yv, &op4, &refv, &psiv, &av, 12.5).unwrap();
        *v = (jp - jm) / (2.0 * h);
    }
    let err_c = rel_err(&fdv, gv.as_slice());

    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        err_a < 1e-4 && err_b < 1e-3 && err_c < 1e-5 && secs < 30.0,
        format!("w2_rel={err_a:.2e} net_rel={err_b:.2e} variational_rel={err_c:.2e} secs={secs:.2}"),
    );
}

fn finite_diff(theta: &NetworkParams, h: f64, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    (0..theta.values().len())
        .map(|i| {
            let mut p = theta.clone();
            p.values_mut()[i] += h;
            let mut m = theta.clone();
            m.values_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn criterion_3_batch_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut min_slack = f64::INFINITY;
    for _ in 0..100 {
        let b = rng.random_range(2..=4);
        let s = rng.random_range(1..=2);
        let reference = random_dist(rng.random_range(3..=12), s, &mut rng);
        // equal-size images, so the merged measure is the plain average
        let (r, c) = (rng.random_range(s..=4), rng.random_range(s..=4));
        let dists: Vec<PatchDistribution> = (0..b)
            .map(|_| extract_patches(&random_image(r, c, &mut rng), s, s).unwrap())
            .collect();
        let per_image: f64 = dists
            .iter()
            .map(|d| w2_exact_lp(d, &reference).unwrap().0)
            .sum::<f64>()
            / b as f64;
        let merged = w2_exact_lp(&merge_distributions(&dists).unwrap(), &reference).unwrap().0;
        min_slack = min_slack.min(per_image - merged);
    }
    report(3, min_slack >= -1e-9, format!("min_slack={min_slack:.3e} batches=100"));
}

#[test]
fn criterion_4_dual_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = rng.random_range(1..=3);
        let m = rng.random_range(1..=10);
        let src = random_dist(rng.random_range(1..=12), s, &mut rng);
        let reference = random_dist(m, s, &mut rng);
        let psi = DualPotential::new((0..m).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let c = rng.random::<f64>() * 20.0 - 10.0;
        let a = dual_objective(&psi, &src, &reference).unwrap();
        let b = dual_objective(&psi.shifted(c), &src, &reference).unwrap();
        worst = worst.max((a - b).abs());
    }
    report(4, worst < 1e-9, format!("max_abs_diff={worst:.3e} trials=100"));
}

#[test]
fn criterion_5_operator_suite() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut dot_err: f64 = 0.0;
    for (dims, k, stride) in [((24, 20), 16, 4), ((36, 30), 13, 6), ((17, 23), 5, 3)] {
        let kernel = random_image(k, k, &mut rng);
        let strided = ForwardOperator::strided(kernel.clone(), 0.3, stride).unwrap();
        let mut ops = vec![strided];
        if dims.0 % stride == 0 && dims.1 % stride == 0 {
            let target = (dims.0 / stride, dims.1 / stride);
            ops.push(ForwardOperator::fourier(kernel, 0.3, target, stride).unwrap());
        }
        for op in ops {
            let x = random_image(dims.0, dims.1, &mut rng);
            let g = random_image(op.output_dims(dims).unwrap().0, op.output_dims(dims).unwrap().1, &mut rng);
            let lhs = op.apply_linear(&x).unwrap().dot(&g).unwrap();
            let rhs = x.dot(&op.adjoint(&g, dims).unwrap()).unwrap();
            dot_err = dot_err.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    let mut residue: f64 = 0.0;
    let mut const_err: f64 = 0.0;
    for (m, n) in [((32, 32), (8, 8)), ((31, 30), (10, 15)), ((64, 48), (16, 12)), ((20, 20), (7, 9))] {
        let x = random_image(m.0, m.1, &mut rng);
        residue = residue.max(fourier_downsample_with_residue(&x, n).unwrap().1);
        let c = fourier_downsample(&Image::filled(m.0, m.1, 0.37), n).unwrap();
        const_err = const_err.max(c.as_slice().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max));
    }
    // kernels are smooth relative to the stride, so their spectrum beyond the
    // low-resolution band is negligible
    let mut k_err: f64 = 0.0;
    let mut b_err: f64 = 0.0;
    for (size, sigma, bias, hr, factor, seed) in
        [(15, 2.0, 0.05, 64, 2, 1), (21, 3.0, 0.1, 90, 3, 3), (25, 4.0, -0.03, 96, 4, 2)]
    {
        let kernel = gaussian_kernel(size, sigma).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = random_image(hr, hr, &mut r);
        let op = ForwardOperator::fourier(kernel.clone(), bias, (hr / factor, hr / factor), factor).unwrap();
        let y = op.apply(&x).unwrap();
        let (k_est, b_est) = estimate_operator(&x, &y, size).unwrap();
        k_err = k_err.max(k_est.sub(&kernel).unwrap().max_abs());
        b_err = b_err.max((b_est - bias).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        5,
        dot_err < 1e-10 && residue < 1e-10 && const_err < 1e-12 && k_err < 1e-2 && b_err < 1e-3 && secs < 10.0,
        format!(
            "dot={dot_err:.2e} imag={residue:.2e} const={const_err:.2e} kernel={k_err:.2e} bias={b_err:.2e} secs={secs:.2}"
        ),
    );
}

/// Texture split into a held-out 128x128 truth and a disjoint reference crop.
fn texture_pair(seed: u64) -> (Image, Image) {
    let tex = generate_texture(&TextureSpec {
        rows: 256,
        cols: 384,
        seed,
        ..TextureSpec::default()
    })
    .unwrap();
    (tex.crop(0, 0, 128, 128).unwrap(), tex.crop(0, 160, 224, 224).unwrap())
}

#[test]
fn criterion_6_variational_reconstruction() {
    let t0 = Instant::now();
    let (truth, ref_img) = texture_pair(0);
    let op = ForwardOperator::strided(gaussian_kernel(16, 2.0).unwrap(), 0.0, 4).unwrap();
    let y = add_noise(&op.apply(&truth).unwrap(), &NoiseModel { sigma: 0.01, seed: 99 }).unwrap();
    let reference = subsample_distribution(&extract_patches(&ref_img, 6, 6).unwrap(), 2000, 1).unwrap();
    let cfg = ReconstructionConfig {
        outer_iterations: 50,
        ..ReconstructionConfig::default()
    };
    let rec = reconstruct(&y, &op, &reference, &cfg).unwrap();
    let bic = evaluate(&bicubic_upsample(&y, 4).unwrap(), &truth, EVAL_MARGIN).unwrap();
    let wpp = evaluate(&rec.x, &truth, EVAL_MARGIN).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let gain = wpp.psnr - bic.psnr;
    report(
        6,
        gain >= 0.5 && wpp.blur_effect < bic.blur_effect && secs < 600.0,
        format!(
            "psnr_gain_db={gain:.2} wpp_psnr={:.2} bicubic_psnr={:.2} wpp_blur={:.3} bicubic_blur={:.3} secs={secs:.0}",
            wpp.psnr, bic.psnr, wpp.blur_effect, bic.blur_effect
        ),
    );
}

#[test]
fn criterion_7_network_training() {
    let t0 = Instant::now();
    let tex = generate_texture(&TextureSpec {
        rows: 384,
        cols: 384,
        ..TextureSpec::default()
    })
    .unwrap();
    let op = ForwardOperator::strided(gaussian_kernel(16, 2.0).unwrap(), 0.0, 4).unwrap();
    let reference =
        subsample_distribution(&extract_patches(&tex.crop(0, 0, 384, 192).unwrap(), 6, 6).unwrap(), 1000, 1)
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<Image> = (0..64)
        .map(|i| {
            let (r, c) = (rng.random_range(128..=284), rng.random_range(192..=284));
            let hr = tex.crop(r, c, 100, 100).unwrap();
            add_noise(&op.apply(&hr).unwrap(), &NoiseModel { sigma: 0.01, seed: i }).unwrap()
        })
        .collect();
    let val_hr = tex.crop(0, 192, 128, 128).unwrap();
    let val_lr = add_noise(&op.apply(&val_hr).unwrap(), &NoiseModel { sigma: 0.01, seed: 1000 }).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 30,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        dual: DualAscentConfig {
            steps: 10,
            ..DualAscentConfig::default()
        },
        arch: Architecture {
            depth: 4,
            channels: 16,
            factor: 4,
        },
        ..TrainConfig::default()
    };
    let theta0 = NetworkParams::he_init(cfg.arch, cfg.seed, cfg.zero_init).unwrap();
    let res = train_from(theta0, &data, &op, &reference, &cfg, |_, _| {}).unwrap();
    let first = res.epoch_losses[0];
    let last = *res.epoch_losses.last().unwrap();
    let bic = evaluate(&bicubic_upsample(&val_lr, 4).unwrap(), &val_hr, EVAL_MARGIN).unwrap();
    let net = evaluate(&forward_net(&res.theta, &val_lr).unwrap().clamp01(), &val_hr, EVAL_MARGIN).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        7,
        last < 0.5 * first && net.psnr > bic.psnr && secs < 1200.0,
        format!(
            "first_loss={first:.4} final_loss={last:.4} ratio={:.3} net_psnr={:.2} bicubic_psnr={:.2} secs={secs:.0}",
            last / first,
            net.psnr,
            bic.psnr
        ),
    );
}

#[test]
fn criterion_8_metrics() {
    let x = Image::from_fn(30, 30, |i, j| ((i * 7 + j * 3) % 10) as f64 / 20.0);
    let p = psnr(&x, &x.map(|v| v + 0.1)).unwrap();
    let psnr_ok = (p - 20.0).abs() < 1e-9;

    let mut in_range = true;
    let mut monotone = true;
    let mut corpus = 0;
    for seed in 0..6u64 {
        for (cell, sharpness) in [(6.0, 3.0), (12.0, 6.0), (20.0, 12.0)] {
            let img = generate_texture(&TextureSpec {
                rows: 64,
                cols: 72,
                cell,
                sharpness,
                seed,
                ..TextureSpec::default()
            })
            .unwrap();
            let mut prev = blur_effect(&img).unwrap();
            in_range &= (0.0..=1.0).contains(&prev);
            let mut cur = img;
            for _ in 0..5 {
                cur = box_blur3(&cur);
                let b = blur_effect(&cur).unwrap();
                in_range &= (0.0..=1.0).contains(&b);
                monotone &= b >= prev - 1e-6;
                prev = b;
            }
            let cropped = crop_boundary(&cur, 10).unwrap();
            in_range &= (0.0..=1.0).contains(&blur_effect(&cropped).unwrap());
            corpus += 1;
        }
    }
    report(
        8,
        psnr_ok && in_range && monotone,
        format!("psnr_offset_0.1={p:.6} blur_in_range={in_range} monotone={monotone} images={corpus}"),
    );
}
