//! End-to-end pipelines behind the `wpp` command line tool.
//!
//! Every pipeline reads a [`RunConfig`], writes its artifacts below
//! `out_dir` and finishes with a `manifest.txt` that lists each written file
//! as `key = path`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Result, WppError};
use crate::image::{bicubic_upsample, extract_patches, subsample_distribution, Image, PatchDistribution};
use crate::io::{load_image, save_image};
use crate::metrics::{blur_effect, crop_boundary, psnr, EVAL_MARGIN};
use crate::network::{forward_net, train_from, Architecture, NetworkParams, TrainConfig};
use crate::operator::{add_noise, estimate_operator, gaussian_kernel, ForwardOperator, NoiseModel};
use crate::optim::AdamConfig;
use crate::texture::{generate_texture, TextureSpec};
use crate::transport::{w2_exact_lp, w2_semidual, DualAscentConfig};
use crate::variational::{reconstruct, ReconstructionConfig};

/// Blur kernel, bias and stride of a forward operator, independent of the
/// image size. Fourier operators get their target grid from the images they
/// are applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub kernel: Image,
    pub bias: f64,
    pub stride: usize,
    pub fourier: bool,
}

impl OperatorSpec {
    /// Operator for high-resolution images of `dims`.
    pub fn for_hr(&self, dims: (usize, usize)) -> Result<ForwardOperator> {
        if !self.fourier {
            return ForwardOperator::strided(self.kernel.clone(), self.bias, self.stride);
        }
        if !dims.0.is_multiple_of(self.stride) || !dims.1.is_multiple_of(self.stride) {
            return Err(WppError::dim(format!(
                "Fourier operator needs dims divisible by {}, got {dims:?}",
                self.stride
            )));
        }
        let target = (dims.0 / self.stride, dims.1 / self.stride);
        ForwardOperator::fourier(self.kernel.clone(), self.bias, target, self.stride)
    }

    /// Operator whose output has `lr_dims` when applied to the bicubic
    /// upsampling of a low-resolution image.
    pub fn for_lr(&self, lr_dims: (usize, usize)) -> Result<ForwardOperator> {
        self.for_hr((lr_dims.0 * self.stride, lr_dims.1 * self.stride))
    }

    /// Flat `key = value` sidecar; kernel values are row-major.
    pub fn to_text(&self) -> String {
        let values: Vec<String> = self.kernel.as_slice().iter().map(|v| format!("{v:?}")).collect();
        format!(
            "mode = {}\nstride = {}\nbias = {:?}\nkernel_rows = {}\nkernel_cols = {}\nkernel_values = {}\n",
            if self.fourier { "fourier" } else { "strided" },
            self.stride,
            self.bias,
            self.kernel.rows(),
            self.kernel.cols(),
            values.join(",")
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = RunConfig::parse(text)?;
        let fourier = parse_mode(&cfg.require::<String>("mode")?)?;
        let stride = cfg.require("stride")?;
        let bias = cfg.require("bias")?;
        let rows = cfg.require("kernel_rows")?;
        let cols = cfg.require("kernel_cols")?;
        let values = cfg
            .require::<String>("kernel_values")?
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| WppError::Config(format!("kernel value '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        cfg.finish()?;
        if values.len() != rows * cols {
            return Err(WppError::Config(format!(
                "{} kernel values for a {rows}x{cols} kernel",
                values.len()
            )));
        }
        let spec = OperatorSpec {
            kernel: Image::from_vec(rows, cols, values)?,
            bias,
            stride,
            fourier,
        };
        ForwardOperator::strided(spec.kernel.clone(), spec.bias, spec.stride)?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| WppError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| WppError::io(path, e))?;
        Self::from_text(&text).map_err(|e| WppError::Config(format!("{}: {e}", path.display())))
    }
}

fn parse_mode(mode: &str) -> Result<bool> {
    match mode {
        "strided" => Ok(false),
        "fourier" => Ok(true),
        other => Err(WppError::Config(format!("mode must be strided or fourier, got '{other}'"))),
    }
}

/// Files written by a pipeline, in order.
#[derive(Debug, Default, Clone)]
pub struct Manifest {
    entries: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn add(&mut self, key: impl Into<String>, path: impl Into<PathBuf>) {
        self.entries.push((key.into(), path.into()));
    }

    pub fn entries(&self) -> &[(String, PathBuf)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Path> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, p)| p.as_path())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (k, p) in &self.entries {
            let _ = writeln!(s, "{k} = {}", p.display());
        }
        fs::write(path, s).map_err(|e| WppError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| WppError::io(path, e))?;
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| WppError::Config(format!("manifest line '{line}'")))?;
            m.add(k.trim(), v.trim());
        }
        Ok(m)
    }
}

/// What a pipeline did: its manifest and a few `key=value` headline numbers.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub values: Vec<(String, String)>,
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn create(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.require_path("out_dir")?;
        Ok(Output {
            dir,
            manifest: Manifest::default(),
        })
    }

    /// Path below `out_dir`; parent directories are created on demand.
    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| WppError::io(parent, e))?;
        }
        Ok(p)
    }

    fn image(&mut self, key: &str, name: &str, img: &Image) -> Result<()> {
        let p = self.path(name)?;
        save_image(img, &p)?;
        self.manifest.add(key, p);
        Ok(())
    }

    fn text(&mut self, key: &str, name: &str, text: &str) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, text).map_err(|e| WppError::io(&p, e))?;
        self.manifest.add(key, p);
        Ok(())
    }

    fn finish(self, values: Vec<(String, String)>) -> Result<RunSummary> {
        let manifest_path = self.path("manifest.txt")?;
        self.manifest.write(&manifest_path)?;
        Ok(RunSummary {
            manifest_path,
            manifest: self.manifest,
            values,
        })
    }
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn dual_config(cfg: &RunConfig) -> Result<DualAscentConfig> {
    let d = DualAscentConfig::default();
    let dual = DualAscentConfig {
        steps: cfg.get_or("dual_steps", d.steps)?,
        step_size: cfg.get_or("dual_step_size", d.step_size)?,
        minibatch: cfg.get_or("dual_minibatch", d.minibatch)?,
        seed: cfg.get_or("seed", d.seed)?,
        decay: cfg.get_or("dual_decay", d.decay)?,
    };
    dual.validate()?;
    Ok(dual)
}

fn patch_size(cfg: &RunConfig) -> Result<usize> {
    let s: usize = cfg.get_or("patch_size", 6)?;
    if s == 0 {
        return Err(WppError::Config("patch_size must be at least 1".into()));
    }
    Ok(s)
}

/// Patches of the reference image, subsampled to `ref_subsample` (0 keeps all).
fn reference_patches(cfg: &RunConfig, s: usize) -> Result<PatchDistribution> {
    let img = load_image(cfg.require_path("reference")?)?;
    let all = extract_patches(&img, s, s)?;
    let n: usize = cfg.get_or("ref_subsample", 2000)?;
    let seed: u64 = cfg.get_or("ref_seed", 1)?;
    if n == 0 {
        Ok(all)
    } else {
        subsample_distribution(&all, n, seed)
    }
}

/// Source image, crops, low-resolution set and held-out validation pair.
///
/// The left half of the source is kept as the reference; the validation
/// crop is the top-left `val_size` square of the right half and training
/// crops are drawn below it, so the three never overlap.
pub fn gen_data(cfg: &RunConfig) -> Result<RunSummary> {
    let mut out = Output::create(cfg)?;
    let source = match cfg.path("source")? {
        Some(p) => load_image(p)?,
        None => {
            let d = TextureSpec::default();
            generate_texture(&TextureSpec {
                rows: cfg.get_or("texture_rows", 384)?,
                cols: cfg.get_or("texture_cols", 384)?,
                cell: cfg.get_or("texture_cell", d.cell)?,
                octaves: cfg.get_or("texture_octaves", d.octaves)?,
                persistence: cfg.get_or("texture_persistence", d.persistence)?,
                sharpness: cfg.get_or("texture_sharpness", d.sharpness)?,
                seed: cfg.get_or("texture_seed", d.seed)?,
            })?
        }
    };
    let crop: usize = cfg.get_or("crop_size", 100)?;
    let count: usize = cfg.get_or("count", 64)?;
    let val: usize = cfg.get_or("val_size", 128)?;
    let stride: usize = cfg.get_or("stride", 4)?;
    let ksize: usize = cfg.get_or("kernel_size", 16)?;
    let sigma: f64 = cfg.get_or("kernel_sigma", 2.0)?;
    let bias: f64 = cfg.get_or("bias", 0.0)?;
    let fourier = parse_mode(&cfg.get_or("mode", "strided".to_string())?)?;
    let noise: f64 = cfg.get_or("noise_sigma", 0.01)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    cfg.finish()?;

    let (rows, cols) = source.dims();
    let c0 = cols / 2;
    let right = cols - c0;
    if c0 == 0 || val == 0 || val > rows.min(right) {
        return Err(WppError::dim(format!(
            "a {rows}x{cols} source has no room for a {val}x{val} validation crop"
        )));
    }
    if count > 0 && (crop == 0 || crop > right || crop > rows - val) {
        return Err(WppError::dim(format!(
            "a {rows}x{cols} source has no room for {crop}x{crop} training crops"
        )));
    }
    let spec = OperatorSpec {
        kernel: gaussian_kernel(ksize, sigma)?,
        bias,
        stride,
        fourier,
    };
    let degrade = |hr: &Image, noise_seed: u64| -> Result<Image> {
        let y = spec.for_hr(hr.dims())?.apply(hr)?;
        add_noise(&y, &NoiseModel { sigma: noise, seed: noise_seed })
    };

    out.image("source", "source.png", &source)?;
    out.image("reference", "reference.png", &source.crop(0, 0, rows, c0)?)?;
    let val_hr = source.crop(0, c0, val, val)?;
    out.image("val_hr", "val_hr.png", &val_hr)?;
    out.image("val_lr", "val_lr.png", &degrade(&val_hr, seed.wrapping_add(count as u64))?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = String::from("index,row,col,size\n");
    for i in 0..count {
        let r = rng.random_range(val..=rows - crop);
        let c = rng.random_range(c0..=cols - crop);
        let hr = source.crop(r, c, crop, crop)?;
        let name = format!("lr/lr_{i:03}.png");
        out.image(&format!("lr_{i:03}"), &name, &degrade(&hr, seed.wrapping_add(i as u64))?)?;
        let _ = writeln!(crops, "{i},{r},{c},{crop}");
    }
    out.text("crops", "crops.csv", &crops)?;

    let kmax = spec.kernel.max_abs();
    out.image("kernel", "kernel.png", &spec.kernel.scale(if kmax > 0.0 { 1.0 / kmax } else { 1.0 }))?;
    out.text("operator", "operator.txt", &spec.to_text())?;
    out.finish(vec![kv("lr_images", count), kv("source_dims", format!("{rows}x{cols}"))])
}

/// Estimates a Fourier-model operator from a registered (hr, lr) pair.
/// With `true_operator` set, the kernel and bias errors are reported.
pub fn run_estimate(cfg: &RunConfig) -> Result<RunSummary> {
    let mut out = Output::create(cfg)?;
    let hr = load_image(cfg.require_path("hr")?)?;
    let lr = load_image(cfg.require_path("lr")?)?;
    let ksize: usize = cfg.get_or("kernel_size", 16)?;
    let truth = cfg.path("true_operator")?;
    cfg.finish()?;
    let (r, c) = (hr.rows() / lr.rows().max(1), hr.cols() / lr.cols().max(1));
    if r != c || r == 0 || lr.rows() * r != hr.rows() || lr.cols() * c != hr.cols() {
        return Err(WppError::dim(format!(
            "hr {:?} is not an integer magnification of lr {:?}",
            hr.dims(),
            lr.dims()
        )));
    }
    let (kernel, bias) = estimate_operator(&hr, &lr, ksize)?;
    let spec = OperatorSpec {
        kernel,
        bias,
        stride: r,
        fourier: true,
    };
    let mut csv = String::from("kernel_size,bias,kernel_sum,kernel_max_error,bias_error\n");
    let mut values = vec![kv("bias", format!("{bias:?}")), kv("stride", r)];
    let (kerr, berr) = match truth {
        Some(p) => {
            let t = OperatorSpec::load(&p)?;
            if t.kernel.dims() != spec.kernel.dims() {
                return Err(WppError::dim(format!(
                    "true kernel {:?} vs estimated {:?}",
                    t.kernel.dims(),
                    spec.kernel.dims()
                )));
            }
            let k = spec.kernel.sub(&t.kernel)?.max_abs();
            let b = (spec.bias - t.bias).abs();
            values.push(kv("kernel_max_error", format!("{k:e}")));
            values.push(kv("bias_error", format!("{b:e}")));
            (format!("{k:?}"), format!("{b:?}"))
        }
        None => (String::new(), String::new()),
    };
    let _ = writeln!(
        csv,
        "{ksize},{bias:?},{:?},{kerr},{berr}",
        spec.kernel.sum()
    );
    let kmax = spec.kernel.max_abs();
    out.image("kernel", "kernel.png", &spec.kernel.scale(if kmax > 0.0 { 1.0 / kmax } else { 1.0 }))?;
    out.text("operator", "operator.txt", &spec.to_text())?;
    out.text("report", "estimate_report.csv", &csv)?;
    out.finish(values)
}

/// Variational WPP reconstruction of one low-resolution image.
pub fn run_reconstruct(cfg: &RunConfig) -> Result<RunSummary> {
    let mut out = Output::create(cfg)?;
    let y = load_image(cfg.require_path("lr")?)?;
    let spec = OperatorSpec::load(&cfg.require_path("operator")?)?;
    let s = patch_size(cfg)?;
    let reference = reference_patches(cfg, s)?;
    let d = ReconstructionConfig::default();
    let rcfg = ReconstructionConfig {
        lambda: cfg.get_or("lambda", d.lambda)?,
        noise_sigma: cfg.get_or("noise_sigma", d.noise_sigma)?,
        outer_iterations: cfg.get_or("iterations", d.outer_iterations)?,
        adam: AdamConfig {
            lr: cfg.get_or("adam_lr", d.adam.lr)?,
            ..d.adam
        },
        dual: dual_config(cfg)?,
        patch: (s, s),
    };
    cfg.finish()?;
    let op = spec.for_lr(y.dims())?;
    let rec = reconstruct(&y, &op, &reference, &rcfg)?;
    let mut csv = String::from("iteration,total,fidelity,wpp\n");
    for row in &rec.trace {
        let v = row.value;
        let _ = writeln!(csv, "{},{:?},{:?},{:?}", row.iteration, v.total, v.fidelity, v.wpp);
    }
    out.image("reconstruction", "reconstruction.png", &rec.x)?;
    out.text("trace", "trace.csv", &csv)?;
    let first = rec.trace.first().map_or(f64::NAN, |r| r.value.total);
    let last = rec.trace.last().map_or(f64::NAN, |r| r.value.total);
    let mut values = vec![kv("initial_total", format!("{first:?}")), kv("final_total", format!("{last:?}"))];
    if let Some(rho) = rcfg.rho() {
        values.push(kv("rho", format!("{rho:?}")));
    }
    out.finish(values)
}

/// Sorted PNG/PGM files of a directory.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| WppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Trains the residual network on every image of `lr_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<RunSummary> {
    let mut out = Output::create(cfg)?;
    let lr_dir = cfg.require_path("lr_dir")?;
    let spec = OperatorSpec::load(&cfg.require_path("operator")?)?;
    let s = patch_size(cfg)?;
    let reference = reference_patches(cfg, s)?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        lambda: cfg.get_or("lambda", d.lambda)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        epochs: cfg.get_or("epochs", d.epochs)?,
        adam: AdamConfig {
            lr: cfg.get_or("adam_lr", d.adam.lr)?,
            ..d.adam
        },
        dual: dual_config(cfg)?,
        patch: (s, s),
        arch: Architecture {
            depth: cfg.get_or("depth", d.arch.depth)?,
            channels: cfg.get_or("channels", d.arch.channels)?,
            factor: spec.stride,
        },
        seed: cfg.get_or("seed", d.seed)?,
        zero_init: cfg.get_or("zero_init", d.zero_init)?,
    };
    let init = cfg.path("init_params")?;
    cfg.finish()?;
    let files = image_files(&lr_dir)?;
    let data = files.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    let first = data
        .first()
        .ok_or_else(|| WppError::invalid(format!("no images in {}", lr_dir.display())))?;
    if data.iter().any(|y| y.dims() != first.dims()) {
        return Err(WppError::dim("training images must share one size"));
    }
    let op = spec.for_lr(first.dims())?;
    let theta0 = match init {
        Some(p) => NetworkParams::load(p)?,
        None => NetworkParams::he_init(tcfg.arch, tcfg.seed, tcfg.zero_init)?,
    };
    let mut csv = String::from("epoch,loss\n");
    let res = train_from(theta0, &data, &op, &reference, &tcfg, |e, l| {
        let _ = writeln!(csv, "{},{l:?}", e + 1);
    })?;
    let p = out.path("params.txt")?;
    res.theta.save(&p)?;
    out.manifest.add("params", p);
    out.text("loss", "loss.csv", &csv)?;
    let mut values = vec![kv("images", data.len()), kv("epochs", tcfg.epochs)];
    if let (Some(a), Some(b)) = (res.epoch_losses.first(), res.epoch_losses.last()) {
        values.push(kv("first_loss", format!("{a:?}")));
        values.push(kv("final_loss", format!("{b:?}")));
    }
    out.finish(values)
}

/// One evaluated method; `psnr` is `None` when the image equals the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub psnr: Option<f64>,
    pub blur_effect: f64,
    pub crop: usize,
}

fn eval_row(method: &str, x: &Image, truth: &Image, margin: usize) -> Result<EvalRow> {
    if x.dims() != truth.dims() {
        return Err(WppError::dim(format!(
            "{method} output {:?} vs truth {:?}",
            x.dims(),
            truth.dims()
        )));
    }
    let xc = crop_boundary(x, margin)?;
    let tc = crop_boundary(truth, margin)?;
    let psnr = match psnr(&xc, &tc) {
        Ok(v) => Some(v),
        Err(WppError::ZeroMse) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalRow {
        method: method.to_string(),
        psnr,
        blur_effect: blur_effect(&xc)?,
        crop: margin,
    })
}

/// PSNR and blur effect of bicubic (`lr`), a reconstruction (`recon`) and
/// the trained network (`params` applied to `lr`) against `truth`.
pub fn run_eval(cfg: &RunConfig) -> Result<RunSummary> {
    let mut out = Output::create(cfg)?;
    let truth_path = cfg.require_path("truth")?;
    let truth = load_image(&truth_path)?;
    let lr = cfg.path("lr")?.map(load_image).transpose()?;
    let recon = cfg.path("recon")?.map(load_image).transpose()?;
    let params = cfg.path("params")?.map(NetworkParams::load).transpose()?;
    let margin: usize = cfg.get_or("margin", EVAL_MARGIN)?;
    cfg.finish()?;
    let mut rows = Vec::new();
    if let Some(y) = &lr {
        let factor = truth.rows() / y.rows().max(1);
        rows.push(eval_row("bicubic", &bicubic_upsample(y, factor.max(1))?, &truth, margin)?);
    }
    if let Some(x) = &recon {
        rows.push(eval_row("wpp", x, &truth, margin)?);
    }
    if let Some(theta) = &params {
        let y = lr
            .as_ref()
            .ok_or_else(|| WppError::Config("params given without lr".into()))?;
        let x = forward_net(theta, y)?.clamp01();
        out.image("network_output", "network_output.png", &x)?;
        rows.push(eval_row("wppnet", &x, &truth, margin)?);
    }
    if rows.is_empty() {
        return Err(WppError::Config("nothing to evaluate: set lr, recon or params".into()));
    }
    let image = truth_path.display().to_string();
    let mut csv = String::from("method,image,psnr,blur_effect,crop,zero_mse\n");
    let mut values = Vec::new();
    for r in &rows {
        let p = r.psnr.map_or("inf".to_string(), |v| format!("{v:?}"));
        let _ = writeln!(
            csv,
            "{},{image},{p},{:?},{},{}",
            r.method,
            r.blur_effect,
            r.crop,
            u8::from(r.psnr.is_none())
        );
        values.push(kv(&format!("{}_psnr", r.method), p));
        values.push(kv(&format!("{}_blur", r.method), format!("{:?}", r.blur_effect)));
    }
    out.text("metrics", "metrics.csv", &csv)?;
    out.finish(values)
}

/// W2² between the patch distributions of two images, exact (`method =
/// exact`) or from the ascended semi-dual (`method = semidual`).
pub fn run_w2(cfg: &RunConfig) -> Result<RunSummary> {
    let a = load_image(cfg.require_path("a")?)?;
    let b = load_image(cfg.require_path("b")?)?;
    let s = patch_size(cfg)?;
    let method: String = cfg.get_or("method", "semidual".to_string())?;
    let dual = dual_config(cfg)?;
    let out_dir = cfg.path("out_dir")?;
    cfg.finish()?;
    let pa = extract_patches(&a, s, s)?;
    let pb = extract_patches(&b, s, s)?;
    let value = match method.as_str() {
        "exact" => w2_exact_lp(&pa, &pb)?.0,
        "semidual" => w2_semidual(&pa, &pb, &dual, None)?.value,
        other => {
            return Err(WppError::Config(format!(
                "method must be exact or semidual, got '{other}'"
            )))
        }
    };
    let values = vec![kv("w2", format!("{value:?}")), kv("method", &method)];
    match out_dir {
        Some(dir) => {
            let mut c = RunConfig::new();
            c.set("out_dir", &dir.display().to_string())?;
            let mut out = Output::create(&c)?;
            out.text("w2", "w2.csv", &format!("method,patch_size,w2\n{method},{s},{value:?}\n"))?;
            out.finish(values)
        }
        None => Ok(RunSummary {
            manifest_path: PathBuf::new(),
            manifest: Manifest::default(),
            values,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_sidecar_round_trip() {
        let spec = OperatorSpec {
            kernel: gaussian_kernel(5, 1.3).unwrap(),
            bias: 0.05,
            stride: 2,
            fourier: true,
        };
        assert_eq!(OperatorSpec::from_text(&spec.to_text()).unwrap(), spec);
        let bad = spec.to_text().replace("mode = fourier", "mode = other");
        assert!(OperatorSpec::from_text(&bad).is_err());
    }

    #[test]
    fn fourier_spec_needs_divisible_dims() {
        let spec = OperatorSpec {
            kernel: gaussian_kernel(3, 1.0).unwrap(),
            bias: 0.0,
            stride: 4,
            fourier: true,
        };
        assert!(spec.for_hr((10, 12)).is_err());
        assert_eq!(spec.for_lr((5, 6)).unwrap().output_dims((20, 24)).unwrap(), (5, 6));
    }

    #[test]
    fn eval_row_flags_zero_mse() {
        let x = Image::from_fn(20, 20, |i, j| ((i * 3 + j) % 5) as f64 / 5.0);
        let r = eval_row("same", &x, &x, 2).unwrap();
        assert_eq!(r.psnr, None);
        assert!(r.blur_effect >= 0.0);
    }
}
