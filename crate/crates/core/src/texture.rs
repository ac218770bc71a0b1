//! Procedural grain textures for experiments that need no external data.
//!
//! A few octaves of seeded value noise are summed and pushed through a steep
//! sigmoid, which turns the smooth field into blobs with sharp borders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, WppError};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub rows: usize,
    pub cols: usize,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub cell: f64,
    pub octaves: usize,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Steepness of the threshold; larger gives harder grain borders.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            rows: 128,
            cols: 128,
            cell: 12.0,
            octaves: 3,
            persistence: 0.5,
            sharpness: 6.0,
            seed: 0,
        }
    }
}

struct Lattice {
    cols: usize,
    values: Vec<f64>,
    cell: f64,
}

impl Lattice {
    fn new(rows: usize, cols: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let lr = (rows as f64 / cell).ceil() as usize + 2;
        let lc = (cols as f64 / cell).ceil() as usize + 2;
        let values = (0..lr * lc).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Lattice {
            cols: lc,
            values,
            cell,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    fn sample(&self, y: f64, x: f64) -> f64 {
        let (fy, fx) = (y / self.cell, x / self.cell);
        let (i, j) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (smoothstep(fy - i as f64), smoothstep(fx - j as f64));
        let top = self.at(i, j) * (1.0 - tx) + self.at(i, j + 1) * tx;
        let bottom = self.at(i + 1, j) * (1.0 - tx) + self.at(i + 1, j + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Grain texture with intensities in `(0, 1)`.
pub fn generate_texture(spec: &TextureSpec) -> Result<Image> {
    if spec.rows == 0 || spec.cols == 0 || spec.octaves == 0 || !(spec.cell >= 1.0) {
        return Err(WppError::invalid("texture needs positive dims, octaves and cell >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lattices: Vec<(Lattice, f64)> = (0..spec.octaves)
        .map(|o| {
            let cell = (spec.cell / 2f64.powi(o as i32)).max(1.0);
            (
                Lattice::new(spec.rows, spec.cols, cell, &mut rng),
                spec.persistence.powi(o as i32),
            )
        })
        .collect();
    let norm: f64 = lattices.iter().map(|(_, a)| a).sum();
    let k = spec.sharpness;
    Ok(Image::from_fn(spec.rows, spec.cols, |i, j| {
        let v: f64 = lattices
            .iter()
            .map(|(l, a)| a * l.sample(i as f64 + 0.5, j as f64 + 0.5))
            .sum::<f64>()
            / norm;
        0.1 + 0.8 / (1.0 + (-k * v).exp())
    }))
}
