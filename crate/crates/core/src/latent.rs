//! Latent tensors and seeded initial noise.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`, seeded with
//! `seed_from_u64`) followed by the Box–Muller transform. Each pair of uniforms
//! `(u1, u2)` yields two normals, `r·cos(2πu2)` then `r·sin(2πu2)` with
//! `r = sqrt(-2 ln u1)`, consumed in that order. Uniforms are the top 53 bits of
//! a `u64` draw, with `u1` shifted into `(0, 1]` so the logarithm is finite.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Index, IndexMut};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Seed(pub u64);

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Deterministic standard-normal stream.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: Seed) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed.0), spare: None }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Frame-major `frames × dims` real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    frames: usize,
    dims: usize,
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(frames: usize, dims: usize) -> Result<Self> {
        check_shape(frames, dims)?;
        Ok(Self { frames, dims, data: vec![0.0; frames * dims] })
    }

    pub fn from_vec(frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(frames, dims)?;
        if data.len() != frames * dims {
            return Err(Error::Shape(format!(
                "expected {} values for {frames}x{dims}, got {}",
                frames * dims,
                data.len()
            )));
        }
        Ok(Self { frames, dims, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dims)
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

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.dims..(frame + 1) * self.dims]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn ensure_same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{}x{} vs {}x{}", self.frames, self.dims, other.frames, other.dims)));
        }
        Ok(())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, scale: f64, other: &Latent) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent { frames: self.frames, dims: self.dims, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl Index<(usize, usize)> for Latent {
    type Output = f64;
    fn index(&self, (f, d): (usize, usize)) -> &f64 {
        &self.data[f * self.dims + d]
    }
}

impl IndexMut<(usize, usize)> for Latent {
    fn index_mut(&mut self, (f, d): (usize, usize)) -> &mut f64 {
        &mut self.data[f * self.dims + d]
    }
}

fn check_shape(frames: usize, dims: usize) -> Result<()> {
    if frames < 1 || dims < 2 {
        return Err(Error::Shape(format!("latent needs frames >= 1 and dims >= 2, got {frames}x{dims}")));
    }
    Ok(())
}

/// Draws the initial noise latent `Z_0 ~ N(0, I)`.
pub fn init_latent(shape: (usize, usize), seed: Seed) -> Result<Latent> {
    let (frames, dims) = shape;
    check_shape(frames, dims)?;
    let mut stream = NormalStream::new(seed);
    let data = (0..frames * dims).map(|_| stream.next_normal()).collect();
    Latent::from_vec(frames, dims, data)
}
