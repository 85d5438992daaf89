//! Noise distributions: standard normal translations, IGSO(3) and uniform
//! rotations, and the seeded random stream they draw from.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameTransform;
use crate::quat::{exp_map, AxisAngle, Quaternion, UnitQuaternion, Vec3};

/// Seeded ChaCha8 stream. `(seed, stream)` fully determines the sequence,
/// independent of platform; distinct streams never overlap.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on another stream of the same seed.
    pub fn split(&self, stream: u64) -> Self {
        Self::with_stream(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IgsoConfig {
    pub epsilon: f64,
    pub series_terms: usize,
    pub grid_size: usize,
}

impl Default for IgsoConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.5,
            series_terms: 2000,
            grid_size: 8192,
        }
    }
}

impl IgsoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "igso3.epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.series_terms < 1 {
            return Err(Error::InvalidConfig("igso3.series_terms must be at least 1".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("igso3.grid_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Angle marginal of the uniform distribution on SO(3).
pub fn uniform_angle_density(phi: f64) -> f64 {
    (1.0 - phi.cos()) / PI
}

/// Angle density of IGSO(3):
/// `(1 - cos phi)/pi * sum_l (2l+1) exp(-l(l+1) eps^2) sin((l+1/2) phi) / sin(phi/2)`.
pub fn igso3_angle_density(phi: f64, cfg: &IgsoConfig) -> Result<f64> {
    if !(0.0..=PI).contains(&phi) {
        return Err(Error::AngleOutOfRange(phi));
    }
    Ok(density_unchecked(phi, cfg))
}

fn density_unchecked(phi: f64, cfg: &IgsoConfig) -> f64 {
    let eps2 = cfg.epsilon * cfg.epsilon;
    let half_sin = (0.5 * phi).sin();
    let mut sum = 0.0;
    for l in 0..cfg.series_terms {
        let lf = l as f64;
        let weight = (-lf * (lf + 1.0) * eps2).exp();
        if weight == 0.0 {
            break;
        }
        let ratio = if half_sin < 1e-12 {
            2.0 * lf + 1.0
        } else {
            ((lf + 0.5) * phi).sin() / half_sin
        };
        sum += (2.0 * lf + 1.0) * weight * ratio;
    }
    ((1.0 - phi.cos()) / PI * sum).max(0.0)
}

/// IGSO(3) sampler backed by a cumulative table of the angle density.
#[derive(Clone, Debug)]
pub struct Igso3 {
    cfg: IgsoConfig,
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl Igso3 {
    pub fn new(cfg: IgsoConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid_size;
        let step = PI / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let density: Vec<f64> = grid.iter().map(|&p| density_unchecked(p, &cfg)).collect();
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        for i in 1..n {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * step * (density[i - 1] + density[i]));
        }
        let total = cdf[n - 1];
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self { cfg, grid, cdf })
    }

    pub fn config(&self) -> &IgsoConfig {
        &self.cfg
    }

    pub fn cdf_table(&self) -> (&[f64], &[f64]) {
        (&self.grid, &self.cdf)
    }

    /// Angle whose tabulated CDF equals `u`, by linear interpolation.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c <= u);
        if i == 0 {
            return 0.0;
        }
        if i >= self.cdf.len() {
            return PI;
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (p0, p1) = (self.grid[i - 1], self.grid[i]);
        if c1 > c0 {
            p0 + (u - c0) / (c1 - c0) * (p1 - p0)
        } else {
            p0
        }
    }

    pub fn sample_angle(&self, rng: &mut RngState) -> f64 {
        self.inverse_cdf(rng.uniform())
    }

    pub fn sample(&self, rng: &mut RngState) -> UnitQuaternion {
        let axis = sample_axis(rng);
        let phi = self.sample_angle(rng);
        exp_map(&AxisAngle::new(axis * phi))
    }
}

pub fn sample_igso3(sampler: &Igso3, rng: &mut RngState) -> UnitQuaternion {
    sampler.sample(rng)
}

/// Uniform direction on S².
pub fn sample_axis(rng: &mut RngState) -> Vec3 {
    loop {
        let v = sample_gaussian_r3(rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn sample_uniform_so3(rng: &mut RngState) -> UnitQuaternion {
    loop {
        let q = Quaternion::new(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if let Some(u) = UnitQuaternion::normalize(q) {
            return u;
        }
    }
}

pub fn sample_gaussian_r3(rng: &mut RngState) -> Vec3 {
    Vec3::new(rng.normal(), rng.normal(), rng.normal())
}

/// Noise frame: standard normal translation, then an IGSO(3) rotation.
pub fn sample_noise_frame(prior: &Igso3, rng: &mut RngState) -> FrameTransform {
    let x = sample_gaussian_r3(rng);
    FrameTransform::new(x, prior.sample(rng))
}
