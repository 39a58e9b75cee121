//! Measurement noise models.
//!
//! Momentum images get optional shot noise on the squared amplitudes followed
//! by additive white Gaussian noise. Position images are formed from the
//! amplitudes blurred by a Gaussian point-spread function, then shot noise.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::walk::{position_profile, DensityProfile, Domain, SpinorField};

pub const DEFAULT_GAUSSIAN_SIGMA: f64 = 0.02;
pub const DEFAULT_PSF_SIGMA: f64 = 2.0;
pub const DEFAULT_SHOTS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    pub psf_sigma: f64,
    pub shots: u64,
    /// Per-channel Gaussian sigma for momentum images, overriding `gaussian_sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_sigma: Option<[f64; 4]>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            gaussian_sigma: DEFAULT_GAUSSIAN_SIGMA,
            psf_sigma: DEFAULT_PSF_SIGMA,
            shots: DEFAULT_SHOTS,
            channel_sigma: None,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            gaussian_sigma: 0.0,
            psf_sigma: 0.0,
            shots: 0,
            channel_sigma: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = self.channel_sigma.unwrap_or([0.0; 4]);
        if !(self.gaussian_sigma >= 0.0 && self.psf_sigma >= 0.0) || sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative noise level in {self:?}")));
        }
        Ok(())
    }

    fn sigma_for(&self, channel: usize) -> f64 {
        self.channel_sigma.map_or(self.gaussian_sigma, |s| s[channel])
    }
}

fn poisson_fraction<R: Rng>(rng: &mut R, shots: u64, p: f64) -> f64 {
    let lambda = shots as f64 * p.max(0.0);
    if lambda <= 0.0 {
        return 0.0;
    }
    let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
    draw / shots as f64
}

pub fn add_momentum_noise(prof: &DensityProfile, spec: &NoiseSpec, seed: u64) -> Result<DensityProfile> {
    prof.expect(Domain::Momentum)?;
    spec.validate()?;
    let mut out = prof.clone();
    let mut rng = rng::seeded(seed);
    if spec.shots > 0 {
        for c in 0..2 {
            for v in out.plane_mut(c) {
                let p = f64::from(*v).powi(2);
                *v = poisson_fraction(&mut rng, spec.shots, p).sqrt() as f32;
            }
        }
    }
    for c in 0..out.channels {
        let sigma = spec.sigma_for(c.min(3));
        let limit = if c < 2 { (0.0, 1.5) } else { (-1.5, 1.5) };
        let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap());
        for v in out.plane_mut(c) {
            let mut x = f64::from(*v);
            if let Some(n) = &normal {
                x += n.sample(&mut rng);
            }
            *v = x.clamp(limit.0, limit.1) as f32;
        }
    }
    Ok(out)
}

/// Normalized 1D Gaussian taps on `[-r, r]`, `r = ceil(4σ)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Circular separable convolution of an `l × l` complex grid.
fn blur(grid: &[Complex64], l: usize, taps: &[f64]) -> Vec<Complex64> {
    let r = (taps.len() / 2) as i64;
    let li = l as i64;
    let mut tmp = vec![Complex64::default(); l * l];
    for y in 0..l {
        for x in 0..l {
            let mut acc = Complex64::default();
            for (t, w) in taps.iter().enumerate() {
                let xs = (x as i64 + t as i64 - r).rem_euclid(li) as usize;
                acc += grid[y * l + xs] * *w;
            }
            tmp[y * l + x] = acc;
        }
    }
    let mut out = vec![Complex64::default(); l * l];
    for y in 0..l {
        for x in 0..l {
            let mut acc = Complex64::default();
            for (t, w) in taps.iter().enumerate() {
                let ys = (y as i64 + t as i64 - r).rem_euclid(li) as usize;
                acc += tmp[ys * l + x] * *w;
            }
            out[y * l + x] = acc;
        }
    }
    out
}

pub fn add_position_noise(field: &SpinorField, spec: &NoiseSpec, seed: u64) -> Result<DensityProfile> {
    field.expect(Domain::Position)?;
    spec.validate()?;
    let l = field.lattice.side();
    let taps = gaussian_taps(spec.psf_sigma);
    let (up, down) = if taps.len() == 1 {
        (field.up.clone(), field.down.clone())
    } else {
        (blur(&field.up, l, &taps), blur(&field.down, l, &taps))
    };
    let mut probs: Vec<f64> = up.iter().zip(&down).map(|(u, d)| u.norm_sqr() + d.norm_sqr()).collect();
    if spec.shots > 0 {
        let mut rng = rng::seeded(seed);
        for p in probs.iter_mut() {
            *p = poisson_fraction(&mut rng, spec.shots, *p);
        }
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    let mut prof = position_profile(field)?;
    prof.data = probs.into_iter().map(|p| p as f32).collect();
    Ok(prof)
}
