//! Kohonen self-organizing map.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rng;

pub const SOM_MAGIC: &[u8; 8] = b"QWSOM001";

#[derive(Debug, Clone, PartialEq)]
pub struct SomState {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// `height × width × dim`, row-major.
    pub codebook: Vec<f64>,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub radius0: f64,
    pub iters_total: usize,
}

impl SomState {
    /// Desk-scale defaults: 64 × 64 grid, radius 32, lr 0.4 decayed by 0.9
    /// every 100 iterations. The codebook starts at zero; see [`SomState::initialize`].
    pub fn new(height: usize, width: usize, dim: usize, iters_total: usize) -> Result<Self> {
        let s = SomState {
            height,
            width,
            dim,
            codebook: vec![0.0; height * width * dim],
            lr0: 0.4,
            decay: 0.9,
            decay_every: 100,
            radius0: (height.max(width) / 2).max(1) as f64,
            iters_total,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 || self.decay_every == 0 {
            return Err(Error::InvalidParameter("SOM dimensions must be positive".into()));
        }
        if self.codebook.len() != self.height * self.width * self.dim {
            return Err(Error::DimMismatch {
                expected: self.height * self.width * self.dim,
                found: self.codebook.len(),
            });
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "SOM decay {} outside (0, 1]",
                self.decay
            )));
        }
        if !(self.radius0 > 0.0 && self.radius0 <= self.height.max(self.width) as f64) {
            return Err(Error::InvalidParameter(format!(
                "SOM radius {} outside (0, max side]",
                self.radius0
            )));
        }
        if !(self.lr0 >= 0.0) || self.codebook.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "SOM learning rate or codebook not finite".into(),
            ));
        }
        Ok(())
    }

    /// Neighbourhood time constant `iters_total / ln(radius0)`.
    pub fn time_constant(&self) -> f64 {
        self.iters_total as f64 / self.radius0.ln()
    }

    pub fn radius_at(&self, it: usize) -> f64 {
        let tau = self.time_constant();
        if tau.is_finite() && tau > 0.0 {
            self.radius0 * (-(it as f64) / tau).exp()
        } else {
            self.radius0
        }
    }

    pub fn lr_at(&self, it: usize) -> f64 {
        self.lr0 * self.decay.powi((it / self.decay_every) as i32)
    }

    pub fn unit(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.dim;
        &self.codebook[i..i + self.dim]
    }

    /// Fills the codebook uniformly inside the per-dimension range of `features`.
    pub fn initialize(&mut self, features: &[Vec<f64>], seed: u64) -> Result<()> {
        check_features(features, self.dim)?;
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for f in features {
            for (j, v) in f.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        let mut r = rng::seeded(seed);
        for unit in self.codebook.chunks_mut(self.dim) {
            for (j, w) in unit.iter_mut().enumerate() {
                *w = if hi[j] > lo[j] {
                    r.random_range(lo[j]..hi[j])
                } else {
                    lo[j]
                };
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(SOM_MAGIC);
        w.u32(self.height);
        w.u32(self.width);
        w.u32(self.dim);
        w.u64(self.iters_total as u64);
        w.u32(self.decay_every);
        w.f64(self.lr0);
        w.f64(self.decay);
        w.f64(self.radius0);
        w.f64s(&self.codebook);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, SOM_MAGIC, context)?;
        let s = SomState {
            height: r.u32()?,
            width: r.u32()?,
            dim: r.u32()?,
            iters_total: r.u64()? as usize,
            decay_every: r.u32()?,
            lr0: r.f64()?,
            decay: r.f64()?,
            radius0: r.f64()?,
            codebook: r.f64s()?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn check_features(features: &[Vec<f64>], dim: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no SOM features".into()));
    }
    match features.iter().find(|f| f.len() != dim) {
        Some(f) => Err(Error::DimMismatch {
            expected: dim,
            found: f.len(),
        }),
        None => Ok(()),
    }
}

fn bmu(state: &SomState, feature: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, unit) in state.codebook.chunks(state.dim).enumerate() {
        let d: f64 = unit.iter().zip(feature).map(|(w, x)| (w - x) * (w - x)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Best-matching unit `(row, col)`; ties go to the lowest flat index.
pub fn som_assign(state: &SomState, feature: &[f64]) -> Result<(usize, usize)> {
    if feature.len() != state.dim {
        return Err(Error::DimMismatch {
            expected: state.dim,
            found: feature.len(),
        });
    }
    let i = bmu(state, feature);
    Ok((i / state.width, i % state.width))
}

/// Online training for `iters_total` steps, cycling through the features in
/// an order shuffled once by `seed`.
pub fn som_fit(features: &[Vec<f64>], state: &SomState, seed: u64) -> Result<SomState> {
    state.validate()?;
    let mut s = state.clone();
    if s.iters_total == 0 {
        return Ok(s);
    }
    check_features(features, s.dim)?;
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let (w, dim) = (s.width, s.dim);
    for it in 0..s.iters_total {
        let x = &features[order[it % order.len()]];
        let b = bmu(&s, x);
        let (br, bc) = ((b / w) as f64, (b % w) as f64);
        let lr = s.lr_at(it);
        let r = s.radius_at(it);
        let inv = 1.0 / (2.0 * r * r);
        for (i, unit) in s.codebook.chunks_mut(dim).enumerate() {
            let (dr, dc) = ((i / w) as f64 - br, (i % w) as f64 - bc);
            let h = lr * (-(dr * dr + dc * dc) * inv).exp();
            if h == 0.0 {
                continue;
            }
            for (u, v) in unit.iter_mut().zip(x) {
                *u += h * (v - *u);
            }
        }
    }
    Ok(s)
}
