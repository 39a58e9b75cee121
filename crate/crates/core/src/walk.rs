//! Continuous-time quantum walk of a spin-up particle started on the centre
//! site, evolved in closed form per momentum mode and transformed to
//! position space.
//!
//! Both domains store an `l × l` grid in centred order: flat index
//! `iy * l + ix`, with integer coordinate `q = index - (l - 1) / 2` on each
//! axis. In position space `q` is the site offset from the centre; in
//! momentum space the mode is `k = 2π q / l`, so `k = 0` sits at the image
//! centre.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{band_energy, bloch_at, CouplingParams};

/// Modes with `E_k` below this use the exact `E → 0` limit.
pub const ENERGY_EPSILON: f64 = 1e-12;
/// Amplitudes below this have no defined phase.
pub const AMPLITUDE_EPSILON: f64 = 1e-12;
/// Fraction of probability mass that defines the occupied square.
pub const OCCUPANCY_MASS: f64 = 0.99;
/// Relative bracket width at which the time search stops.
pub const TIME_TOLERANCE: f64 = 1e-3;
const VELOCITY_GRID: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    l: usize,
}

impl Lattice {
    pub fn new(l: usize) -> Result<Self> {
        if l < 9 || l.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "lattice side must be odd and >= 9, got {l}"
            )));
        }
        Ok(Lattice { l })
    }

    pub fn side(&self) -> usize {
        self.l
    }

    pub fn centre(&self) -> usize {
        (self.l - 1) / 2
    }

    pub fn sites(&self) -> usize {
        self.l * self.l
    }

    /// Momentum of centred index `i`.
    #[inline]
    pub fn momentum(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * (i as f64 - self.centre() as f64) / self.l as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Momentum,
    Position,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Momentum => "momentum",
            Domain::Position => "position",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Domain::Momentum => 4,
            Domain::Position => 1,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Domain::Momentum => 0,
            Domain::Position => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Domain::Momentum),
            1 => Some(Domain::Position),
            _ => None,
        }
    }
}

/// Two-component amplitudes over the lattice, normalized so the whole state has
/// unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub domain: Domain,
    pub lattice: Lattice,
    pub up: Vec<Complex64>,
    pub down: Vec<Complex64>,
    pub time: f64,
    pub params: CouplingParams,
}

impl SpinorField {
    pub fn norm_sqr(&self) -> f64 {
        self.up
            .iter()
            .zip(&self.down)
            .map(|(u, d)| u.norm_sqr() + d.norm_sqr())
            .sum()
    }

    pub(crate) fn expect(&self, domain: Domain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::DomainMismatch {
                expected: domain.name(),
                found: self.domain.name(),
            });
        }
        Ok(())
    }
}

/// Per-mode amplitudes `exp(-i (h·σ) t) |↑⟩` with unit norm.
#[inline]
pub fn mode_amplitudes(p: &CouplingParams, kx: f64, ky: f64, t: f64) -> (Complex64, Complex64) {
    let h = bloch_at(p, kx, ky);
    let e = band_energy(&h).value();
    if e < ENERGY_EPSILON {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    let (s, c) = (e * t).sin_cos();
    let s = s / e;
    // -i (h1 + i h2) sin(Et)/E = h2 sin/E - i h1 sin/E
    (Complex64::new(c, -h.h3 * s), Complex64::new(h.h2 * s, -h.h1 * s))
}

pub fn evolve_momentum(p: &CouplingParams, lat: Lattice, t: f64) -> Result<SpinorField> {
    p.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("evolution time must be >= 0, got {t}")));
    }
    let l = lat.side();
    let scale = 1.0 / l as f64;
    let mut up = vec![Complex64::default(); l * l];
    let mut down = vec![Complex64::default(); l * l];
    up.par_chunks_mut(l)
        .zip(down.par_chunks_mut(l))
        .enumerate()
        .for_each(|(iy, (urow, drow))| {
            let ky = lat.momentum(iy);
            for ix in 0..l {
                let (a, b) = mode_amplitudes(p, lat.momentum(ix), ky, t);
                urow[ix] = a * scale;
                drow[ix] = b * scale;
            }
        });
    Ok(SpinorField {
        domain: Domain::Momentum,
        lattice: lat,
        up,
        down,
        time: t,
        params: *p,
    })
}

/// Unitary 2D DFT on centred-order grids.
struct CentredFft2 {
    l: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl CentredFft2 {
    fn new(l: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let fft = if inverse {
            planner.plan_fft_inverse(l)
        } else {
            planner.plan_fft_forward(l)
        };
        CentredFft2 { l, fft }
    }

    fn apply(&self, data: &[Complex64]) -> Vec<Complex64> {
        let l = self.l;
        let c = (l - 1) / 2;
        // undo the centring: centred index i holds DFT index (i - c) mod l
        let mut buf = vec![Complex64::default(); l * l];
        for iy in 0..l {
            let ry = (iy + l - c) % l;
            for ix in 0..l {
                let rx = (ix + l - c) % l;
                buf[ry * l + rx] = data[iy * l + ix];
            }
        }
        buf.par_chunks_mut(l).for_each_init(
            || vec![Complex64::default(); self.fft.get_inplace_scratch_len()],
            |scratch, row| self.fft.process_with_scratch(row, scratch),
        );
        let mut cols = transpose(&buf, l);
        cols.par_chunks_mut(l).for_each_init(
            || vec![Complex64::default(); self.fft.get_inplace_scratch_len()],
            |scratch, col| self.fft.process_with_scratch(col, scratch),
        );
        let raw = transpose(&cols, l);
        let scale = 1.0 / l as f64;
        let mut out = vec![Complex64::default(); l * l];
        for ry in 0..l {
            let iy = (ry + c) % l;
            for rx in 0..l {
                let ix = (rx + c) % l;
                out[iy * l + ix] = raw[ry * l + rx] * scale;
            }
        }
        out
    }
}

fn transpose(a: &[Complex64], l: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::default(); l * l];
    for i in 0..l {
        for j in 0..l {
            t[j * l + i] = a[i * l + j];
        }
    }
    t
}

/// Position amplitudes `ψ(x) = (1/l) Σ_k a(k) e^{i k·x}` for each spin component.
pub fn to_position(f: &SpinorField) -> Result<SpinorField> {
    f.expect(Domain::Momentum)?;
    let fft = CentredFft2::new(f.lattice.side(), true);
    Ok(SpinorField {
        domain: Domain::Position,
        up: fft.apply(&f.up),
        down: fft.apply(&f.down),
        ..f.clone()
    })
}

pub fn to_momentum(f: &SpinorField) -> Result<SpinorField> {
    f.expect(Domain::Position)?;
    let fft = CentredFft2::new(f.lattice.side(), false);
    Ok(SpinorField {
        domain: Domain::Momentum,
        up: fft.apply(&f.up),
        down: fft.apply(&f.down),
        ..f.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub params: CouplingParams,
    pub time: f64,
    pub seed: u64,
}

/// Channel-planar real image: `data[(c * height + row) * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub domain: Domain,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub label: Option<i32>,
    pub meta: ProfileMeta,
}

impl DensityProfile {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn expect(&self, domain: Domain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::DomainMismatch {
                expected: domain.name(),
                found: self.domain.name(),
            });
        }
        Ok(())
    }
}

/// Channels `(|α↑|, |α↓|, cos Δφ, sin Δφ)` with `Δφ = arg α↓ − arg α↑`.
///
/// Amplitudes are per mode (the global `1/l` is removed), so they lie in `[0, 1]`.
pub fn momentum_profile(f: &SpinorField) -> Result<DensityProfile> {
    f.expect(Domain::Momentum)?;
    let l = f.lattice.side();
    let n = l * l;
    let mut data = vec![0f32; 4 * n];
    let scale = l as f64;
    for i in 0..n {
        let a = f.up[i] * scale;
        let b = f.down[i] * scale;
        let (ra, rb) = (a.norm(), b.norm());
        data[i] = ra as f32;
        data[n + i] = rb as f32;
        if ra >= AMPLITUDE_EPSILON && rb >= AMPLITUDE_EPSILON {
            let rel = b * a.conj() / (ra * rb);
            data[2 * n + i] = rel.re as f32;
            data[3 * n + i] = rel.im as f32;
        }
    }
    Ok(DensityProfile {
        domain: Domain::Momentum,
        width: l,
        height: l,
        channels: 4,
        data,
        label: None,
        meta: ProfileMeta {
            params: f.params,
            time: f.time,
            seed: 0,
        },
    })
}

/// Spin-marginal probability `|ψ↑|² + |ψ↓|²` per site.
pub fn position_profile(f: &SpinorField) -> Result<DensityProfile> {
    f.expect(Domain::Position)?;
    let l = f.lattice.side();
    let data = position_probabilities(f).into_iter().map(|p| p as f32).collect();
    Ok(DensityProfile {
        domain: Domain::Position,
        width: l,
        height: l,
        channels: 1,
        data,
        label: None,
        meta: ProfileMeta {
            params: f.params,
            time: f.time,
            seed: 0,
        },
    })
}

pub(crate) fn position_probabilities(f: &SpinorField) -> Vec<f64> {
    f.up.iter()
        .zip(&f.down)
        .map(|(u, d)| u.norm_sqr() + d.norm_sqr())
        .collect()
}

/// Side of the smallest centred square holding [`OCCUPANCY_MASS`] of `probs`,
/// linearly interpolated between consecutive odd sides.
pub fn occupied_side(probs: &[f64], lat: Lattice) -> f64 {
    let l = lat.side();
    let c = lat.centre();
    let mut shell = vec![0.0; c + 1];
    for iy in 0..l {
        let dy = iy.abs_diff(c);
        for ix in 0..l {
            let d = dy.max(ix.abs_diff(c));
            shell[d] += probs[iy * l + ix];
        }
    }
    let total: f64 = shell.iter().sum();
    let target = OCCUPANCY_MASS * total;
    let mut cum = 0.0;
    for (r, &s) in shell.iter().enumerate() {
        let prev = cum;
        cum += s;
        if cum >= target {
            if r == 0 {
                return 1.0;
            }
            let frac = if s > 0.0 { (target - prev) / s } else { 1.0 };
            return 2.0 * ((r - 1) as f64 + frac) + 1.0;
        }
    }
    l as f64
}

/// Largest group velocity `|∇k E|` over a 128×128 zone mesh, by central differences.
pub fn max_group_velocity(p: &CouplingParams) -> f64 {
    let n = VELOCITY_GRID;
    let dk = 2.0 * std::f64::consts::PI / n as f64;
    let e = |kx: f64, ky: f64| band_energy(&bloch_at(p, kx, ky)).value();
    let mut vmax: f64 = 0.0;
    for i in 0..n {
        let kx = -std::f64::consts::PI + dk * i as f64;
        for j in 0..n {
            let ky = -std::f64::consts::PI + dk * j as f64;
            let gx = (e(kx + dk, ky) - e(kx - dk, ky)) / (2.0 * dk);
            let gy = (e(kx, ky + dk) - e(kx, ky - dk)) / (2.0 * dk);
            vmax = vmax.max((gx * gx + gy * gy).sqrt());
        }
    }
    vmax
}

fn side_at(p: &CouplingParams, lat: Lattice, t: f64) -> Result<f64> {
    let field = to_position(&evolve_momentum(p, lat, t)?)?;
    Ok(occupied_side(&position_probabilities(&field), lat))
}

/// Smallest evolution time at which the walker occupies `fill` of the lattice
/// area, measured by [`occupied_side`].
///
/// Doubling from `1/v` brackets the crossing and bisection refines it to
/// [`TIME_TOLERANCE`]; the search never exceeds `10 l / v`.
pub fn choose_time(p: &CouplingParams, lat: Lattice, fill: f64) -> Result<f64> {
    if !(fill > 0.0 && fill < 1.0) {
        return Err(Error::InvalidParameter(format!("fill must be in (0,1), got {fill}")));
    }
    p.validate()?;
    let v = max_group_velocity(p);
    if v < 1e-9 {
        return Err(Error::DegenerateDynamics { velocity: v });
    }
    let target = fill.sqrt() * lat.side() as f64;
    if target <= 1.0 {
        return Ok(0.0);
    }
    let t_max = 10.0 * lat.side() as f64 / v;
    let mut lo = 0.0;
    let mut hi = (1.0 / v).min(t_max);
    loop {
        if side_at(p, lat, hi)? >= target {
            break;
        }
        if hi >= t_max {
            return Ok(t_max);
        }
        lo = hi;
        hi = (hi * 2.0).min(t_max);
    }
    while hi - lo > TIME_TOLERANCE * hi {
        let mid = 0.5 * (lo + hi);
        if side_at(p, lat, mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
