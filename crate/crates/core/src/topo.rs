//! Chern-number evaluation and phase diagrams.
//!
//! Two independent evaluators are provided: a midpoint quadrature of the
//! skyrmion density `ĥ·(∂x ĥ × ∂y ĥ) / 4π` using the closed-form derivatives of
//! `h`, and the lattice link-variable (plaquette-flux) method on the lower
//! band, which is integer-valued by construction and labels everything else.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{band_energy, bloch_at, bloch_derivatives, dirac_momenta, CouplingParams, Momentum};

/// Band gaps below this are treated as closed.
pub const GAP_THRESHOLD: f64 = 1e-9;
/// Label used for phase-diagram cells that sit on a transition.
pub const GAPLESS_LABEL: i32 = -99;
pub const DEFAULT_LABEL_GRID: usize = 256;
pub const DEFAULT_QUADRATURE_GRID: usize = 400;

const LINK_INTEGER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BzGrid {
    n: usize,
}

impl BzGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidParameter(format!(
                "Brillouin-zone grid needs n >= 8, got {n}"
            )));
        }
        Ok(BzGrid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    #[inline]
    pub fn k(&self, j: usize) -> f64 {
        -PI + 2.0 * PI * j as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChernMethod {
    Link,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernResult {
    pub value: i32,
    pub raw: f64,
    pub method: ChernMethod,
    /// Smallest band energy `E_k` seen on the mesh and at the Dirac momenta.
    pub min_gap: f64,
}

/// Smallest `|h|` over the mesh and the four Dirac momenta.
pub fn min_band_energy(p: &CouplingParams, grid: BzGrid) -> f64 {
    let mut min = dirac_momenta()
        .iter()
        .map(|&k| band_energy(&bloch_at(p, k.kx, k.ky)).value())
        .fold(f64::INFINITY, f64::min);
    for i in 0..grid.n {
        let kx = grid.k(i);
        for j in 0..grid.n {
            let e = band_energy(&bloch_at(p, kx, grid.k(j))).value();
            if e < min {
                min = e;
            }
        }
    }
    min
}

fn ensure_gapped(p: &CouplingParams, grid: BzGrid) -> Result<f64> {
    p.validate()?;
    let min_gap = min_band_energy(p, grid);
    if !(min_gap > GAP_THRESHOLD) {
        return Err(Error::GaplessSystem { min_gap });
    }
    Ok(min_gap)
}

pub fn chern_quadrature(p: &CouplingParams, grid: BzGrid) -> Result<ChernResult> {
    let min_gap = ensure_gapped(p, grid)?;
    let dk = grid.step();
    let mut acc = 0.0;
    for i in 0..grid.n {
        let kx = grid.k(i);
        let mut row = 0.0;
        for j in 0..grid.n {
            let k = Momentum { kx, ky: grid.k(j) };
            let h = bloch_at(p, k.kx, k.ky);
            let (dx, dy) = bloch_derivatives(p, k);
            let e = band_energy(&h).value();
            row += h.dot(&dx.cross(&dy)) / (e * e * e);
        }
        acc += row;
    }
    let raw = acc * dk * dk / (4.0 * PI);
    Ok(ChernResult {
        value: raw.round() as i32,
        raw,
        method: ChernMethod::Quadrature,
        min_gap,
    })
}

/// Normalized lower-band eigenvector of `h·σ`, in whichever of two gauges is
/// regular at this `h`.
#[inline]
fn lower_band_state(p: &CouplingParams, kx: f64, ky: f64) -> [Complex64; 2] {
    let h = bloch_at(p, kx, ky);
    let e = band_energy(&h).value();
    let (a, b) = if h.h3 <= 0.0 {
        // (h3 - E, h1 + i h2), regular away from the north pole
        (Complex64::new(h.h3 - e, 0.0), Complex64::new(h.h1, h.h2))
    } else {
        // (-(h1 - i h2), h3 + E), regular away from the south pole
        (Complex64::new(-h.h1, h.h2), Complex64::new(h.h3 + e, 0.0))
    };
    let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    [a / norm, b / norm]
}

#[inline]
fn overlap(u: &[Complex64; 2], v: &[Complex64; 2]) -> Complex64 {
    u[0].conj() * v[0] + u[1].conj() * v[1]
}

pub fn chern_link(p: &CouplingParams, grid: BzGrid) -> Result<ChernResult> {
    let min_gap = ensure_gapped(p, grid)?;
    let n = grid.n;
    let states: Vec<[Complex64; 2]> = (0..n * n)
        .map(|idx| lower_band_state(p, grid.k(idx / n), grid.k(idx % n)))
        .collect();
    let at = |i: usize, j: usize| &states[(i % n) * n + (j % n)];

    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let u00 = at(i, j);
            let u10 = at(i + 1, j);
            let u11 = at(i + 1, j + 1);
            let u01 = at(i, j + 1);
            let loop_product = overlap(u00, u10) * overlap(u10, u11) * overlap(u11, u01) * overlap(u01, u00);
            acc += loop_product.arg();
        }
    }
    // The plaquette flux of the lower band has the opposite orientation to the
    // skyrmion density of ĥ; negate so both evaluators share one convention.
    let raw = -acc / (2.0 * PI);
    let value = raw.round();
    if (raw - value).abs() > LINK_INTEGER_TOLERANCE {
        return Err(Error::NonConvergent { raw });
    }
    Ok(ChernResult {
        value: value as i32,
        raw,
        method: ChernMethod::Link,
        min_gap,
    })
}

/// Link-variable label, with gapless points mapped to [`GAPLESS_LABEL`].
pub fn chern_label(p: &CouplingParams, grid: BzGrid) -> i32 {
    match chern_link(p, grid) {
        Ok(r) => r.value,
        Err(_) => GAPLESS_LABEL,
    }
}

/// Chern number from the masses at the four Dirac momenta,
/// `C = ½ Σ_D χ_D sign(h3(D))` with chirality `χ_D = sign(t1x t1y sin kx sin ky)`.
///
/// Exact for gapped systems with `t1x, t1y ≠ 0`, where `h1 = h2 = 0` only at
/// those momenta. Returns `None` if the gap is closed at a Dirac momentum.
pub fn dirac_mass_chern(p: &CouplingParams) -> Option<i32> {
    if p.t1x == 0.0 || p.t1y == 0.0 {
        return None;
    }
    let mut twice = 0;
    for k in dirac_momenta() {
        let h3 = bloch_at(p, k.kx, k.ky).h3;
        if h3.abs() <= GAP_THRESHOLD {
            return None;
        }
        let chirality = (p.t1x * p.t1y * k.kx.signum() * k.ky.signum()).signum() as i32;
        twice += chirality * h3.signum() as i32;
    }
    Some(twice / 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub m_axis: Vec<f64>,
    pub t3_axis: Vec<f64>,
    /// `labels[i][j]` is the label at `(m_axis[i], t3_axis[j])`.
    pub labels: Vec<Vec<i32>>,
    pub base: CouplingParams,
    pub grid_n: usize,
}

impl PhaseDiagram {
    pub fn params_at(&self, i: usize, j: usize) -> CouplingParams {
        CouplingParams {
            m: self.m_axis[i],
            t3: self.t3_axis[j],
            ..self.base
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("phase diagram serializes")
    }
}

/// Labels every `(m, t3)` cell with the link-variable Chern number.
///
/// Cells are evaluated in parallel; output order is fixed by cell index.
pub fn phase_diagram(base: &CouplingParams, m_axis: &[f64], t3_axis: &[f64], grid: BzGrid) -> Result<PhaseDiagram> {
    if m_axis.is_empty() || t3_axis.is_empty() {
        return Err(Error::EmptyInput("phase diagram axes".into()));
    }
    let sorted = |a: &[f64]| a.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(m_axis) || !sorted(t3_axis) {
        return Err(Error::InvalidParameter("phase diagram axes must be sorted".into()));
    }
    let cols = t3_axis.len();
    let flat: Vec<i32> = (0..m_axis.len() * cols)
        .into_par_iter()
        .map(|idx| {
            let p = CouplingParams {
                m: m_axis[idx / cols],
                t3: t3_axis[idx % cols],
                ..*base
            };
            chern_label(&p, grid)
        })
        .collect();
    Ok(PhaseDiagram {
        m_axis: m_axis.to_vec(),
        t3_axis: t3_axis.to_vec(),
        labels: flat.chunks(cols).map(|r| r.to_vec()).collect(),
        base: *base,
        grid_n: grid.n,
    })
}

/// `count` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// `count` equally spaced points on the half-open `[lo, hi)`.
pub fn linspace_half_open(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}
