//! Bloch Hamiltonian of the two-band spin-orbit lattice model.
//!
//! The momentum-space block is `h(k)·σ` with
//!
//! ```text
//! h1 = 2 t1x cos kx
//! h2 = 2 t1y cos ky
//! h3 = m + 2 t2 cos(kx + ky) + (3/2) t3 (sin kx + sin ky) + eta cos(2 kx)
//! ```
//!
//! `eta` is the third-nearest-neighbour perturbation along x; `eta = 0` is the
//! unperturbed model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub m: f64,
    pub t1x: f64,
    pub t1y: f64,
    pub t2: f64,
    pub t3: f64,
    #[serde(default)]
    pub eta: f64,
}

impl CouplingParams {
    /// Fixed couplings of the studied parameter window: `t1x = t1y = 1`, `t2 = 5`.
    pub fn reference(m: f64, t3: f64) -> Self {
        CouplingParams {
            m,
            t1x: 1.0,
            t1y: 1.0,
            t2: 5.0,
            t3,
            eta: 0.0,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_t1y(mut self, t1y: f64) -> Self {
        self.t1y = t1y;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.m, self.t1x, self.t1y, self.t2, self.t3, self.eta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite coupling in {self:?}")));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidParameter(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// A point of the first Brillouin zone, both components in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Momentum {
    pub kx: f64,
    pub ky: f64,
}

impl Momentum {
    /// Wraps arbitrary components into the half-open zone.
    pub fn new(kx: f64, ky: f64) -> Self {
        Momentum {
            kx: wrap_to_zone(kx),
            ky: wrap_to_zone(ky),
        }
    }
}

pub(crate) fn wrap_to_zone(k: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = (k + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can round up to exactly 2π
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl BlochVector {
    pub fn dot(&self, o: &BlochVector) -> f64 {
        self.h1 * o.h1 + self.h2 * o.h2 + self.h3 * o.h3
    }

    pub fn cross(&self, o: &BlochVector) -> BlochVector {
        BlochVector {
            h1: self.h2 * o.h3 - self.h3 * o.h2,
            h2: self.h3 * o.h1 - self.h1 * o.h3,
            h3: self.h1 * o.h2 - self.h2 * o.h1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BandEnergy(pub f64);

impl BandEnergy {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Evaluates `h(k)` without wrapping `k`; the map is 2π-periodic anyway.
pub fn bloch_vector(p: &CouplingParams, k: Momentum) -> BlochVector {
    bloch_at(p, k.kx, k.ky)
}

#[inline]
pub(crate) fn bloch_at(p: &CouplingParams, kx: f64, ky: f64) -> BlochVector {
    BlochVector {
        h1: 2.0 * p.t1x * kx.cos(),
        h2: 2.0 * p.t1y * ky.cos(),
        h3: p.m + 2.0 * p.t2 * (kx + ky).cos() + 1.5 * p.t3 * (kx.sin() + ky.sin()) + p.eta * (2.0 * kx).cos(),
    }
}

/// Closed-form `(∂h/∂kx, ∂h/∂ky)`.
pub fn bloch_derivatives(p: &CouplingParams, k: Momentum) -> (BlochVector, BlochVector) {
    let (kx, ky) = (k.kx, k.ky);
    let s = (kx + ky).sin();
    let dx = BlochVector {
        h1: -2.0 * p.t1x * kx.sin(),
        h2: 0.0,
        h3: -2.0 * p.t2 * s + 1.5 * p.t3 * kx.cos() - 2.0 * p.eta * (2.0 * kx).sin(),
    };
    let dy = BlochVector {
        h1: 0.0,
        h2: -2.0 * p.t1y * ky.sin(),
        h3: -2.0 * p.t2 * s + 1.5 * p.t3 * ky.cos(),
    };
    (dx, dy)
}

pub fn band_energy(h: &BlochVector) -> BandEnergy {
    BandEnergy(h.dot(h).sqrt())
}

/// The four momenta `(±π/2, ±π/2)` where `h1 = h2 = 0` for nonzero `t1x`, `t1y`.
pub fn dirac_momenta() -> [Momentum; 4] {
    let q = PI / 2.0;
    [
        Momentum { kx: -q, ky: -q },
        Momentum { kx: -q, ky: q },
        Momentum { kx: q, ky: -q },
        Momentum { kx: q, ky: q },
    ]
}

/// Critical `t3` values at which `h3` vanishes at a Dirac momentum.
///
/// The `t3` field of `p` is ignored. Points where `sin kx + sin ky = 0` do not
/// depend on `t3` and contribute nothing. The result is sorted and deduplicated.
pub fn analytic_gap_boundary(p: &CouplingParams) -> Result<Vec<f64>> {
    if p.t1x == 0.0 || p.t1y == 0.0 {
        return Err(Error::InvalidParameter(
            "Dirac momenta are isolated only for nonzero t1x and t1y".into(),
        ));
    }
    let mut roots = Vec::new();
    for sx in [-1.0f64, 1.0] {
        for sy in [-1.0f64, 1.0] {
            let sin_sum = sx + sy;
            if sin_sum == 0.0 {
                continue;
            }
            // cos(kx + ky) = -1 on the diagonal Dirac points, cos(2kx) = -1 always
            let cos_sum = -1.0;
            let t3_free = p.m + 2.0 * p.t2 * cos_sum - p.eta;
            roots.push(-t3_free / (1.5 * sin_sum));
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    Ok(roots)
}

/// `h3` at the off-diagonal Dirac points, where it is independent of `t3`.
/// The gap closes for every `t3` when this vanishes.
pub fn offdiagonal_dirac_mass(p: &CouplingParams) -> f64 {
    p.m + 2.0 * p.t2 - p.eta
}
