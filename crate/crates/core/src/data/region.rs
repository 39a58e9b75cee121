use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{analytic_gap_boundary, CouplingParams};
use crate::rng;
use crate::topo::{chern_label, dirac_mass_chern, BzGrid, GAPLESS_LABEL};

/// Half-width in `t3` of the band around each analytic boundary root that
/// makes up the "transition" region.
pub const TRANSITION_HALF_WIDTH: f64 = 3.0;
pub const MAX_DRAWS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Whole,
    Transition,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    /// Half-open `[lo, hi)`.
    pub m_range: [f64; 2],
    /// Closed `[lo, hi]`.
    pub t3_range: [f64; 2],
    pub t1y_sign: i8,
    /// Minimum `t3` distance to an analytic boundary root; 0 disables.
    pub exclusion_margin: f64,
}

impl RegionSpec {
    pub fn whole() -> Self {
        RegionSpec {
            kind: RegionKind::Whole,
            m_range: [-20.0, 20.0],
            t3_range: [-20.0, 20.0],
            t1y_sign: 1,
            exclusion_margin: 0.0,
        }
    }

    pub fn transition() -> Self {
        RegionSpec {
            kind: RegionKind::Transition,
            ..Self::whole()
        }
    }

    pub fn with_t1y_sign(mut self, sign: i8) -> Self {
        self.t1y_sign = sign;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [mlo, mhi] = self.m_range;
        let [tlo, thi] = self.t3_range;
        if !(mlo < mhi) || !(tlo <= thi) {
            return Err(Error::InvalidParameter(format!("empty region ranges: {self:?}")));
        }
        if !(self.exclusion_margin >= 0.0) {
            return Err(Error::InvalidParameter("exclusion margin must be >= 0".into()));
        }
        if self.t1y_sign != 1 && self.t1y_sign != -1 {
            return Err(Error::InvalidParameter("t1y_sign must be +1 or -1".into()));
        }
        Ok(())
    }

    /// Whether a point passes the margin and region-kind filters.
    pub fn accepts(&self, p: &CouplingParams) -> bool {
        let roots = analytic_gap_boundary(p).unwrap_or_default();
        let nearest = roots.iter().map(|r| (p.t3 - r).abs()).fold(f64::INFINITY, f64::min);
        if nearest < self.exclusion_margin {
            return false;
        }
        match self.kind {
            RegionKind::Transition => nearest <= TRANSITION_HALF_WIDTH,
            RegionKind::Whole | RegionKind::Custom => true,
        }
    }
}

/// Rejection-samples `(m, t3)` uniformly over the region until every requested
/// class has its count. Labels come from the link-variable evaluator on `grid`;
/// the Dirac-mass formula is only used to skip draws whose class is not needed.
pub fn sample_parameters(
    region: &RegionSpec,
    counts_per_class: &BTreeMap<i32, usize>,
    base: &CouplingParams,
    grid: BzGrid,
    seed: u64,
) -> Result<Vec<(CouplingParams, i32)>> {
    region.validate()?;
    if counts_per_class.is_empty() || counts_per_class.values().any(|&c| c == 0) {
        return Err(Error::InvalidParameter("class counts must be positive".into()));
    }
    let mut remaining = counts_per_class.clone();
    let mut out = Vec::with_capacity(remaining.values().sum());
    let mut rng = rng::seeded(seed);
    let t1y = base.t1y.abs() * f64::from(region.t1y_sign);
    let [mlo, mhi] = region.m_range;
    let [tlo, thi] = region.t3_range;

    let mut draws = 0u64;
    while remaining.values().any(|&c| c > 0) {
        if draws >= MAX_DRAWS {
            let label = *remaining.iter().find(|(_, &c)| c > 0).unwrap().0;
            return Err(Error::ClassUnreachable { label, draws });
        }
        draws += 1;
        let m = rng.random_range(mlo..mhi);
        let t3 = if tlo == thi { tlo } else { rng.random_range(tlo..=thi) };
        let p = CouplingParams { m, t3, t1y, ..*base };
        if !region.accepts(&p) {
            continue;
        }
        let Some(hint) = dirac_mass_chern(&p) else { continue };
        if remaining.get(&hint).copied().unwrap_or(0) == 0 {
            continue;
        }
        let label = chern_label(&p, grid);
        if label == GAPLESS_LABEL {
            continue;
        }
        if let Some(c) = remaining.get_mut(&label) {
            if *c > 0 {
                *c -= 1;
                out.push((p, label));
            }
        }
    }
    Ok(out)
}

/// Like [`sample_parameters`], except that any `+2` request is drawn with the
/// opposite `t1y` sign to the region, the only way that class occurs.
pub fn sample_classes(
    region: &RegionSpec,
    counts_per_class: &BTreeMap<i32, usize>,
    base: &CouplingParams,
    grid: BzGrid,
    seed: u64,
) -> Result<Vec<(CouplingParams, i32)>> {
    let mut main = counts_per_class.clone();
    let flipped = main.remove(&2);
    let mut out = Vec::new();
    if !main.is_empty() {
        out = sample_parameters(region, &main, base, grid, rng::derive_seed(seed, 0))?;
    }
    if let Some(n) = flipped {
        let r = region.clone().with_t1y_sign(-region.t1y_sign);
        out.extend(sample_parameters(
            &r,
            &BTreeMap::from([(2, n)]),
            base,
            grid,
            rng::derive_seed(seed, 1),
        )?);
    }
    Ok(out)
}
