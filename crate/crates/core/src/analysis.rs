//! Boundary localization, boundary shifts, outlier maps and accuracy tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::Metrics;
use crate::model::{analytic_gap_boundary, CouplingParams};
use crate::topo::PhaseDiagram;

/// The two labels whose interface is tracked.
pub const INNER_LABEL: i32 = 0;
pub const OUTER_LABEL: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Midpoint {
    pub m: f64,
    pub t3_left: f64,
    pub t3_right: f64,
    pub midpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidpointScan {
    pub midpoints: Vec<Midpoint>,
    /// Rows without any tracked transition.
    pub skipped: Vec<f64>,
    pub resolution: f64,
}

fn is_transition(a: i32, b: i32) -> bool {
    (a == INNER_LABEL && b == OUTER_LABEL) || (a == OUTER_LABEL && b == INNER_LABEL)
}

/// Transition pairs of one row, at most one per sign of `t3`.
///
/// Every adjacent pair whose labels are {0, 1} is a candidate and belongs to
/// the side given by the sign of its midpoint. With `reference` roots the
/// candidate nearest a reference root on that side wins; otherwise the first
/// in ascending `t3`.
pub fn row_midpoints(m: f64, t3_axis: &[f64], labels: &[i32], reference: Option<&[f64]>) -> Result<Vec<Midpoint>> {
    if t3_axis.len() != labels.len() {
        return Err(Error::LengthMismatch(t3_axis.len(), labels.len()));
    }
    let mut out = Vec::new();
    for side in [-1.0f64, 1.0] {
        let candidates = t3_axis
            .windows(2)
            .zip(labels.windows(2))
            .filter(|(_, l)| is_transition(l[0], l[1]))
            .map(|(t, _)| Midpoint {
                m,
                t3_left: t[0],
                t3_right: t[1],
                midpoint: 0.5 * (t[0] + t[1]),
            })
            .filter(|p| p.midpoint * side > 0.0);
        let chosen = match reference {
            Some(roots) => {
                let same_side: Vec<f64> = roots.iter().copied().filter(|r| r * side > 0.0).collect();
                let dist = |p: &Midpoint| {
                    same_side
                        .iter()
                        .map(|r| (p.midpoint - r).abs())
                        .fold(f64::INFINITY, f64::min)
                };
                candidates.min_by(|a, b| dist(a).total_cmp(&dist(b)))
            }
            None => candidates.into_iter().next(),
        };
        out.extend(chosen);
    }
    if out.is_empty() {
        return Err(Error::NoTransition { m });
    }
    Ok(out)
}

/// Midpoints for every row of a labelled grid. `reference(m)` supplies the
/// unperturbed boundary roots used to pick among several transitions.
pub fn boundary_midpoints(diagram: &PhaseDiagram, reference: Option<&dyn Fn(f64) -> Vec<f64>>) -> Result<MidpointScan> {
    let t3 = &diagram.t3_axis;
    if t3.len() < 2 {
        return Err(Error::EmptyInput("need at least two t3 points".into()));
    }
    let resolution = (t3[t3.len() - 1] - t3[0]) / (t3.len() - 1) as f64;
    let mut scan = MidpointScan {
        midpoints: Vec::new(),
        skipped: Vec::new(),
        resolution,
    };
    for (m, row) in diagram.m_axis.iter().zip(&diagram.labels) {
        let roots = reference.map(|f| f(*m));
        match row_midpoints(*m, t3, row, roots.as_deref()) {
            Ok(v) => scan.midpoints.extend(v),
            Err(Error::NoTransition { m }) => scan.skipped.push(m),
            Err(e) => return Err(e),
        }
    }
    if scan.midpoints.is_empty() {
        return Err(Error::NoTransition {
            m: diagram.m_axis.first().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(scan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub m: f64,
    pub t3_left: f64,
    pub t3_right: f64,
    pub midpoint: f64,
    pub reference: f64,
    /// `sgn(t3)·(midpoint − reference)`
    pub signed_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub per_m: Vec<ShiftEntry>,
    pub shift: f64,
    pub resolution: f64,
    pub half_resolution_uncertainty: f64,
    pub skipped: Vec<f64>,
}

/// Averages `sgn(t3)·(midpoint − reference)` over all midpoints; `references[i]`
/// is the unperturbed boundary matching `midpoints[i]`.
pub fn boundary_shift(midpoints: &[Midpoint], references: &[f64], resolution: f64) -> Result<BoundaryEstimate> {
    if midpoints.is_empty() {
        return Err(Error::EmptyInput("no boundary midpoints".into()));
    }
    if midpoints.len() != references.len() {
        return Err(Error::LengthMismatch(midpoints.len(), references.len()));
    }
    let per_m: Vec<ShiftEntry> = midpoints
        .iter()
        .zip(references)
        .map(|(p, &r)| {
            let sign = if r != 0.0 { r.signum() } else { p.midpoint.signum() };
            ShiftEntry {
                m: p.m,
                t3_left: p.t3_left,
                t3_right: p.t3_right,
                midpoint: p.midpoint,
                reference: r,
                signed_shift: sign * (p.midpoint - r),
            }
        })
        .collect();
    let shift = per_m.iter().map(|e| e.signed_shift).sum::<f64>() / per_m.len() as f64;
    Ok(BoundaryEstimate {
        per_m,
        shift,
        resolution,
        half_resolution_uncertainty: resolution / 2.0,
        skipped: Vec::new(),
    })
}

/// Unperturbed boundary roots at `m` for the couplings of `base` with `eta = 0`.
pub fn unperturbed_roots(base: &CouplingParams, m: f64) -> Vec<f64> {
    analytic_gap_boundary(&CouplingParams { m, eta: 0.0, ..*base }).unwrap_or_default()
}

fn nearest(roots: &[f64], x: f64) -> Option<f64> {
    roots
        .iter()
        .copied()
        .filter(|r| r * x > 0.0)
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
}

/// Shift of a labelled grid against the analytic unperturbed boundary.
pub fn boundary_shift_analytic(diagram: &PhaseDiagram) -> Result<BoundaryEstimate> {
    let base = diagram.base;
    let reference = move |m: f64| unperturbed_roots(&base, m);
    let scan = boundary_midpoints(diagram, Some(&reference))?;
    let mut kept = Vec::new();
    let mut refs = Vec::new();
    let mut skipped = scan.skipped.clone();
    for p in &scan.midpoints {
        match nearest(&reference(p.m), p.midpoint) {
            Some(r) => {
                kept.push(*p);
                refs.push(r);
            }
            None => skipped.push(p.m),
        }
    }
    let mut est = boundary_shift(&kept, &refs, scan.resolution)?;
    est.skipped = skipped;
    Ok(est)
}

/// Shift of a perturbed grid against the midpoints of an unperturbed grid on
/// the same axes. Only rows and sides present in both are compared.
pub fn boundary_shift_relative(perturbed: &MidpointScan, unperturbed: &MidpointScan) -> Result<BoundaryEstimate> {
    let mut kept = Vec::new();
    let mut refs = Vec::new();
    let mut skipped = perturbed.skipped.clone();
    for p in &perturbed.midpoints {
        let r = unperturbed
            .midpoints
            .iter()
            .find(|q| q.m == p.m && q.midpoint.signum() == p.midpoint.signum());
        match r {
            Some(q) => {
                kept.push(*p);
                refs.push(q.midpoint);
            }
            None => skipped.push(p.m),
        }
    }
    let mut est = boundary_shift(&kept, &refs, perturbed.resolution)?;
    est.skipped = skipped;
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub m: f64,
    pub t3: f64,
    pub true_label: i32,
    pub predicted_label: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierMap {
    pub points: Vec<Outlier>,
}

pub fn misclassification_map(predictions: &[i32], truths: &[i32], params: &[CouplingParams]) -> Result<OutlierMap> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch(predictions.len(), truths.len()));
    }
    if params.len() != truths.len() {
        return Err(Error::LengthMismatch(params.len(), truths.len()));
    }
    let points = predictions
        .iter()
        .zip(truths)
        .zip(params)
        .filter(|((p, t), _)| p != t)
        .map(|((&p, &t), q)| Outlier {
            m: q.m,
            t3: q.t3,
            true_label: t,
            predicted_label: p,
        })
        .collect();
    Ok(OutlierMap { points })
}

/// Distance in `t3` to the nearest analytic boundary root at the same `m`.
pub fn distance_to_boundary(p: &CouplingParams) -> f64 {
    analytic_gap_boundary(p)
        .unwrap_or_default()
        .iter()
        .map(|r| (p.t3 - r).abs())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub region: String,
    pub domain: String,
    pub noise: String,
    /// One entry per randomized split; cells are averaged across them.
    pub runs: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub region: String,
    pub domain: String,
    pub noise: String,
    pub per_class: BTreeMap<i32, Option<f64>>,
    pub overall: f64,
    /// Overall accuracy with the excluded classes left out, when requested.
    pub overall_excluding: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub classes: Vec<i32>,
    pub excluded: Vec<i32>,
    pub rows: Vec<TableRow>,
}

fn overall_excluding(m: &Metrics, excluded: &[i32]) -> f64 {
    let keep: Vec<usize> = (0..m.classes.len())
        .filter(|&i| !excluded.contains(&m.classes[i]))
        .collect();
    let total: u64 = keep.iter().map(|&i| m.confusion[i].iter().sum::<u64>()).sum();
    let correct: u64 = keep.iter().map(|&i| m.confusion[i][i]).sum();
    if total == 0 {
        f64::NAN
    } else {
        correct as f64 / total as f64
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Builds a table of per-class and overall accuracies, averaging each cell
/// over the runs of an entry. `excluded` classes are dropped from the
/// additional `overall_excluding` column (empty disables it).
pub fn accuracy_table(entries: &[TableEntry], excluded: &[i32]) -> Result<AccuracyTable> {
    if entries.is_empty() || entries.iter().any(|e| e.runs.is_empty()) {
        return Err(Error::EmptyInput("accuracy table needs metrics".into()));
    }
    let mut classes: Vec<i32> = entries
        .iter()
        .flat_map(|e| e.runs.iter().flat_map(|m| m.classes.iter().copied()))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let rows = entries
        .iter()
        .map(|e| {
            let per_class = classes
                .iter()
                .map(|c| {
                    (
                        *c,
                        mean(e.runs.iter().filter_map(|m| m.per_class_accuracy.get(c).copied())),
                    )
                })
                .collect();
            TableRow {
                region: e.region.clone(),
                domain: e.domain.clone(),
                noise: e.noise.clone(),
                per_class,
                overall: mean(e.runs.iter().map(|m| m.overall)).unwrap(),
                overall_excluding: (!excluded.is_empty())
                    .then(|| mean(e.runs.iter().map(|m| overall_excluding(m, excluded))).unwrap()),
            }
        })
        .collect();
    Ok(AccuracyTable {
        classes,
        excluded: excluded.to_vec(),
        rows,
    })
}

impl AccuracyTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["region".to_string(), "domain".into(), "noise".into()];
        h.extend(self.classes.iter().map(|c| format!("C={c}")));
        h.push("overall".into());
        if !self.excluded.is_empty() {
            h.push("overall_excl".into());
        }
        h
    }

    fn cells(&self, row: &TableRow) -> Vec<String> {
        let mut c = vec![row.region.clone(), row.domain.clone(), row.noise.clone()];
        c.extend(
            self.classes
                .iter()
                .map(|k| row.per_class[k].map_or("-".to_string(), |v| format!("{v:.3}"))),
        );
        c.push(format!("{:.3}", row.overall));
        if let Some(v) = row.overall_excluding {
            c.push(format!("{v:.3}"));
        }
        c
    }

    pub fn render_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(|r| self.cells(r)));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let row: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            writeln!(out, "{}", row.join("  ").trim_end()).unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",") + "\n";
        for r in &self.rows {
            out += &self.cells(r).join(",");
            out.push('\n');
        }
        out
    }
}
