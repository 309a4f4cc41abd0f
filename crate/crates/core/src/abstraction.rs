//! Conservative perception abstraction pipeline: state-space binning,
//! per-bin detection probability intervals (five variants), and the
//! closed-loop product that attaches detection intervals to a
//! controller-plant MDP.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{new_imdp, ActionLabel, Imdp, Mdp, MarkovError, StateId};
use crate::stats::{
    clopper_pearson, fit_logistic, logistic_range_over_box, normal_quantile, sigmoid, AxisBox,
    BinomialSample, LogisticModel, StatsError,
};

#[derive(Error, Debug)]
pub enum AbstractionError {
    #[error("bad argument: {0}")]
    Domain(String),
    #[error("equal-count binning supports 1-D data only (got {0} dimensions)")]
    DimensionUnsupported(usize),
    #[error("too few points: {points} for {bins} bins")]
    TooFewPoints { points: usize, bins: usize },
    #[error("method requires an analytic truth model")]
    MissingTruth,
    #[error("cell {0:?} lies outside the perception bounds")]
    OutOfBounds(AxisBox),
    #[error("state {0} has perception actions of only one polarity")]
    MissingPerceptionAction(StateId),
    #[error("state {0} has perception actions but no cell mapping")]
    MissingCell(StateId),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("bad dataset: {0}")]
    Csv(String),
}

/// The five per-bin interval constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    NoCi,
    GtPer,
    LogRegCi,
    OursNpe,
    Ours,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::NoCi, Method::GtPer, Method::LogRegCi, Method::OursNpe, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoCi => "noCI",
            Method::GtPer => "GTPer",
            Method::LogRegCi => "logRegCI",
            Method::OursNpe => "oursNPE",
            Method::Ours => "ours",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labeled perception samples: state vector plus binary detection outcome.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerceptionDataset {
    pub xs: Vec<Vec<f64>>,
    pub zs: Vec<bool>,
}

impl PerceptionDataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// CSV with header `x1,...,xn,z`.
    pub fn to_csv(&self) -> String {
        let d = self.dim().max(1);
        let mut out = String::new();
        for j in 1..=d {
            out.push_str(&format!("x{j},"));
        }
        out.push_str("z\n");
        for (x, &z) in self.xs.iter().zip(&self.zs) {
            for v in x {
                out.push_str(&format!("{v},"));
            }
            out.push_str(if z { "1\n" } else { "0\n" });
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<PerceptionDataset, AbstractionError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| AbstractionError::Csv("empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.last() != Some(&"z") || cols.len() < 2 {
            return Err(AbstractionError::Csv(format!("bad header: {header}")));
        }
        let d = cols.len() - 1;
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(AbstractionError::Csv(format!("row {}: {} fields", i + 2, fields.len())));
            }
            let x: Result<Vec<f64>, _> = fields[..d].iter().map(|f| f.parse::<f64>()).collect();
            let x = x.map_err(|e| AbstractionError::Csv(format!("row {}: {e}", i + 2)))?;
            let z = match fields[d] {
                "0" => false,
                "1" => true,
                other => return Err(AbstractionError::Csv(format!("row {}: z = {other}", i + 2))),
            };
            xs.push(x);
            zs.push(z);
        }
        Ok(PerceptionDataset { xs, zs })
    }
}

/// Disjoint axis-aligned bins covering a bounding box. Bins follow a
/// half-open convention per axis; the face touching the global upper bound
/// is closed.
#[derive(Clone, Debug, PartialEq)]
pub struct BinPartition {
    pub bins: Vec<AxisBox>,
    pub bounds: AxisBox,
}

impl BinPartition {
    /// Index of the unique bin containing `x`, if in bounds.
    pub fn bin_index(&self, x: &[f64]) -> Option<usize> {
        self.bins.iter().position(|b| self.contains(b, x))
    }

    fn contains(&self, b: &AxisBox, x: &[f64]) -> bool {
        if x.len() != b.dim() {
            return false;
        }
        (0..b.dim()).all(|j| {
            let upper_closed = b.upper[j] >= self.bounds.upper[j];
            x[j] >= b.lower[j]
                && (x[j] < b.upper[j] || (upper_closed && x[j] <= b.upper[j]))
        })
    }
}

/// Equal-width grid partition; the last bin per axis absorbs any remainder
/// when the extent is not an integer multiple of the width.
pub fn partition_equal_width(
    bounds: &AxisBox,
    widths: &[f64],
) -> Result<BinPartition, AbstractionError> {
    let d = bounds.dim();
    if widths.len() != d {
        return Err(AbstractionError::Domain(format!(
            "{} widths for {} dimensions",
            widths.len(),
            d
        )));
    }
    let mut axis_edges: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let (lo, hi, w) = (bounds.lower[j], bounds.upper[j], widths[j]);
        let extent = hi - lo;
        if w <= 0.0 || w > extent {
            return Err(AbstractionError::Domain(format!(
                "width {w} invalid for extent {extent}"
            )));
        }
        let tol = 1e-9 * extent.max(1.0);
        let full = ((extent / w) + tol).floor() as usize;
        let mut edges: Vec<f64> = (0..full).map(|i| lo + i as f64 * w).collect();
        if (lo + full as f64 * w - hi).abs() > tol {
            edges.push(lo + full as f64 * w);
        }
        edges.push(hi);
        axis_edges.push(edges);
    }
    // Row-major enumeration, first axis slowest.
    let mut bins = vec![AxisBox::new(Vec::new(), Vec::new())];
    for edges in &axis_edges {
        let mut next = Vec::with_capacity(bins.len() * (edges.len() - 1));
        for b in &bins {
            for w in edges.windows(2) {
                let mut lower = b.lower.clone();
                let mut upper = b.upper.clone();
                lower.push(w[0]);
                upper.push(w[1]);
                next.push(AxisBox::new(lower, upper));
            }
        }
        bins = next;
    }
    Ok(BinPartition { bins, bounds: bounds.clone() })
}

/// Equal-count partition of 1-D data: bin edges at midpoints between order
/// statistics so each bin holds an (almost) equal share of the points.
/// Returns merge warnings for duplicate-valued edges.
pub fn partition_equal_count(
    data: &PerceptionDataset,
    counts: &[usize],
) -> Result<(BinPartition, Vec<String>), AbstractionError> {
    if data.dim() != 1 || counts.len() != 1 {
        return Err(AbstractionError::DimensionUnsupported(data.dim().max(counts.len())));
    }
    let b = counts[0];
    if b < 2 {
        return Err(AbstractionError::Domain(format!("{b} bins requested, need at least 2")));
    }
    if data.len() < b {
        return Err(AbstractionError::TooFewPoints { points: data.len(), bins: b });
    }
    let mut xs: Vec<f64> = data.xs.iter().map(|x| x[0]).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let base = n / b;
    let rem = n % b;
    let mut warnings = Vec::new();
    let mut edges = vec![xs[0]];
    let mut idx = 0;
    for i in 0..b - 1 {
        idx += base + usize::from(i < rem);
        let edge = 0.5 * (xs[idx - 1] + xs[idx]);
        if edge <= *edges.last().unwrap() {
            warnings.push(format!(
                "merged bin boundary at {edge} (duplicate values near index {idx})"
            ));
        } else {
            edges.push(edge);
        }
    }
    let last = xs[n - 1];
    if last > *edges.last().unwrap() {
        edges.push(last);
    } else if edges.len() == 1 {
        // All points identical: a single degenerate bin.
        warnings.push("all points identical; single degenerate bin".into());
        edges.push(last);
    }
    let bins: Vec<AxisBox> =
        edges.windows(2).map(|w| AxisBox::new(vec![w[0]], vec![w[1]])).collect();
    let bounds = AxisBox::new(vec![edges[0]], vec![*edges.last().unwrap()]);
    Ok((BinPartition { bins, bounds }, warnings))
}

/// Per-bin detection counts. Out-of-bounds points are dropped; the dropped
/// count is returned alongside.
pub fn bin_empirical_probs(
    data: &PerceptionDataset,
    partition: &BinPartition,
) -> (Vec<BinomialSample>, usize) {
    let mut samples = vec![BinomialSample { k: 0, n: 0 }; partition.bins.len()];
    let mut dropped = 0;
    for (x, &z) in data.xs.iter().zip(&data.zs) {
        match partition.bin_index(x) {
            Some(i) => {
                samples[i].n += 1;
                if z {
                    samples[i].k += 1;
                }
            }
            None => dropped += 1,
        }
    }
    (samples, dropped)
}

/// Analytic detection probability surface, used for the ground-truth
/// variant and for containment experiments.
pub trait TruthModel {
    fn prob(&self, x: &[f64]) -> f64;
    /// Exact (min, max) of the surface over a box.
    fn range_over(&self, b: &AxisBox) -> (f64, f64);
}

#[derive(Clone, Debug)]
pub struct AbstractionConfig {
    pub method: Method,
    pub alpha_mc: f64,
    pub w_pe: f64,
    pub partition: BinPartition,
}

/// Per-bin provenance record of the built model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub n: u64,
    pub k: u64,
    pub delta: f64,
    pub flagged: bool,
}

/// Conservative detection probability intervals over a bin partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionModel {
    pub partition: BinPartition,
    pub bins: Vec<BinRecord>,
    pub method: Method,
    pub alpha_mc: f64,
    pub w_pe: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonPerceptionModel {
    bins: Vec<BinRecord>,
    method: String,
    alpha_mc: f64,
    w_pe: f64,
}

impl PerceptionModel {
    pub fn to_json(&self) -> String {
        let j = JsonPerceptionModel {
            bins: self.bins.clone(),
            method: self.method.name().to_string(),
            alpha_mc: self.alpha_mc,
            w_pe: self.w_pe,
        };
        serde_json::to_string_pretty(&j).expect("model serialization")
    }
}

/// Wald band of the logistic linear predictor, extremized over the corners
/// of a box and mapped through the sigmoid.
fn wald_band_over_box(m: &LogisticModel, b: &AxisBox, z: f64) -> (f64, f64) {
    let d = b.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for mask in 0..(1u64 << d) {
        let x: Vec<f64> =
            (0..d).map(|j| if mask >> j & 1 == 1 { b.upper[j] } else { b.lower[j] }).collect();
        let eta = m.score(&x);
        // se^2 = [x,1] Sigma [x,1]^T
        let mut aug = x.clone();
        aug.push(1.0);
        let mut var = 0.0;
        for i in 0..=d {
            for j in 0..=d {
                var += aug[i] * m.fisher_covariance[i][j] * aug[j];
            }
        }
        let se = var.max(0.0).sqrt();
        lo = lo.min(eta - z * se);
        hi = hi.max(eta + z * se);
    }
    (sigmoid(lo), sigmoid(hi))
}

/// Build the per-bin detection interval model. The per-bin confidence level
/// is 1 - alpha_mc / |bins| so simultaneous containment follows by a union
/// bound. Zero-data bins get [0, 1] with a flag (except the ground-truth
/// variant, which never looks at data).
pub fn build_perception_model(
    data: &PerceptionDataset,
    truth: Option<&dyn TruthModel>,
    cfg: &AbstractionConfig,
) -> Result<PerceptionModel, AbstractionError> {
    if !(0.0 < cfg.alpha_mc && cfg.alpha_mc < 1.0) {
        return Err(AbstractionError::Domain(format!("alpha_mc = {}", cfg.alpha_mc)));
    }
    if !(0.0..=1.0).contains(&cfg.w_pe) {
        return Err(AbstractionError::Domain(format!("w_pe = {}", cfg.w_pe)));
    }
    let n_bins = cfg.partition.bins.len();
    let alpha_bin = cfg.alpha_mc / n_bins as f64;
    let (samples, _dropped) = bin_empirical_probs(data, &cfg.partition);

    let fit = match cfg.method {
        Method::Ours | Method::LogRegCi => Some(fit_logistic(&data.xs, &data.zs)?),
        _ => None,
    };
    if cfg.method == Method::GtPer && truth.is_none() {
        return Err(AbstractionError::MissingTruth);
    }

    let mut bins = Vec::with_capacity(n_bins);
    for (bin, s) in cfg.partition.bins.iter().zip(&samples) {
        let mut delta = 0.0;
        let (lo, hi, flagged) = match cfg.method {
            Method::GtPer => {
                let (lo, hi) = truth.unwrap().range_over(bin);
                (lo, hi, false)
            }
            _ if s.n == 0 => (0.0, 1.0, true),
            Method::NoCi => {
                let p = s.k as f64 / s.n as f64;
                (p, p, false)
            }
            Method::OursNpe => {
                let ci = clopper_pearson(*s, alpha_bin)?;
                (ci.lo, ci.hi, false)
            }
            Method::Ours => {
                let ci = clopper_pearson(*s, alpha_bin)?;
                let (plo, phi) = logistic_range_over_box(fit.as_ref().unwrap(), bin)?;
                delta = phi - plo;
                (
                    (ci.lo - cfg.w_pe * delta).clamp(0.0, 1.0),
                    (ci.hi + cfg.w_pe * delta).clamp(0.0, 1.0),
                    false,
                )
            }
            Method::LogRegCi => {
                let z = normal_quantile(1.0 - alpha_bin / 2.0)?;
                let (lo, hi) = wald_band_over_box(fit.as_ref().unwrap(), bin, z);
                (lo, hi, false)
            }
        };
        bins.push(BinRecord {
            lower: bin.lower.clone(),
            upper: bin.upper.clone(),
            lo,
            hi,
            n: s.n,
            k: s.k,
            delta,
            flagged,
        });
    }
    Ok(PerceptionModel {
        partition: cfg.partition.clone(),
        bins,
        method: cfg.method,
        alpha_mc: cfg.alpha_mc,
        w_pe: cfg.w_pe,
    })
}

/// Detection intervals of every perception bin overlapping the cell with
/// positive volume, in bin order. A zero-volume cell falls back to the bin
/// containing its center.
pub fn detection_interval_for_cell(
    pm: &PerceptionModel,
    cell: &AxisBox,
) -> Result<Vec<(usize, (f64, f64))>, AbstractionError> {
    let d = pm.partition.bounds.dim();
    if cell.dim() != d {
        return Err(AbstractionError::OutOfBounds(cell.clone()));
    }
    let tol = 1e-9;
    for j in 0..d {
        if cell.lower[j] < pm.partition.bounds.lower[j] - tol
            || cell.upper[j] > pm.partition.bounds.upper[j] + tol
        {
            return Err(AbstractionError::OutOfBounds(cell.clone()));
        }
    }
    let mut out = Vec::new();
    for (i, bin) in pm.partition.bins.iter().enumerate() {
        let overlaps = (0..d).all(|j| cell.lower[j] < bin.upper[j] && cell.upper[j] > bin.lower[j]);
        if overlaps {
            out.push((i, (pm.bins[i].lo, pm.bins[i].hi)));
        }
    }
    if out.is_empty() {
        let center: Vec<f64> =
            (0..d).map(|j| 0.5 * (cell.lower[j] + cell.upper[j])).collect();
        if let Some(i) = pm.partition.bin_index(&center) {
            out.push((i, (pm.bins[i].lo, pm.bins[i].hi)));
        }
    }
    Ok(out)
}

/// Attach perception intervals to a controller-plant MDP. Perception-action
/// rows come in detect / no-detect pairs; each nondeterministic product
/// action fixes one overlapping bin, one detect row, and one no-detect row,
/// and every successor's probability interval is the exact range of
/// `p . delta_detect + (1-p) . delta_nodetect` over the bin's interval.
/// Rows without a perception component pass through unchanged.
pub fn compose_closed_loop(
    mcpl: &Mdp,
    pm: &PerceptionModel,
    cell_of: &[Option<AxisBox>],
) -> Result<Imdp, AbstractionError> {
    let n = mcpl.n_states();
    assert_eq!(cell_of.len(), n, "cell mapping must cover the state set");
    let mut raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64, f64)>)> = Vec::new();
    for s in (0..n).map(StateId) {
        let rows = mcpl.rows(s);
        let det: Vec<_> = rows.iter().filter(|r| r.action.per == Some(true)).collect();
        let nodet: Vec<_> = rows.iter().filter(|r| r.action.per == Some(false)).collect();
        for r in rows.iter().filter(|r| r.action.per.is_none()) {
            let edges = r.edges.iter().map(|&(t, p)| (t, p, p)).collect();
            raw_rows.push((s, r.action, edges));
        }
        if det.is_empty() && nodet.is_empty() {
            continue;
        }
        if det.is_empty() || nodet.is_empty() {
            return Err(AbstractionError::MissingPerceptionAction(s));
        }
        let cell = cell_of[s.0].as_ref().ok_or(AbstractionError::MissingCell(s))?;
        let intervals = detection_interval_for_cell(pm, cell)?;
        let mut next_action: u32 = 0;
        for &(_bin, (p_lo, p_hi)) in &intervals {
            for r1 in &det {
                for r0 in &nodet {
                    // successor -> (detect mass, no-detect mass)
                    let mut mass: BTreeMap<StateId, (f64, f64)> = BTreeMap::new();
                    for &(t, p) in &r1.edges {
                        mass.entry(t).or_insert((0.0, 0.0)).0 += p;
                    }
                    for &(t, p) in &r0.edges {
                        mass.entry(t).or_insert((0.0, 0.0)).1 += p;
                    }
                    let edges: Vec<(StateId, f64, f64)> = mass
                        .into_iter()
                        .map(|(t, (d1, d0))| {
                            let a = d1 * p_lo + d0 * (1.0 - p_lo);
                            let b = d1 * p_hi + d0 * (1.0 - p_hi);
                            (t, a.min(b), a.max(b))
                        })
                        .collect();
                    raw_rows.push((s, ActionLabel::reach(next_action), edges));
                    next_action += 1;
                }
            }
        }
    }
    let labels = (0..n).map(|s| mcpl.labels(StateId(s)).clone()).collect();
    Ok(new_imdp(n, mcpl.initial(), raw_rows, labels)?)
}
