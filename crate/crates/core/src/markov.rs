//! Finite MDP / IMDP models: validation, parallel composition, and the
//! state-matched satisfaction check between an MDP and an IMDP.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for row-sum validation.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Dense state index, 0..|S|-1 within a model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Action label with an optional perception part (detect / no-detect) and an
/// optional reachability index. At least one part must be present.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ActionLabel {
    pub per: Option<bool>,
    pub reach: Option<u32>,
}

impl ActionLabel {
    pub fn per(detect: bool) -> Self {
        ActionLabel { per: Some(detect), reach: None }
    }

    pub fn reach(index: u32) -> Self {
        ActionLabel { per: None, reach: Some(index) }
    }

    pub fn per_reach(detect: bool, index: u32) -> Self {
        ActionLabel { per: Some(detect), reach: Some(index) }
    }

    pub fn is_valid(&self) -> bool {
        self.per.is_some() || self.reach.is_some()
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.per, self.reach) {
            (Some(p), Some(r)) => write!(f, "(per={},r{})", u8::from(p), r),
            (Some(p), None) => write!(f, "(per={})", u8::from(p)),
            (None, Some(r)) => write!(f, "(r{})", r),
            (None, None) => write!(f, "(empty)"),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MarkovError {
    #[error("row ({state}, {action}) probabilities sum to {sum}, expected 1")]
    RowSum { state: StateId, action: ActionLabel, sum: f64 },
    #[error("row ({state}, {action}) references successor {successor} outside the state set")]
    DanglingSuccessor { state: StateId, action: ActionLabel, successor: StateId },
    #[error("state {state} has no actions")]
    NoActions { state: StateId },
    #[error("row ({state}, {action}) has interval [{lo}, {hi}] with lo > hi")]
    IntervalOrder { state: StateId, action: ActionLabel, lo: f64, hi: f64 },
    #[error("row ({state}, {action}) is infeasible: sum of lower bounds {lo_sum}, sum of upper bounds {hi_sum}")]
    InfeasibleRow { state: StateId, action: ActionLabel, lo_sum: f64, hi_sum: f64 },
    #[error("row ({state}, {action}) appears more than once")]
    DuplicateAction { state: StateId, action: ActionLabel },
    #[error("row ({state}, {action}) lists successor {successor} more than once")]
    DuplicateEdge { state: StateId, action: ActionLabel, successor: StateId },
    #[error("action label with neither perception nor reachability part in row ({state})")]
    EmptyAction { state: StateId },
    #[error("initial state {initial} outside the state set of size {states}")]
    BadInitial { initial: StateId, states: usize },
    #[error("models have different state sets: {left} vs {right} states")]
    StateSetMismatch { left: usize, right: usize },
    #[error("bad JSON model: {0}")]
    Json(String),
}

/// One (state, action) row of an MDP: successors with exact probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpRow {
    pub action: ActionLabel,
    pub edges: Vec<(StateId, f64)>,
}

/// One (state, action) row of an IMDP: successors with probability intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ImdpRow {
    pub action: ActionLabel,
    pub edges: Vec<(StateId, f64, f64)>,
}

/// Finite labeled MDP with a dense state set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    initial: StateId,
    labels: Vec<BTreeSet<String>>,
    rows: Vec<Vec<MdpRow>>,
}

/// Finite labeled IMDP with a dense state set. Lower bounds of 0 with a
/// positive upper bound are permitted; an edge is structurally present
/// whenever its upper bound is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Imdp {
    initial: StateId,
    labels: Vec<BTreeSet<String>>,
    rows: Vec<Vec<ImdpRow>>,
}

fn check_common(
    n_states: usize,
    initial: StateId,
    labels: &[BTreeSet<String>],
) -> Result<(), MarkovError> {
    assert_eq!(labels.len(), n_states, "labels must cover the state set");
    if initial.0 >= n_states {
        return Err(MarkovError::BadInitial { initial, states: n_states });
    }
    Ok(())
}

/// Validate raw MDP rows and build the model. Rows are normalized only in
/// ordering (actions, then successors by state id), never in values.
pub fn new_mdp(
    n_states: usize,
    initial: StateId,
    raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64)>)>,
    labels: Vec<BTreeSet<String>>,
) -> Result<Mdp, MarkovError> {
    check_common(n_states, initial, &labels)?;
    let mut rows: Vec<Vec<MdpRow>> = vec![Vec::new(); n_states];
    let mut seen: BTreeSet<(StateId, ActionLabel)> = BTreeSet::new();
    for (state, action, edges) in raw_rows {
        if state.0 >= n_states {
            return Err(MarkovError::BadInitial { initial: state, states: n_states });
        }
        if !action.is_valid() {
            return Err(MarkovError::EmptyAction { state });
        }
        if !seen.insert((state, action)) {
            return Err(MarkovError::DuplicateAction { state, action });
        }
        let mut sum = 0.0;
        let mut row_edges: Vec<(StateId, f64)> = Vec::with_capacity(edges.len());
        let mut succ_seen = BTreeSet::new();
        for (succ, p) in edges {
            if succ.0 >= n_states {
                return Err(MarkovError::DanglingSuccessor { state, action, successor: succ });
            }
            if !succ_seen.insert(succ) {
                return Err(MarkovError::DuplicateEdge { state, action, successor: succ });
            }
            sum += p;
            if p > 0.0 {
                row_edges.push((succ, p));
            }
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(MarkovError::RowSum { state, action, sum });
        }
        row_edges.sort_by_key(|e| e.0);
        rows[state.0].push(MdpRow { action, edges: row_edges });
    }
    for (s, state_rows) in rows.iter_mut().enumerate() {
        if state_rows.is_empty() {
            return Err(MarkovError::NoActions { state: StateId(s) });
        }
        state_rows.sort_by_key(|r| r.action);
    }
    Ok(Mdp { initial, labels, rows })
}

/// Validate raw IMDP rows and build the model. Entries with hi = 0 are
/// dropped; lo = 0 with hi > 0 is permitted.
pub fn new_imdp(
    n_states: usize,
    initial: StateId,
    raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64, f64)>)>,
    labels: Vec<BTreeSet<String>>,
) -> Result<Imdp, MarkovError> {
    check_common(n_states, initial, &labels)?;
    let mut rows: Vec<Vec<ImdpRow>> = vec![Vec::new(); n_states];
    let mut seen: BTreeSet<(StateId, ActionLabel)> = BTreeSet::new();
    for (state, action, edges) in raw_rows {
        if state.0 >= n_states {
            return Err(MarkovError::BadInitial { initial: state, states: n_states });
        }
        if !action.is_valid() {
            return Err(MarkovError::EmptyAction { state });
        }
        if !seen.insert((state, action)) {
            return Err(MarkovError::DuplicateAction { state, action });
        }
        let mut lo_sum = 0.0;
        let mut hi_sum = 0.0;
        let mut row_edges: Vec<(StateId, f64, f64)> = Vec::with_capacity(edges.len());
        let mut succ_seen = BTreeSet::new();
        for (succ, lo, hi) in edges {
            if succ.0 >= n_states {
                return Err(MarkovError::DanglingSuccessor { state, action, successor: succ });
            }
            if !succ_seen.insert(succ) {
                return Err(MarkovError::DuplicateEdge { state, action, successor: succ });
            }
            if lo > hi || lo < 0.0 || hi > 1.0 {
                return Err(MarkovError::IntervalOrder { state, action, lo, hi });
            }
            lo_sum += lo;
            hi_sum += hi;
            if hi > 0.0 {
                row_edges.push((succ, lo, hi));
            }
        }
        if lo_sum > 1.0 + ROW_SUM_TOL || hi_sum < 1.0 - ROW_SUM_TOL {
            return Err(MarkovError::InfeasibleRow { state, action, lo_sum, hi_sum });
        }
        row_edges.sort_by_key(|e| e.0);
        rows[state.0].push(ImdpRow { action, edges: row_edges });
    }
    for (s, state_rows) in rows.iter_mut().enumerate() {
        if state_rows.is_empty() {
            return Err(MarkovError::NoActions { state: StateId(s) });
        }
        state_rows.sort_by_key(|r| r.action);
    }
    Ok(Imdp { initial, labels, rows })
}

macro_rules! model_accessors {
    ($ty:ty, $row:ty) => {
        impl $ty {
            pub fn n_states(&self) -> usize {
                self.rows.len()
            }

            pub fn initial(&self) -> StateId {
                self.initial
            }

            pub fn labels(&self, s: StateId) -> &BTreeSet<String> {
                &self.labels[s.0]
            }

            pub fn rows(&self, s: StateId) -> &[$row] {
                &self.rows[s.0]
            }

            pub fn row(&self, s: StateId, a: ActionLabel) -> Option<&$row> {
                self.rows[s.0].iter().find(|r| r.action == a)
            }

            pub fn alphabet(&self) -> BTreeSet<ActionLabel> {
                self.rows.iter().flatten().map(|r| r.action).collect()
            }

            /// States carrying the given proposition.
            pub fn labeled_states(&self, label: &str) -> Vec<StateId> {
                (0..self.n_states())
                    .map(StateId)
                    .filter(|s| self.labels[s.0].contains(label))
                    .collect()
            }
        }
    };
}

model_accessors!(Mdp, MdpRow);
model_accessors!(Imdp, ImdpRow);

/// Lift an MDP to the IMDP with degenerate point intervals.
pub fn degenerate(m: &Mdp) -> Imdp {
    Imdp {
        initial: m.initial,
        labels: m.labels.clone(),
        rows: m
            .rows
            .iter()
            .map(|state_rows| {
                state_rows
                    .iter()
                    .map(|r| ImdpRow {
                        action: r.action,
                        edges: r.edges.iter().map(|&(s, p)| (s, p, p)).collect(),
                    })
                    .collect()
            })
            .collect(),
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Parallel composition of two MDPs over the reachable fragment of the
/// product state set. Actions shared by both alphabets synchronize; the
/// rest interleave.
pub fn compose_mdp_mdp(m1: &Mdp, m2: &Mdp) -> Result<Mdp, MarkovError> {
    let a1 = m1.alphabet();
    let a2 = m2.alphabet();
    let all: Vec<ActionLabel> = a1.union(&a2).copied().collect();

    let mut index: BTreeMap<(StateId, StateId), StateId> = BTreeMap::new();
    let mut order: Vec<(StateId, StateId)> = Vec::new();
    let mut queue = VecDeque::new();
    let start = (m1.initial, m2.initial);
    index.insert(start, StateId(0));
    order.push(start);
    queue.push_back(start);

    let mut raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64)>)> = Vec::new();
    while let Some((s1, s2)) = queue.pop_front() {
        let here = index[&(s1, s2)];
        for &a in &all {
            let shared = a1.contains(&a) && a2.contains(&a);
            let mut edges: Vec<((StateId, StateId), f64)> = Vec::new();
            if shared {
                if let (Some(r1), Some(r2)) = (m1.row(s1, a), m2.row(s2, a)) {
                    for &(t1, p1) in &r1.edges {
                        for &(t2, p2) in &r2.edges {
                            edges.push(((t1, t2), p1 * p2));
                        }
                    }
                }
            } else if a1.contains(&a) {
                if let Some(r1) = m1.row(s1, a) {
                    for &(t1, p1) in &r1.edges {
                        edges.push(((t1, s2), p1));
                    }
                }
            } else if let Some(r2) = m2.row(s2, a) {
                for &(t2, p2) in &r2.edges {
                    edges.push(((s1, t2), p2));
                }
            }
            if edges.is_empty() {
                continue;
            }
            let mut mapped: Vec<(StateId, f64)> = Vec::with_capacity(edges.len());
            for (pair, p) in edges {
                let id = *index.entry(pair).or_insert_with(|| {
                    let id = StateId(order.len());
                    order.push(pair);
                    queue.push_back(pair);
                    id
                });
                mapped.push((id, clamp01(p)));
            }
            raw_rows.push((here, a, mapped));
        }
    }

    let labels = order
        .iter()
        .map(|&(s1, s2)| m1.labels(s1).union(m2.labels(s2)).cloned().collect())
        .collect();
    new_mdp(order.len(), StateId(0), raw_rows, labels)
}

/// Parallel composition of an MDP with an IMDP, yielding an IMDP over the
/// reachable product fragment. Shared-action edges multiply the exact
/// probability into both interval endpoints.
pub fn compose_mdp_imdp(m1: &Mdp, m2: &Imdp) -> Result<Imdp, MarkovError> {
    let a1 = m1.alphabet();
    let a2 = m2.alphabet();
    let all: Vec<ActionLabel> = a1.union(&a2).copied().collect();

    let mut index: BTreeMap<(StateId, StateId), StateId> = BTreeMap::new();
    let mut order: Vec<(StateId, StateId)> = Vec::new();
    let mut queue = VecDeque::new();
    let start = (m1.initial, m2.initial);
    index.insert(start, StateId(0));
    order.push(start);
    queue.push_back(start);

    let mut raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64, f64)>)> = Vec::new();
    while let Some((s1, s2)) = queue.pop_front() {
        let here = index[&(s1, s2)];
        for &a in &all {
            let shared = a1.contains(&a) && a2.contains(&a);
            let mut edges: Vec<((StateId, StateId), f64, f64)> = Vec::new();
            if shared {
                if let (Some(r1), Some(r2)) = (m1.row(s1, a), m2.row(s2, a)) {
                    for &(t1, p1) in &r1.edges {
                        for &(t2, lo, hi) in &r2.edges {
                            edges.push(((t1, t2), clamp01(p1 * lo), clamp01(p1 * hi)));
                        }
                    }
                }
            } else if a1.contains(&a) {
                if let Some(r1) = m1.row(s1, a) {
                    for &(t1, p1) in &r1.edges {
                        edges.push(((t1, s2), p1, p1));
                    }
                }
            } else if let Some(r2) = m2.row(s2, a) {
                for &(t2, lo, hi) in &r2.edges {
                    edges.push(((s1, t2), lo, hi));
                }
            }
            if edges.is_empty() {
                continue;
            }
            let mut mapped: Vec<(StateId, f64, f64)> = Vec::with_capacity(edges.len());
            for (pair, lo, hi) in edges {
                let id = *index.entry(pair).or_insert_with(|| {
                    let id = StateId(order.len());
                    order.push(pair);
                    queue.push_back(pair);
                    id
                });
                mapped.push((id, lo, hi));
            }
            raw_rows.push((here, a, mapped));
        }
    }

    let labels = order
        .iter()
        .map(|&(s1, s2)| m1.labels(s1).union(m2.labels(s2)).cloned().collect())
        .collect();
    new_imdp(order.len(), StateId(0), raw_rows, labels)
}

/// Why a state-matched satisfaction check failed.
#[derive(Clone, Debug, PartialEq)]
pub enum Mismatch {
    Label { state: StateId },
    Probability {
        state: StateId,
        action: ActionLabel,
        successor: StateId,
        probability: f64,
        interval: (f64, f64),
    },
}

/// Result of the state-matched satisfaction check.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplementsVerdict {
    pub holds: bool,
    pub counterexample: Option<Mismatch>,
}

/// State-matched satisfaction: labels agree at every state and for every
/// action of `m` there is one action of `im` whose intervals contain all of
/// the row's probabilities simultaneously (absent edges count as [0,0]).
pub fn implements_state_matched(m: &Mdp, im: &Imdp) -> Result<ImplementsVerdict, MarkovError> {
    if m.n_states() != im.n_states() {
        return Err(MarkovError::StateSetMismatch { left: m.n_states(), right: im.n_states() });
    }
    for s in (0..m.n_states()).map(StateId) {
        if m.labels(s) != im.labels(s) {
            return Ok(ImplementsVerdict {
                holds: false,
                counterexample: Some(Mismatch::Label { state: s }),
            });
        }
        for mr in m.rows(s) {
            let mut matched = false;
            let mut first_violation: Option<Mismatch> = None;
            for ir in im.rows(s) {
                match row_containment_violation(s, mr, ir) {
                    None => {
                        matched = true;
                        break;
                    }
                    Some(v) => {
                        if first_violation.is_none() {
                            first_violation = Some(v);
                        }
                    }
                }
            }
            if !matched {
                return Ok(ImplementsVerdict { holds: false, counterexample: first_violation });
            }
        }
    }
    Ok(ImplementsVerdict { holds: true, counterexample: None })
}

fn row_containment_violation(state: StateId, mr: &MdpRow, ir: &ImdpRow) -> Option<Mismatch> {
    let interval_at = |succ: StateId| -> (f64, f64) {
        ir.edges
            .iter()
            .find(|e| e.0 == succ)
            .map(|&(_, lo, hi)| (lo, hi))
            .unwrap_or((0.0, 0.0))
    };
    for &(succ, p) in &mr.edges {
        let (lo, hi) = interval_at(succ);
        if p < lo - ROW_SUM_TOL || p > hi + ROW_SUM_TOL {
            return Some(Mismatch::Probability {
                state,
                action: mr.action,
                successor: succ,
                probability: p,
                interval: (lo, hi),
            });
        }
    }
    // Interval edges with a positive lower bound demand positive mass in m.
    for &(succ, lo, hi) in &ir.edges {
        if lo > ROW_SUM_TOL && !mr.edges.iter().any(|e| e.0 == succ) {
            return Some(Mismatch::Probability {
                state,
                action: mr.action,
                successor: succ,
                probability: 0.0,
                interval: (lo, hi),
            });
        }
    }
    None
}

// --- JSON serialization -------------------------------------------------
//
// Schema shared by MDPs and IMDPs; MDPs use lo = hi. Rows and edges are
// emitted in sorted order for byte-stable golden files.

#[derive(Serialize, Deserialize)]
struct JsonAction {
    per: Option<u8>,
    reach: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    to: usize,
    lo: f64,
    hi: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    state: usize,
    action: JsonAction,
    edges: Vec<JsonEdge>,
}

#[derive(Serialize, Deserialize)]
struct JsonModel {
    states: usize,
    initial: usize,
    labels: Vec<Vec<String>>,
    rows: Vec<JsonRow>,
}

fn to_json_action(a: ActionLabel) -> JsonAction {
    JsonAction { per: a.per.map(u8::from), reach: a.reach }
}

fn from_json_action(a: &JsonAction) -> ActionLabel {
    ActionLabel { per: a.per.map(|v| v != 0), reach: a.reach }
}

impl Imdp {
    pub fn to_json(&self) -> String {
        let model = JsonModel {
            states: self.n_states(),
            initial: self.initial.0,
            labels: self.labels.iter().map(|l| l.iter().cloned().collect()).collect(),
            rows: self
                .rows
                .iter()
                .enumerate()
                .flat_map(|(s, state_rows)| {
                    state_rows.iter().map(move |r| JsonRow {
                        state: s,
                        action: to_json_action(r.action),
                        edges: r
                            .edges
                            .iter()
                            .map(|&(t, lo, hi)| JsonEdge { to: t.0, lo, hi })
                            .collect(),
                    })
                })
                .collect(),
        };
        serde_json::to_string_pretty(&model).expect("imdp serialization")
    }

    pub fn from_json(text: &str) -> Result<Imdp, MarkovError> {
        let model: JsonModel =
            serde_json::from_str(text).map_err(|e| MarkovError::Json(e.to_string()))?;
        let raw = model
            .rows
            .iter()
            .map(|r| {
                (
                    StateId(r.state),
                    from_json_action(&r.action),
                    r.edges.iter().map(|e| (StateId(e.to), e.lo, e.hi)).collect(),
                )
            })
            .collect();
        let labels = model.labels.into_iter().map(|l| l.into_iter().collect()).collect();
        new_imdp(model.states, StateId(model.initial), raw, labels)
    }

    /// Human-readable transition listing for manual cross-checks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("states: {}\ninitial: {}\n", self.n_states(), self.initial));
        for s in (0..self.n_states()).map(StateId) {
            let labels: Vec<&str> = self.labels(s).iter().map(String::as_str).collect();
            out.push_str(&format!("state {} {{{}}}\n", s, labels.join(",")));
            for r in self.rows(s) {
                out.push_str(&format!("  {}:", r.action));
                for &(t, lo, hi) in &r.edges {
                    out.push_str(&format!(" {}:[{:.9},{:.9}]", t, lo, hi));
                }
                out.push('\n');
            }
        }
        out
    }
}

impl Mdp {
    pub fn to_json(&self) -> String {
        degenerate(self).to_json()
    }

    pub fn from_json(text: &str) -> Result<Mdp, MarkovError> {
        let model: JsonModel =
            serde_json::from_str(text).map_err(|e| MarkovError::Json(e.to_string()))?;
        let raw = model
            .rows
            .iter()
            .map(|r| {
                (
                    StateId(r.state),
                    from_json_action(&r.action),
                    r.edges.iter().map(|e| (StateId(e.to), e.lo)).collect(),
                )
            })
            .collect();
        let labels = model.labels.into_iter().map(|l| l.into_iter().collect()).collect();
        new_mdp(model.states, StateId(model.initial), raw, labels)
    }
}
