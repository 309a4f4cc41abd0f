//! Reachability probability bounds for IMDPs.
//!
//! The main entry point is [`reach_interval`], which computes, per state,
//! the minimum and maximum probability of eventually reaching a labeled
//! target set, where both the scheduler and the interval-consistent
//! resolution of each row range adversarially. Acyclic models (ignoring
//! absorbing self-loops) are solved exactly in a single backward pass;
//! cyclic models fall back to value iteration.
//!
//! [`reach_brute_force`] is an independent exact oracle for small models:
//! it enumerates every stationary deterministic choice of action and row
//! vertex and solves each induced Markov chain by linear elimination. The
//! row value is multilinear in the transition probabilities, so extrema
//! are attained at polytope vertices and the enumeration is exhaustive.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::linalg::{solve_dense, LinalgError};
use crate::markov::{Imdp, ImdpRow, StateId};

/// Sup-norm convergence tolerance for value iteration.
pub const VI_TOL: f64 = 1e-9;
/// Iteration cap for value iteration.
pub const VI_MAX_ITERS: u64 = 1_000_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CheckerError {
    #[error("value iteration did not converge within {iterations} iterations")]
    NotConverged { iterations: u64 },
    #[error("brute-force enumeration would visit {combinations} policies (limit {limit})")]
    TooManyCombinations { combinations: u128, limit: u128 },
    #[error("induced chain solve failed: {0}")]
    Chain(#[from] LinalgError),
}

/// Per-state reachability bounds plus solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachResult {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub iterations: u64,
    pub converged: bool,
    /// Whether the acyclic single-pass solver was used.
    pub acyclic: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    Min,
    Max,
}

/// Extremal value of one interval row against a fixed value vector:
/// sort successors by value (descending for max, ascending for min, ties
/// by state id), start every edge at its lower bound, then spend the
/// remaining mass greedily up to each upper bound.
fn extremal_row_value(edges: &[(StateId, f64, f64)], values: &[f64], obj: Objective) -> f64 {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&i, &j| {
        let (vi, vj) = (values[edges[i].0 .0], values[edges[j].0 .0]);
        let primary = match obj {
            Objective::Max => vj.total_cmp(&vi),
            Objective::Min => vi.total_cmp(&vj),
        };
        primary.then(edges[i].0.cmp(&edges[j].0))
    });
    let lo_sum: f64 = edges.iter().map(|e| e.1).sum();
    let mut slack = (1.0 - lo_sum).max(0.0);
    let mut total = 0.0;
    for &i in &order {
        let (succ, lo, hi) = edges[i];
        let add = slack.min(hi - lo);
        total += (lo + add) * values[succ.0];
        slack -= add;
    }
    total
}

fn target_mask(im: &Imdp, target_label: &str) -> Vec<bool> {
    (0..im.n_states()).map(|s| im.labels(StateId(s)).contains(target_label)).collect()
}

/// States whose every action only self-loops (with certainty).
fn absorbing_mask(im: &Imdp) -> Vec<bool> {
    (0..im.n_states())
        .map(|s| {
            im.rows(StateId(s))
                .iter()
                .all(|r| r.edges.iter().all(|&(t, _, _)| t.0 == s))
        })
        .collect()
}

/// Reverse topological order over non-absorbing states, or None if the
/// transition graph (self-loops of absorbing states excluded) has a cycle.
fn reverse_topological(im: &Imdp, absorbing: &[bool]) -> Option<Vec<usize>> {
    let n = im.n_states();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for s in 0..n {
        if absorbing[s] {
            continue;
        }
        let mut succs = BTreeSet::new();
        for r in im.rows(StateId(s)) {
            for &(t, _, _) in &r.edges {
                if t.0 == s {
                    return None; // genuine self-loop on a non-absorbing state
                }
                if !absorbing[t.0] {
                    succs.insert(t.0);
                }
            }
        }
        for t in succs {
            out[s].push(t);
            indeg[t] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| !absorbing[s] && indeg[s] == 0).collect();
    let mut topo = Vec::new();
    while let Some(s) = queue.pop_front() {
        topo.push(s);
        for &t in &out[s] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                queue.push_back(t);
            }
        }
    }
    if topo.len() == (0..n).filter(|&s| !absorbing[s]).count() {
        topo.reverse();
        Some(topo)
    } else {
        None
    }
}

fn state_value(im: &Imdp, s: usize, values: &[f64], obj: Objective) -> f64 {
    let mut best = match obj {
        Objective::Max => f64::NEG_INFINITY,
        Objective::Min => f64::INFINITY,
    };
    for r in im.rows(StateId(s)) {
        let v = extremal_row_value(&r.edges, values, obj);
        best = match obj {
            Objective::Max => best.max(v),
            Objective::Min => best.min(v),
        };
    }
    best
}

fn solve_one(
    im: &Imdp,
    target: &[bool],
    absorbing: &[bool],
    topo: Option<&[usize]>,
    obj: Objective,
) -> (Vec<f64>, u64, bool) {
    let n = im.n_states();
    let mut values: Vec<f64> = target.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    if let Some(order) = topo {
        for &s in order {
            if !target[s] {
                values[s] = state_value(im, s, &values, obj);
            }
        }
        return (values, 1, true);
    }
    let mut iterations = 0;
    while iterations < VI_MAX_ITERS {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if target[s] || absorbing[s] {
                continue;
            }
            let v = state_value(im, s, &values, obj);
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        if delta < VI_TOL {
            return (values, iterations, true);
        }
    }
    (values, iterations, false)
}

/// Min and max probability of eventually reaching a `target_label` state,
/// per state, over all schedulers and interval-consistent resolutions.
pub fn reach_interval(im: &Imdp, target_label: &str) -> ReachResult {
    let target = target_mask(im, target_label);
    let absorbing = absorbing_mask(im);
    let topo = reverse_topological(im, &absorbing);
    let acyclic = topo.is_some();
    let (p_min, it_min, conv_min) =
        solve_one(im, &target, &absorbing, topo.as_deref(), Objective::Min);
    let (p_max, it_max, conv_max) =
        solve_one(im, &target, &absorbing, topo.as_deref(), Objective::Max);
    ReachResult {
        p_min,
        p_max,
        iterations: it_min.max(it_max),
        converged: conv_min && conv_max,
        acyclic,
    }
}

// --- brute-force oracle -------------------------------------------------

/// Vertices of one row's feasibility polytope: greedy fill of the slack
/// mass over every successor ordering above the lower bounds, deduplicated.
fn row_vertices(row: &ImdpRow) -> Vec<Vec<(StateId, f64)>> {
    let edges = &row.edges;
    let k = edges.len();
    let lo_sum: f64 = edges.iter().map(|e| e.1).sum();
    let mut perms: Vec<Vec<usize>> = Vec::new();
    permutations(&mut (0..k).collect::<Vec<_>>(), 0, &mut perms);
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut out = Vec::new();
    for perm in perms {
        let mut slack = (1.0 - lo_sum).max(0.0);
        let mut probs: Vec<f64> = edges.iter().map(|e| e.1).collect();
        for &i in &perm {
            let add = slack.min(edges[i].2 - edges[i].1);
            probs[i] += add;
            slack -= add;
        }
        let key: Vec<u64> = probs.iter().map(|p| p.to_bits()).collect();
        if seen.insert(key) {
            out.push(edges.iter().zip(&probs).map(|(e, &p)| (e.0, p)).collect());
        }
    }
    out
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Exact reach probability per state of a deterministic Markov chain.
fn chain_reach(chain: &[Vec<(StateId, f64)>], target: &[bool]) -> Result<Vec<f64>, CheckerError> {
    let n = chain.len();
    // Backward reachability of the target set.
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, edges) in chain.iter().enumerate() {
        for &(t, p) in edges {
            if p > 0.0 {
                pred[t.0].push(s);
            }
        }
    }
    let mut can_reach = target.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| target[s]).collect();
    while let Some(s) = queue.pop_front() {
        for &p in &pred[s] {
            if !can_reach[p] {
                can_reach[p] = true;
                queue.push_back(p);
            }
        }
    }

    let transient: Vec<usize> =
        (0..n).filter(|&s| can_reach[s] && !target[s]).collect();
    let pos: BTreeMap<usize, usize> =
        transient.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let m = transient.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (i, &s) in transient.iter().enumerate() {
        a[i][i] = 1.0;
        for &(t, p) in &chain[s] {
            if target[t.0] {
                b[i] += p;
            } else if let Some(&j) = pos.get(&t.0) {
                a[i][j] -= p;
            }
        }
    }
    let x = if m > 0 { solve_dense(&a, &b)? } else { Vec::new() };
    let mut out = vec![0.0; n];
    for s in 0..n {
        if target[s] {
            out[s] = 1.0;
        } else if let Some(&i) = pos.get(&s) {
            out[s] = x[i].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Enumeration limit for the brute-force oracle.
pub const BRUTE_FORCE_LIMIT: u128 = 500_000;

/// Exhaustive min/max reach probabilities over all stationary deterministic
/// policies picking one action and one row vertex per state. Intended as a
/// test oracle for small models.
pub fn reach_brute_force(im: &Imdp, target_label: &str) -> Result<ReachResult, CheckerError> {
    let n = im.n_states();
    let target = target_mask(im, target_label);
    // Per state: flat list of candidate rows (action x vertex).
    let mut choices: Vec<Vec<Vec<(StateId, f64)>>> = Vec::with_capacity(n);
    for s in 0..n {
        let mut cands = Vec::new();
        for row in im.rows(StateId(s)) {
            cands.extend(row_vertices(row));
        }
        choices.push(cands);
    }
    let combinations: u128 = choices.iter().map(|c| c.len() as u128).product();
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(CheckerError::TooManyCombinations { combinations, limit: BRUTE_FORCE_LIMIT });
    }

    let mut p_min = vec![f64::INFINITY; n];
    let mut p_max = vec![f64::NEG_INFINITY; n];
    let mut pick = vec![0usize; n];
    loop {
        let chain: Vec<Vec<(StateId, f64)>> =
            (0..n).map(|s| choices[s][pick[s]].clone()).collect();
        let p = chain_reach(&chain, &target)?;
        for s in 0..n {
            p_min[s] = p_min[s].min(p[s]);
            p_max[s] = p_max[s].max(p[s]);
        }
        // Odometer increment over the per-state choice lists.
        let mut carry = true;
        for s in 0..n {
            if !carry {
                break;
            }
            pick[s] += 1;
            if pick[s] == choices[s].len() {
                pick[s] = 0;
            } else {
                carry = false;
            }
        }
        if carry {
            break;
        }
    }
    Ok(ReachResult { p_min, p_max, iterations: combinations as u64, converged: true, acyclic: false })
}
