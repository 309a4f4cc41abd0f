//! Automatic emergency braking case study: discrete kinematics, the
//! TTC / warning-index braking controller, a synthetic stochastic
//! detector, Monte Carlo simulation, and a conservative grid abstraction
//! of the controller-plant loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{new_mdp, ActionLabel, Mdp, StateId};
use crate::stats::{clopper_pearson, sigmoid, AxisBox, BinomialSample, ConfidenceInterval};
use crate::abstraction::{PerceptionDataset, TruthModel};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AebsError {
    #[error("bad grid: {0}")]
    Grid(String),
}

/// Ego-vehicle state: distance to the obstacle and forward speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarState {
    pub d: f64,
    pub v: f64,
}

/// All kinematics and controller constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AebsConfig {
    /// Time step (s).
    pub tau: f64,
    /// Maximum deceleration (m/s^2).
    pub a_max: f64,
    /// Partial braking power (m/s^2).
    pub b1: f64,
    /// Full braking power (m/s^2); equal to a_max.
    pub b2: f64,
    /// Warning-index threshold.
    pub c1: f64,
    /// Time-to-collision threshold (s).
    pub c2: f64,
    /// Driver reaction time (s).
    pub t_h: f64,
    /// System response delay (s).
    pub t_s: f64,
    /// Friction coefficient.
    pub u_fric: f64,
    /// Collision distance (m).
    pub l: f64,
    /// Initial distance (m).
    pub d0: f64,
    /// Initial speed (m/s).
    pub v0: f64,
}

impl Default for AebsConfig {
    fn default() -> Self {
        AebsConfig {
            tau: 0.8,
            a_max: 26.0,
            b1: 13.0,
            b2: 26.0,
            c1: 0.8,
            c2: 1.8,
            t_h: 2.0,
            t_s: 0.0,
            u_fric: 1.0,
            l: 5.0,
            d0: 50.0,
            v0: 20.0,
        }
    }
}

/// Logistic detector: P(detect | distance d) = sigmoid(k (d - x0)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPerception {
    pub k: f64,
    pub x0: f64,
}

impl Default for SyntheticPerception {
    fn default() -> Self {
        SyntheticPerception { k: -0.1, x0: 35.0 }
    }
}

impl SyntheticPerception {
    pub fn prob_at(&self, d: f64) -> f64 {
        sigmoid(self.k * (d - self.x0))
    }
}

impl TruthModel for SyntheticPerception {
    fn prob(&self, x: &[f64]) -> f64 {
        self.prob_at(x[0])
    }

    fn range_over(&self, b: &AxisBox) -> (f64, f64) {
        // Monotone in d; endpoints suffice.
        let (p, q) = (self.prob_at(b.lower[0]), self.prob_at(b.upper[0]));
        (p.min(q), p.max(q))
    }
}

pub fn detection_probability(s: CarState, p: &SyntheticPerception) -> f64 {
    p.prob_at(s.d)
}

/// One kinematics step: distance shrinks by tau*v, speed drops by tau*b,
/// clamped at zero.
pub fn dynamics_step(s: CarState, b: f64, cfg: &AebsConfig) -> CarState {
    CarState { d: s.d - cfg.tau * s.v, v: (s.v - cfg.tau * b).max(0.0) }
}

/// Braking decision from time-to-collision and warning index. No detection
/// (or a stopped car) means no braking; both triggers clear means none;
/// exactly one crossed means partial; both crossed means full.
pub fn braking_command(s: CarState, detected: bool, cfg: &AebsConfig) -> f64 {
    if !detected || s.v <= 0.0 {
        return 0.0;
    }
    let ttc = s.d / s.v;
    let d_br = s.v * cfg.t_s + cfg.u_fric * s.v * s.v / (2.0 * cfg.a_max);
    let wi = (s.d - d_br) / (s.v * cfg.t_h);
    let ttc_crossed = ttc <= cfg.c2;
    let wi_crossed = wi <= cfg.c1;
    match (ttc_crossed, wi_crossed) {
        (false, false) => 0.0,
        (true, true) => cfg.b2,
        _ => cfg.b1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Safe,
    Collision,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub d: f64,
    pub v: f64,
    pub detected: bool,
    pub b: f64,
}

/// Simulate one closed-loop episode. `detect_prob` maps distance to the
/// chance of detection at that step. Terminates with a collision when
/// d <= L and safely when the car stops beforehand.
pub fn simulate_trace(
    cfg: &AebsConfig,
    detect_prob: impl Fn(f64) -> f64,
    seed: u64,
) -> (Vec<TraceStep>, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = CarState { d: cfg.d0, v: cfg.v0 };
    let mut trace = Vec::new();
    for t in 0..1_000_000 {
        if s.d <= cfg.l {
            return (trace, Outcome::Collision);
        }
        if s.v <= 0.0 {
            return (trace, Outcome::Safe);
        }
        let detected = rng.gen::<f64>() < detect_prob(s.d);
        let b = braking_command(s, detected, cfg);
        trace.push(TraceStep { t, d: s.d, v: s.v, detected, b });
        s = dynamics_step(s, b, cfg);
    }
    unreachable!("trace did not terminate");
}

/// Trace dump CSV: `t,d,v,detected,b`.
pub fn trace_to_csv(trace: &[TraceStep]) -> String {
    let mut out = String::from("t,d,v,detected,b\n");
    for s in trace {
        out.push_str(&format!("{},{},{},{},{}\n", s.t, s.d, s.v, u8::from(s.detected), s.b));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub safe: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci: ConfidenceInterval,
}

/// Monte Carlo safety probability with a 95% Clopper-Pearson interval.
/// Per-trial seeds are drawn from one master stream for reproducibility.
pub fn monte_carlo_safety(
    cfg: &AebsConfig,
    detect_prob: impl Fn(f64) -> f64,
    n_trials: u64,
    seed: u64,
) -> McEstimate {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut safe = 0;
    for _ in 0..n_trials {
        let trial_seed = master.gen::<u64>();
        if simulate_trace(cfg, &detect_prob, trial_seed).1 == Outcome::Safe {
            safe += 1;
        }
    }
    let sample = BinomialSample { k: safe, n: n_trials };
    let ci = clopper_pearson(sample, 0.05).expect("valid binomial sample");
    McEstimate { safe, trials: n_trials, estimate: safe as f64 / n_trials as f64, ci }
}

/// Uniformly sampled distances labeled by Bernoulli detections.
pub fn generate_dataset(
    per: &SyntheticPerception,
    n_points: usize,
    range: (f64, f64),
    seed: u64,
) -> PerceptionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n_points);
    let mut zs = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x = if range.0 < range.1 { rng.gen_range(range.0..range.1) } else { range.0 };
        let z = rng.gen::<f64>() < per.prob_at(x);
        xs.push(vec![x]);
        zs.push(z);
    }
    PerceptionDataset { xs, zs }
}

/// Rectangular grid over (d, v) space. The collision distance must lie on
/// a d-edge so no cell mixes colliding and clear distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d_edges: Vec<f64>,
    pub v_edges: Vec<f64>,
}

impl GridSpec {
    /// Default: 1 m distance cells over [0, 50]; speed cells offset by a
    /// half so the initial speed sits mid-cell.
    pub fn default_for(cfg: &AebsConfig) -> GridSpec {
        let d_edges = (0..=cfg.d0.ceil() as usize).map(|i| i as f64).collect();
        let mut v_edges = vec![0.0, 0.5];
        let mut v = 0.5;
        while v < cfg.v0 + 0.5 - 1e-9 {
            v += 1.0;
            v_edges.push(v);
        }
        GridSpec { d_edges, v_edges }
    }

    fn validate(&self, cfg: &AebsConfig) -> Result<(), AebsError> {
        for edges in [&self.d_edges, &self.v_edges] {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(AebsError::Grid("edges must be strictly increasing".into()));
            }
        }
        if !self.d_edges.iter().any(|&e| (e - cfg.l).abs() < 1e-9) {
            return Err(AebsError::Grid(format!("collision distance {} not on a d-edge", cfg.l)));
        }
        if self.v_edges[0] != 0.0 {
            return Err(AebsError::Grid("v-edges must start at 0".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        (self.d_edges.len() - 1) * (self.v_edges.len() - 1)
    }

    fn axis_index(edges: &[f64], x: f64) -> Option<usize> {
        if x < edges[0] || x > *edges.last().unwrap() {
            return None;
        }
        let n = edges.len() - 1;
        for i in 0..n {
            if x < edges[i + 1] || (i == n - 1 && x <= edges[i + 1]) {
                return Some(i);
            }
        }
        None
    }

    /// Cell index for a concrete state (half-open cells, closed top edge).
    pub fn cell_index(&self, d: f64, v: f64) -> Option<usize> {
        let di = Self::axis_index(&self.d_edges, d)?;
        let vi = Self::axis_index(&self.v_edges, v)?;
        Some(di * (self.v_edges.len() - 1) + vi)
    }

    pub fn cell_box(&self, idx: usize) -> AxisBox {
        let nv = self.v_edges.len() - 1;
        let (di, vi) = (idx / nv, idx % nv);
        AxisBox::new(
            vec![self.d_edges[di], self.v_edges[vi]],
            vec![self.d_edges[di + 1], self.v_edges[vi + 1]],
        )
    }
}

/// Grid abstraction of the controller-plant loop, plus bookkeeping for
/// composition and soundness checking.
#[derive(Clone, Debug)]
pub struct McplAbstraction {
    pub mdp: Mdp,
    /// 2-D (d, v) cell per state; None for the terminal states.
    pub cells: Vec<Option<AxisBox>>,
    pub stopped: StateId,
    pub collision: StateId,
}

impl McplAbstraction {
    /// Per-state perception-space boxes (the distance axis only).
    pub fn perception_cells(&self) -> Vec<Option<AxisBox>> {
        self.cells
            .iter()
            .map(|c| c.as_ref().map(|b| AxisBox::new(vec![b.lower[0]], vec![b.upper[0]])))
            .collect()
    }
}

/// Interval range of the warning index over a cell; the denominator can
/// touch zero, in which case the range extends to infinity.
fn wi_range(dl: f64, dh: f64, vl: f64, vh: f64, cfg: &AebsConfig) -> (f64, f64) {
    let dbr_lo = vl * cfg.t_s + cfg.u_fric * vl * vl / (2.0 * cfg.a_max);
    let dbr_hi = vh * cfg.t_s + cfg.u_fric * vh * vh / (2.0 * cfg.a_max);
    let num_lo = dl - dbr_hi;
    let num_hi = dh - dbr_lo;
    let den_lo = vl * cfg.t_h;
    let den_hi = vh * cfg.t_h;
    let lo = if num_lo >= 0.0 {
        num_lo / den_hi
    } else if den_lo > 0.0 {
        num_lo / den_lo
    } else {
        f64::NEG_INFINITY
    };
    let hi = if num_hi <= 0.0 {
        num_hi / den_hi
    } else if den_lo > 0.0 {
        num_hi / den_lo
    } else {
        f64::INFINITY
    };
    (lo, hi)
}

/// Braking commands attainable somewhere in the cell under detection,
/// over-approximated by interval arithmetic on the two triggers.
fn attainable_commands(cell: &AxisBox, cfg: &AebsConfig) -> Vec<f64> {
    let (dl, dh) = (cell.lower[0], cell.upper[0]);
    let (vl, vh) = (cell.lower[1], cell.upper[1]);
    let ttc_lo = dl / vh;
    let ttc_hi = if vl > 0.0 { dh / vl } else { f64::INFINITY };
    let (wi_lo, wi_hi) = wi_range(dl, dh, vl, vh, cfg);
    let mut out = Vec::new();
    // A cell touching v = 0 contains stopped states, which never brake.
    if (ttc_hi > cfg.c2 && wi_hi > cfg.c1) || vl == 0.0 {
        out.push(0.0);
    }
    if (ttc_lo <= cfg.c2 && wi_hi > cfg.c1) || (wi_lo <= cfg.c1 && ttc_hi > cfg.c2) {
        out.push(cfg.b1);
    }
    if ttc_lo <= cfg.c2 && wi_lo <= cfg.c1 {
        out.push(cfg.b2);
    }
    out
}

/// Forward image of a cell under one braking power (interval arithmetic).
fn forward_box(cell: &AxisBox, b: f64, cfg: &AebsConfig) -> AxisBox {
    let (dl, dh) = (cell.lower[0], cell.upper[0]);
    let (vl, vh) = (cell.lower[1], cell.upper[1]);
    AxisBox::new(
        vec![dl - cfg.tau * vh, (vl - cfg.tau * b).max(0.0)],
        vec![dh - cfg.tau * vl, (vh - cfg.tau * b).max(0.0)],
    )
}

fn build_abstraction_inner(
    grid: &GridSpec,
    cfg: &AebsConfig,
    mutate: bool,
) -> Result<McplAbstraction, AebsError> {
    grid.validate(cfg)?;
    let nc = grid.n_cells();
    let stopped = StateId(nc);
    let collision = StateId(nc + 1);
    let n_states = nc + 2;
    let mut labels = vec![std::collections::BTreeSet::new(); n_states];
    labels[collision.0].insert("bad".to_string());
    labels[stopped.0].insert("stopped".to_string());

    let mut raw_rows: Vec<(StateId, ActionLabel, Vec<(StateId, f64)>)> = Vec::new();
    for idx in 0..nc {
        let cell = grid.cell_box(idx);
        let state = StateId(idx);
        if cell.upper[0] <= cfg.l {
            // Entirely at or below the collision distance.
            raw_rows.push((state, ActionLabel::reach(0), vec![(collision, 1.0)]));
            continue;
        }
        for a_per in [false, true] {
            let mut commands = if a_per { attainable_commands(&cell, cfg) } else { vec![0.0] };
            if mutate && a_per && commands.len() > 1 {
                // Test instrumentation: deliberately under-approximate the
                // guard to exercise the soundness checker.
                commands.remove(0);
            }
            let mut next_reach: u32 = 0;
            for &b in &commands {
                let image = forward_box(&cell, b, cfg);
                let mut successors: Vec<StateId> = Vec::new();
                if image.lower[0] <= cfg.l {
                    successors.push(collision);
                }
                if image.lower[1] == 0.0 && image.upper[0] > cfg.l {
                    successors.push(stopped);
                }
                if image.upper[1] > 0.0 {
                    for t in 0..nc {
                        let c = grid.cell_box(t);
                        if c.upper[0] <= cfg.l {
                            continue; // covered by the collision edge
                        }
                        let d_over = image.lower[0] < c.upper[0] && image.upper[0] >= c.lower[0];
                        let v_over = image.lower[1] < c.upper[1] && image.upper[1] >= c.lower[1];
                        if d_over && v_over {
                            successors.push(StateId(t));
                        }
                    }
                }
                for t in successors {
                    raw_rows.push((state, ActionLabel::per_reach(a_per, next_reach), vec![(t, 1.0)]));
                    next_reach += 1;
                }
            }
        }
    }
    raw_rows.push((stopped, ActionLabel::reach(0), vec![(stopped, 1.0)]));
    raw_rows.push((collision, ActionLabel::reach(0), vec![(collision, 1.0)]));

    let initial = grid
        .cell_index(cfg.d0, cfg.v0)
        .ok_or_else(|| AebsError::Grid(format!("initial state ({}, {}) off-grid", cfg.d0, cfg.v0)))?;
    let mdp = new_mdp(n_states, StateId(initial), raw_rows, labels)
        .map_err(|e| AebsError::Grid(e.to_string()))?;
    let cells = (0..n_states)
        .map(|i| if i < nc { Some(grid.cell_box(i)) } else { None })
        .collect();
    Ok(McplAbstraction { mdp, cells, stopped, collision })
}

/// Conservative controller-plant abstraction: one state per grid cell plus
/// absorbing `stopped` and `collision` states; per perception action, one
/// reachability action per (attainable command, successor cell).
pub fn build_controller_plant_abstraction(
    grid: &GridSpec,
    cfg: &AebsConfig,
) -> Result<McplAbstraction, AebsError> {
    build_abstraction_inner(grid, cfg, false)
}

/// Deliberately unsound variant (drops one attainable braking command in
/// ambiguous cells); exists to validate that the soundness check catches
/// under-approximation.
pub fn build_mutated_abstraction(
    grid: &GridSpec,
    cfg: &AebsConfig,
) -> Result<McplAbstraction, AebsError> {
    build_abstraction_inner(grid, cfg, true)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConservativityReport {
    pub samples: usize,
    pub violations: usize,
    /// Up to ten (d, v, detected) witnesses.
    pub examples: Vec<(f64, f64, bool)>,
}

/// Sample concrete live states and verify that the concrete successor of
/// every perception action lies in some abstract successor of its cell.
pub fn check_mcpl_conservative(
    abs: &McplAbstraction,
    grid: &GridSpec,
    cfg: &AebsConfig,
    n_samples: usize,
    seed: u64,
) -> ConservativityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_max = *grid.d_edges.last().unwrap();
    let v_max = *grid.v_edges.last().unwrap();
    let mut report = ConservativityReport::default();
    while report.samples < n_samples {
        let d = rng.gen_range(cfg.l..d_max);
        let v = rng.gen_range(0.0..v_max);
        if v == 0.0 {
            continue;
        }
        let Some(cell_idx) = grid.cell_index(d, v) else { continue };
        let cell = grid.cell_box(cell_idx);
        if cell.upper[0] <= cfg.l {
            continue;
        }
        report.samples += 1;
        for detected in [false, true] {
            let s = CarState { d, v };
            let b = braking_command(s, detected, cfg);
            let next = dynamics_step(s, b, cfg);
            let concrete = if next.d <= cfg.l {
                abs.collision
            } else if next.v == 0.0 {
                abs.stopped
            } else {
                match grid.cell_index(next.d, next.v) {
                    Some(i) => StateId(i),
                    None => abs.collision, // off-grid only happens below L
                }
            };
            let covered = abs
                .mdp
                .rows(StateId(cell_idx))
                .iter()
                .filter(|r| r.action.per == Some(detected))
                .any(|r| r.edges.iter().any(|e| e.0 == concrete));
            if !covered {
                report.violations += 1;
                if report.examples.len() < 10 {
                    report.examples.push((d, v, detected));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Constants exercising the controller branches at small time steps.
    fn legacy_cfg() -> AebsConfig {
        AebsConfig {
            tau: 0.1,
            a_max: 10.0,
            b1: 4.0,
            b2: 10.0,
            c1: 0.0,
            c2: 1.5,
            ..AebsConfig::default()
        }
    }

    #[test]
    fn dynamics_step_examples() {
        let cfg = legacy_cfg();
        let s = dynamics_step(CarState { d: 50.0, v: 20.0 }, 0.0, &cfg);
        assert_eq!(s, CarState { d: 48.0, v: 20.0 });

        let stopped = dynamics_step(CarState { d: 10.0, v: 0.0 }, 4.0, &cfg);
        assert_eq!(stopped, CarState { d: 10.0, v: 0.0 });

        let clamped = dynamics_step(CarState { d: 10.0, v: 0.5 }, 10.0, &cfg);
        assert_eq!(clamped.v, 0.0);
    }

    #[test]
    fn braking_command_examples() {
        let cfg = legacy_cfg();
        // TTC = 2 > 1.5, WI = (40-20)/40 = 0.5 > 0: no braking.
        assert_eq!(braking_command(CarState { d: 40.0, v: 20.0 }, true, &cfg), 0.0);
        // TTC = 1 <= 1.5, WI = 0 <= 0: full braking.
        assert_eq!(braking_command(CarState { d: 20.0, v: 20.0 }, true, &cfg), cfg.b2);
        // Exactly one trigger crossed: partial braking.
        assert_eq!(braking_command(CarState { d: 25.0, v: 20.0 }, true, &cfg), cfg.b1);
        // Never brake without a detection.
        assert_eq!(braking_command(CarState { d: 1.0, v: 20.0 }, false, &cfg), 0.0);
    }

    #[test]
    fn monotone_braking_in_power() {
        let cfg = AebsConfig::default();
        let s = CarState { d: 30.0, v: 15.0 };
        let mut prev = f64::INFINITY;
        for b in [0.0, cfg.b1, cfg.b2] {
            let v = dynamics_step(s, b, &cfg).v;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn detection_probability_examples() {
        let p = SyntheticPerception::default();
        assert!((detection_probability(CarState { d: 35.0, v: 0.0 }, &p) - 0.5).abs() < 1e-12);
        assert!(
            (detection_probability(CarState { d: 45.0, v: 0.0 }, &p) - 0.268_941_421_369_995_1)
                .abs()
                < 1e-9
        );
        assert!(
            (detection_probability(CarState { d: 25.0, v: 0.0 }, &p) - 0.731_058_578_630_004_9)
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn never_detect_always_collides() {
        let (_, outcome) = simulate_trace(&AebsConfig::default(), |_| 0.0, 1);
        assert_eq!(outcome, Outcome::Collision);
    }

    #[test]
    fn traces_are_deterministic_under_seed() {
        let cfg = AebsConfig::default();
        let p = SyntheticPerception::default();
        let (a, oa) = simulate_trace(&cfg, |d| p.prob_at(d), 42);
        let (b, ob) = simulate_trace(&cfg, |d| p.prob_at(d), 42);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn always_detect_matches_reference_execution() {
        // (50, 20): triggers clear, cruise to (34, 20); then both triggers
        // crossed, full braking stops the car at d = 18.
        let cfg = AebsConfig::default();
        let (trace, outcome) = simulate_trace(&cfg, |_| 1.0, 7);
        assert_eq!(outcome, Outcome::Safe);
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[0].b, 0.0);
        assert!((trace[1].d - 34.0).abs() < 1e-12);
        assert_eq!(trace[1].b, cfg.b2);
    }

    #[test]
    fn collision_is_absorbing_in_simulation() {
        // Start below the collision distance: immediate collision even
        // under perfect detection.
        let cfg = AebsConfig { d0: 4.0, ..AebsConfig::default() };
        let (trace, outcome) = simulate_trace(&cfg, |_| 1.0, 3);
        assert_eq!(outcome, Outcome::Collision);
        assert!(trace.is_empty());
    }

    #[test]
    fn monte_carlo_never_detect_boundary_ci() {
        let mc = monte_carlo_safety(&AebsConfig::default(), |_| 0.0, 50, 5);
        assert_eq!(mc.estimate, 0.0);
        assert_eq!(mc.ci.lo, 0.0);
        assert!((mc.ci.hi - (1.0 - 0.025_f64.powf(1.0 / 50.0))).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_analytic_safety() {
        // With the default constants the episode is decided by a single
        // detection at d = 34, so the safety probability is sigmoid(0.1).
        let cfg = AebsConfig::default();
        let p = SyntheticPerception::default();
        let truth = sigmoid(-0.1 * (34.0 - 35.0));
        let mc = monte_carlo_safety(&cfg, |d| p.prob_at(d), 20_000, 11);
        assert!((mc.estimate - truth).abs() < 0.01, "est {} truth {truth}", mc.estimate);
        let mc2 = monte_carlo_safety(&cfg, |d| p.prob_at(d), 20_000, 12);
        let se = (truth * (1.0 - truth) / 20_000.0).sqrt();
        assert!((mc.estimate - mc2.estimate).abs() < 4.0 * 2.0_f64.sqrt() * se);
    }

    #[test]
    fn dataset_generation_is_deterministic_and_centered() {
        let p = SyntheticPerception::default();
        let a = generate_dataset(&p, 1000, (0.0, 60.0), 9);
        let b = generate_dataset(&p, 1000, (0.0, 60.0), 9);
        assert_eq!(a, b);

        let mid = generate_dataset(&p, 4000, (35.0, 35.0), 10);
        assert!(mid.xs.iter().all(|x| x[0] == 35.0));
        let rate = mid.zs.iter().filter(|&&z| z).count() as f64 / 4000.0;
        assert!((rate - 0.5).abs() < 0.03);
    }

    #[test]
    fn dataset_rates_concentrate_around_truth() {
        let p = SyntheticPerception::default();
        let data = generate_dataset(&p, 50_000, (0.0, 60.0), 21);
        for bin in 0..12 {
            let (lo, hi) = (bin as f64 * 5.0, bin as f64 * 5.0 + 5.0);
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| data.xs[i][0] >= lo && data.xs[i][0] < hi)
                .collect();
            let n = idx.len() as f64;
            let k = idx.iter().filter(|&&i| data.zs[i]).count() as f64;
            let pbar = p.prob_at(0.5 * (lo + hi));
            let se = (pbar * (1.0 - pbar) / n).sqrt();
            assert!((k / n - pbar).abs() < 3.0 * se + 0.01, "bin [{lo},{hi})");
        }
    }

    #[test]
    fn grid_requires_collision_edge() {
        let cfg = AebsConfig::default();
        let bad = GridSpec { d_edges: vec![0.0, 4.5, 50.0], v_edges: vec![0.0, 20.5] };
        assert!(matches!(
            build_controller_plant_abstraction(&bad, &cfg),
            Err(AebsError::Grid(_))
        ));
    }

    #[test]
    fn forward_box_matches_reference_interval() {
        // Cell d in [48, 50], v in [19, 20], no braking at a 0.1 s step.
        let cfg = legacy_cfg();
        let cell = AxisBox::new(vec![48.0, 19.0], vec![50.0, 20.0]);
        let img = forward_box(&cell, 0.0, &cfg);
        assert!((img.lower[0] - 46.0).abs() < 1e-12);
        assert!((img.upper[0] - 48.1).abs() < 1e-12);
        assert_eq!(img.lower[1], 19.0);
        assert_eq!(img.upper[1], 20.0);
    }

    #[test]
    fn no_detection_successors_cover_the_image() {
        let cfg = legacy_cfg();
        let grid = GridSpec {
            d_edges: vec![0.0, 5.0, 46.0, 47.0, 48.0, 50.0],
            v_edges: vec![0.0, 19.0, 20.0],
        };
        let abs = build_controller_plant_abstraction(&grid, &cfg).unwrap();
        let idx = grid.cell_index(49.0, 19.5).unwrap();
        let rows: Vec<_> = abs
            .mdp
            .rows(StateId(idx))
            .iter()
            .filter(|r| r.action.per == Some(false))
            .collect();
        // Image [46, 48.1] x [19, 20] overlaps the three d-cells 46-47,
        // 47-48, 48-50 at the same speed band.
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.edges.len(), 1);
            assert_eq!(r.edges[0].1, 1.0);
        }
    }

    #[test]
    fn collision_cells_feed_the_absorbing_state() {
        let cfg = AebsConfig::default();
        let grid = GridSpec::default_for(&cfg);
        let abs = build_controller_plant_abstraction(&grid, &cfg).unwrap();
        let idx = grid.cell_index(2.5, 10.0).unwrap();
        let rows = abs.mdp.rows(StateId(idx));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].edges, vec![(abs.collision, 1.0)]);
    }

    #[test]
    fn default_abstraction_is_conservative_and_mutant_is_not() {
        let cfg = AebsConfig::default();
        let grid = GridSpec::default_for(&cfg);
        let abs = build_controller_plant_abstraction(&grid, &cfg).unwrap();
        let report = check_mcpl_conservative(&abs, &grid, &cfg, 2000, 23);
        assert_eq!(report.violations, 0, "witnesses: {:?}", report.examples);

        let mutant = build_mutated_abstraction(&grid, &cfg).unwrap();
        let report = check_mcpl_conservative(&mutant, &grid, &cfg, 2000, 23);
        assert!(report.violations > 0);

        let empty = check_mcpl_conservative(&abs, &grid, &cfg, 0, 23);
        assert_eq!(empty.samples, 0);
        assert_eq!(empty.violations, 0);
    }

    #[test]
    fn trace_csv_schema() {
        let cfg = AebsConfig::default();
        let (trace, _) = simulate_trace(&cfg, |_| 1.0, 7);
        let csv = trace_to_csv(&trace);
        assert!(csv.starts_with("t,d,v,detected,b\n"));
        assert_eq!(csv.lines().count(), trace.len() + 1);
    }
}
