//! Shared helpers for integration tests: seeded random model generators.

use std::collections::BTreeSet;

use perception_imdp::markov::{new_imdp, new_mdp, ActionLabel, Imdp, Mdp, StateId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random distribution over up to `max_succ` distinct successors.
fn random_dist(rng: &mut ChaCha8Rng, n_states: usize, max_succ: usize) -> Vec<(StateId, f64)> {
    let k = rng.gen_range(1..=max_succ.min(n_states));
    let mut ids: Vec<usize> = (0..n_states).collect();
    ids.shuffle(rng);
    ids.truncate(k);
    ids.sort_unstable();
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut edges: Vec<(StateId, f64)> =
        ids.iter().zip(&weights).map(|(&s, &w)| (StateId(s), w / total)).collect();
    // Re-normalize exactly so the row-sum check is met.
    let sum: f64 = edges.iter().map(|e| e.1).sum();
    let last = edges.last_mut().unwrap();
    last.1 += 1.0 - sum;
    edges
}

fn random_labels(rng: &mut ChaCha8Rng, n_states: usize) -> Vec<BTreeSet<String>> {
    (0..n_states)
        .map(|_| {
            let mut l = BTreeSet::new();
            if rng.gen_bool(0.3) {
                l.insert("goal".to_string());
            }
            l
        })
        .collect()
}

/// Random MDP: 2-6 states, 1-3 actions per state, up to 4 successors.
pub fn random_mdp(seed: u64) -> Mdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let mut rows = Vec::new();
    for s in 0..n {
        let n_actions = rng.gen_range(1..=3);
        for a in 0..n_actions {
            rows.push((StateId(s), ActionLabel::reach(a), random_dist(&mut rng, n, 4)));
        }
    }
    let labels = random_labels(&mut rng, n);
    new_mdp(n, StateId(0), rows, labels).expect("generated MDP is valid")
}

/// Random IMDP sized so the brute-force policy enumeration stays within
/// its limit: larger state counts get fewer actions and successors.
pub fn random_imdp(seed: u64) -> Imdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let (max_actions, max_succ) = match n {
        2..=3 => (3, 4),
        4 => (3, 3),
        _ => (2, 2),
    };
    let mut rows = Vec::new();
    for s in 0..n {
        let n_actions = rng.gen_range(1..=max_actions);
        for a in 0..n_actions {
            let dist = random_dist(&mut rng, n, max_succ);
            let edges: Vec<(StateId, f64, f64)> = dist
                .into_iter()
                .map(|(t, p)| {
                    let w = rng.gen_range(0.0..0.3);
                    (t, (p - w).max(0.0), (p + w).min(1.0))
                })
                .collect();
            rows.push((StateId(s), ActionLabel::reach(a), edges));
        }
    }
    let labels = random_labels(&mut rng, n);
    new_imdp(n, StateId(0), rows, labels).expect("generated IMDP is valid")
}
