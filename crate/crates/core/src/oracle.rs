//! Exact steady state of the cache-state Markov chain for tiny instances.
//!
//! States are recency-ordered tuples of cached items. The jump chain is
//! driven by one request per step (item `n` with probability `lambda_n`).
//! Some chains are reducible (two mutually similar items under SIM-LRU
//! each form an absorbing singleton), so the result is the limit reached
//! from the empty cache, obtained by power iteration on the lazy chain
//! `(I + P) / 2`. The lazy chain has the same stationary vectors and is
//! aperiodic, and its limit equals the time average a cold-start simulation
//! measures.

use std::collections::HashMap;

use crate::catalog::{NeighborIndex, QModel};
use crate::error::{Error, Result};
use crate::simulator::Policy;

pub const MAX_STATES: usize = 100_000;
const TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub hit_rate: f64,
    /// Hit probability of a request for each item.
    pub hit: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub states: usize,
    /// `max |(pi P - pi)_s|` at the returned distribution.
    pub residual: f64,
    pub sweeps: usize,
}

type ChainState = Vec<usize>;

fn state_count(n: usize, c: usize) -> u128 {
    let mut total = 0u128;
    let mut perms = 1u128;
    for k in 0..=c.min(n) {
        total += perms;
        perms = perms.saturating_mul((n - k) as u128);
    }
    total
}

fn enumerate_states(n: usize, c: usize) -> Vec<ChainState> {
    fn extend(prefix: &mut ChainState, n: usize, c: usize, out: &mut Vec<ChainState>) {
        out.push(prefix.clone());
        if prefix.len() == c {
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                extend(prefix, n, c, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), n, c.min(n), &mut out);
    // depth-first generation in increasing item order is already lexicographic
    out
}

fn promote(state: &ChainState, item: usize) -> ChainState {
    let mut next = Vec::with_capacity(state.len());
    next.push(item);
    next.extend(state.iter().copied().filter(|&i| i != item));
    next
}

fn insert(state: &ChainState, item: usize, capacity: usize) -> ChainState {
    let mut next = Vec::with_capacity(capacity);
    next.push(item);
    next.extend(state.iter().copied().take(capacity - 1));
    next
}

/// Outcomes of a request for `n` in `state`: `(probability, hit, next)`.
fn outcomes(
    policy: Policy,
    index: &NeighborIndex,
    q: &QModel,
    capacity: usize,
    state: &ChainState,
    n: usize,
) -> Vec<(f64, bool, ChainState)> {
    let closest = || index.neighbors(n).iter().find(|e| state.contains(&e.item));
    match policy {
        Policy::Lru => {
            if state.contains(&n) {
                vec![(1.0, true, promote(state, n))]
            } else {
                vec![(1.0, false, insert(state, n, capacity))]
            }
        }
        Policy::SimLru => match closest() {
            Some(e) => vec![(1.0, true, promote(state, e.item))],
            None => vec![(1.0, false, insert(state, n, capacity))],
        },
        Policy::RndLru => match closest() {
            Some(e) if e.item == n => vec![(1.0, true, promote(state, n))],
            Some(e) => {
                let p = q.prob(e.distance);
                let mut v = Vec::with_capacity(2);
                if p > 0.0 {
                    v.push((p, true, promote(state, e.item)));
                }
                if p < 1.0 {
                    v.push((1.0 - p, false, insert(state, n, capacity)));
                }
                v
            }
            None => vec![(1.0, false, insert(state, n, capacity))],
        },
    }
}

pub fn exact_hit_rate(
    policy: Policy,
    index: &NeighborIndex,
    q: &QModel,
    lambda: &[f64],
    capacity: usize,
) -> Result<ExactResult> {
    let n = index.len();
    if lambda.len() != n {
        return Err(Error::InvalidParameter(
            "rate vector length mismatch".into(),
        ));
    }
    if capacity == 0 {
        return Err(Error::InvalidParameter(
            "capacity must be at least 1".into(),
        ));
    }
    let count = state_count(n, capacity);
    if count > MAX_STATES as u128 {
        return Err(Error::StateSpaceTooLarge {
            states: count,
            cap: MAX_STATES,
        });
    }
    let states = enumerate_states(n, capacity);
    let position: HashMap<&ChainState, usize> =
        states.iter().enumerate().map(|(k, s)| (s, k)).collect();

    // transitions[s] = (target, prob); hit_given[s][item] = P(hit | s, item)
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::with_capacity(states.len());
    let mut hit_given: Vec<Vec<f64>> = Vec::with_capacity(states.len());
    for s in &states {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut hits = vec![0.0; n];
        for (item, &rate) in lambda.iter().enumerate() {
            for (p, hit, next) in outcomes(policy, index, q, capacity, s, item) {
                if hit {
                    hits[item] += p;
                }
                if rate > 0.0 {
                    row.push((position[&next], rate * p));
                }
            }
        }
        row.sort_by_key(|&(t, _)| t);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        transitions.push(row);
        hit_given.push(hits);
    }

    let step = |pi: &[f64], out: &mut Vec<f64>| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, row) in transitions.iter().enumerate() {
            let mass = pi[s];
            if mass == 0.0 {
                continue;
            }
            for &(t, p) in row {
                out[t] += mass * p;
            }
        }
    };

    let mut pi = vec![0.0; states.len()];
    pi[0] = 1.0;
    let mut moved = vec![0.0; states.len()];
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        step(&pi, &mut moved);
        sweeps += 1;
        let mut delta = 0.0f64;
        for (p, m) in pi.iter_mut().zip(&moved) {
            let next = 0.5 * (*p + m);
            delta = delta.max((next - *p).abs());
            *p = next;
        }
        if delta <= TOLERANCE {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    step(&pi, &mut moved);
    let residual = pi
        .iter()
        .zip(&moved)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut hit = vec![0.0; n];
    let mut occupancy = vec![0.0; n];
    for (s, &mass) in states.iter().zip(&pi) {
        for &i in s {
            occupancy[i] += mass;
        }
    }
    for (hits, &mass) in hit_given.iter().zip(&pi) {
        for (h, p) in hit.iter_mut().zip(hits) {
            *h += mass * p;
        }
    }
    let hit_rate = lambda.iter().zip(&hit).map(|(l, h)| l * h).sum();
    Ok(ExactResult {
        hit_rate,
        hit,
        occupancy,
        states: states.len(),
        residual,
        sweeps,
    })
}
