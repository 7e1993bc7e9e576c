//! Trace-driven LRU, SIM-LRU and RND-LRU simulation.
//!
//! Occupancies are request-epoch averages: an item counts as present at a
//! request if it is cached just before that request is applied.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{NeighborIndex, QModel};
use crate::error::{Error, Result};
use crate::workload::RequestStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Lru,
    SimLru,
    RndLru,
}

impl Policy {
    /// Short tag used in method names (`Exp-SIM`, `Ours-RND`, ...).
    pub fn tag(self) -> &'static str {
        match self {
            Policy::Lru => "LRU",
            Policy::SimLru => "SIM",
            Policy::RndLru => "RND",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Lru => "lru",
            Policy::SimLru => "sim-lru",
            Policy::RndLru => "rnd-lru",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(Policy::Lru),
            "sim-lru" | "simlru" | "sim" => Ok(Policy::SimLru),
            "rnd-lru" | "rndlru" | "rnd" => Ok(Policy::RndLru),
            _ => Err(Error::InvalidParameter(format!(
                "unknown policy {s:?}, expected lru, sim-lru or rnd-lru"
            ))),
        }
    }
}

const NIL: usize = usize::MAX;

/// Recency-ordered cache contents over a fixed item universe.
#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: usize,
    prev: Vec<usize>,
    next: Vec<usize>,
    cached: Vec<bool>,
    head: usize,
    tail: usize,
    len: usize,
}

impl CacheState {
    pub fn new(capacity: usize, num_items: usize) -> Self {
        CacheState {
            capacity,
            prev: vec![NIL; num_items],
            next: vec![NIL; num_items],
            cached: vec![false; num_items],
            head: NIL,
            tail: NIL,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, item: usize) -> bool {
        self.cached[item]
    }

    fn unlink(&mut self, item: usize) {
        let (p, n) = (self.prev[item], self.next[item]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p] = n;
        }
        if n == NIL {
            self.tail = p;
        } else {
            self.prev[n] = p;
        }
        self.prev[item] = NIL;
        self.next[item] = NIL;
    }

    fn push_front(&mut self, item: usize) {
        self.prev[item] = NIL;
        self.next[item] = self.head;
        if self.head != NIL {
            self.prev[self.head] = item;
        }
        self.head = item;
        if self.tail == NIL {
            self.tail = item;
        }
    }

    /// Moves a cached item to the front.
    pub fn touch(&mut self, item: usize) {
        debug_assert!(self.cached[item]);
        if self.head != item {
            self.unlink(item);
            self.push_front(item);
        }
    }

    /// Inserts an uncached item at the front, evicting the back item if the
    /// capacity is exceeded.
    pub fn insert(&mut self, item: usize) -> Option<usize> {
        debug_assert!(!self.cached[item]);
        self.push_front(item);
        self.cached[item] = true;
        self.len += 1;
        if self.len > self.capacity {
            let victim = self.tail;
            self.unlink(victim);
            self.cached[victim] = false;
            self.len -= 1;
            Some(victim)
        } else {
            None
        }
    }

    /// Front (most recent) to back.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors((self.head != NIL).then_some(self.head), move |&i| {
            let n = self.next[i];
            (n != NIL).then_some(n)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub policy: Policy,
    pub capacity: usize,
    pub warmup_fraction: f64,
    /// Seed of the approximate-hit draws (RND-LRU), independent of the
    /// stream seed.
    pub seed: u64,
    /// Verify after every insertion (and by a full sweep every 1024
    /// requests) that no two SIM-LRU cached items are within the threshold.
    pub check_separation: bool,
}

impl SimConfig {
    pub fn new(policy: Policy, capacity: usize) -> Self {
        SimConfig {
            policy,
            capacity,
            warmup_fraction: 0.0,
            seed: 0,
            check_separation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: Policy,
    pub capacity: usize,
    pub threshold: f64,
    pub warmup_fraction: f64,
    pub total_requests: usize,
    pub measured_requests: usize,
    pub hits: u64,
    pub item_requests: Vec<u64>,
    pub item_hits: Vec<u64>,
    pub presence: Vec<u64>,
}

impl SimResult {
    pub fn hit_rate(&self) -> f64 {
        if self.measured_requests == 0 {
            0.0
        } else {
            self.hits as f64 / self.measured_requests as f64
        }
    }

    pub fn occupancies(&self) -> Vec<f64> {
        let r = self.measured_requests.max(1) as f64;
        self.presence.iter().map(|&p| p as f64 / r).collect()
    }

    fn same_configuration(&self, other: &SimResult) -> bool {
        self.policy == other.policy
            && self.capacity == other.capacity
            && self.threshold == other.threshold
            && self.warmup_fraction == other.warmup_fraction
            && self.total_requests == other.total_requests
            && self.presence.len() == other.presence.len()
    }
}

pub fn simulate(
    index: &NeighborIndex,
    q: &QModel,
    config: &SimConfig,
    stream: &RequestStream,
) -> Result<SimResult> {
    if config.capacity == 0 {
        return Err(Error::InvalidParameter(
            "capacity must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.warmup_fraction) {
        return Err(Error::InvalidParameter(format!(
            "warm-up fraction must lie in [0, 1), got {}",
            config.warmup_fraction
        )));
    }
    let num_items = index.len();
    let total = stream.len();
    let warmup = (config.warmup_fraction * total as f64).floor() as usize;
    let check = config.check_separation && config.policy == Policy::SimLru;

    let mut cache = CacheState::new(config.capacity, num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entered_at = vec![0usize; num_items];
    let mut presence = vec![0u64; num_items];
    let mut item_requests = vec![0u64; num_items];
    let mut item_hits = vec![0u64; num_items];
    let mut hits = 0u64;

    // Present at epochs [start, k] when evicted during request k.
    let credit =
        |start: usize, end_exclusive: usize| end_exclusive.saturating_sub(start.max(warmup)) as u64;

    for (k, n) in stream.iter().enumerate() {
        if n >= num_items {
            return Err(Error::UnknownItem(n));
        }
        let served_by = match config.policy {
            Policy::Lru => cache.contains(n).then_some(n),
            Policy::SimLru => closest_cached(index, &cache, n).map(|(m, _)| m),
            Policy::RndLru => closest_cached(index, &cache, n).and_then(|(m, dist)| {
                if m == n {
                    Some(m)
                } else {
                    let u: f64 = rng.gen();
                    (u < q.prob(dist)).then_some(m)
                }
            }),
        };

        let measuring = k >= warmup;
        if measuring {
            item_requests[n] += 1;
        }
        match served_by {
            Some(m) => {
                cache.touch(m);
                if measuring {
                    hits += 1;
                    item_hits[n] += 1;
                }
            }
            None => {
                entered_at[n] = k + 1;
                if let Some(victim) = cache.insert(n) {
                    presence[victim] += credit(entered_at[victim], k + 1);
                }
                if check {
                    check_inserted(index, &cache, n)?;
                }
            }
        }
        if check && k % 1024 == 0 {
            check_separation(index, &cache)?;
        }
    }
    for item in cache.iter() {
        presence[item] += credit(entered_at[item], total);
    }

    Ok(SimResult {
        policy: config.policy,
        capacity: config.capacity,
        threshold: index.threshold(),
        warmup_fraction: config.warmup_fraction,
        total_requests: total,
        measured_requests: total - warmup.min(total),
        hits,
        item_requests,
        item_hits,
        presence,
    })
}

/// First cached entry of n's ordered neighbourhood, with its distance.
fn closest_cached(index: &NeighborIndex, cache: &CacheState, n: usize) -> Option<(usize, f64)> {
    index
        .neighbors(n)
        .iter()
        .find(|e| cache.contains(e.item))
        .map(|e| (e.item, e.distance))
}

fn check_inserted(index: &NeighborIndex, cache: &CacheState, n: usize) -> Result<()> {
    match index.neighbors(n)[1..]
        .iter()
        .find(|e| cache.contains(e.item))
    {
        Some(e) => Err(Error::SeparationViolated {
            a: n,
            b: e.item,
            distance: e.distance,
        }),
        None => Ok(()),
    }
}

/// Full pairwise check that no two cached items lie within the threshold.
pub fn check_separation(index: &NeighborIndex, cache: &CacheState) -> Result<()> {
    cache
        .iter()
        .try_for_each(|n| check_inserted(index, cache, n))
}

/// Runs `replications` independent simulations of the same configuration.
/// Replication `k` draws its stream with seed `mix(stream_seed, k)` and its
/// approximate-hit coins with `mix(config.seed, k)`.
pub fn replicate(
    index: &NeighborIndex,
    q: &QModel,
    config: &SimConfig,
    stream: &RequestStream,
    replications: usize,
) -> Result<Vec<SimResult>> {
    let base = stream.seed().unwrap_or(0);
    (0..replications)
        .into_par_iter()
        .map(|k| {
            let cfg = SimConfig {
                seed: mix_seed(config.seed, k as u64),
                ..config.clone()
            };
            simulate(index, q, &cfg, &stream.reseeded(mix_seed(base, k as u64)))
        })
        .collect()
}

/// SplitMix64 finalizer over `seed + k`.
pub fn mix_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub mean_hit_rate: f64,
    /// `1.96 * s / sqrt(k)`; `None` with a single replication.
    pub ci_half_width: Option<f64>,
    pub occupancy: Vec<f64>,
}

impl ReplicationSummary {
    pub fn ci_bounds(&self) -> Option<(f64, f64)> {
        self.ci_half_width
            .map(|hw| (self.mean_hit_rate - hw, self.mean_hit_rate + hw))
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_bounds()
            .is_some_and(|(lo, hi)| lo <= value && value <= hi)
    }
}

pub fn aggregate_replications(results: &[SimResult]) -> Result<ReplicationSummary> {
    let Some(first) = results.first() else {
        return Err(Error::NoReplications);
    };
    if results.iter().any(|r| !r.same_configuration(first)) {
        return Err(Error::MixedConfigurations);
    }
    let k = results.len() as f64;
    let rates: Vec<f64> = results.iter().map(SimResult::hit_rate).collect();
    let mean = rates.iter().sum::<f64>() / k;
    let ci_half_width = (results.len() >= 2).then(|| {
        let var = rates.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (k - 1.0);
        1.96 * var.sqrt() / k.sqrt()
    });
    let mut occupancy = vec![0.0; first.presence.len()];
    for r in results {
        for (acc, o) in occupancy.iter_mut().zip(r.occupancies()) {
            *acc += o;
        }
    }
    occupancy.iter_mut().for_each(|o| *o /= k);
    Ok(ReplicationSummary {
        replications: results.len(),
        mean_hit_rate: mean,
        ci_half_width,
        occupancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, TieBreak};

    fn pair() -> (NeighborIndex, QModel) {
        let c = Catalog::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        (
            NeighborIndex::build(&c, 1.0, TieBreak::ItemId).unwrap(),
            QModel::sim_lru(1.0),
        )
    }

    #[test]
    fn cache_state_keeps_recency_order() {
        let mut c = CacheState::new(2, 4);
        assert_eq!(c.insert(0), None);
        assert_eq!(c.insert(1), None);
        c.touch(0);
        assert_eq!(c.iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(c.insert(2), Some(1));
        assert_eq!(c.iter().collect::<Vec<_>>(), vec![2, 0]);
        assert!(!c.contains(1));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn sim_lru_pair_hand_trace() {
        let (idx, q) = pair();
        let s = RequestStream::replay(vec![0, 1, 0, 1]);
        let r = simulate(&idx, &q, &SimConfig::new(Policy::SimLru, 1), &s).unwrap();
        assert_eq!(r.hits, 3);
        assert_eq!(r.hit_rate(), 0.75);
        assert_eq!(r.occupancies(), vec![0.75, 0.0]);
        assert_eq!(r.item_hits, vec![1, 2]);
    }

    #[test]
    fn lru_ignores_similarity() {
        let (idx, q) = pair();
        let s = RequestStream::replay(vec![0, 1, 0, 1]);
        let r = simulate(&idx, &q, &SimConfig::new(Policy::Lru, 1), &s).unwrap();
        assert_eq!(r.hits, 0);
    }

    #[test]
    fn warmup_prefix_is_discarded() {
        let (idx, q) = pair();
        let s = RequestStream::replay(vec![0, 1, 0, 1]);
        let cfg = SimConfig {
            warmup_fraction: 0.5,
            ..SimConfig::new(Policy::SimLru, 1)
        };
        let r = simulate(&idx, &q, &cfg, &s).unwrap();
        assert_eq!(r.measured_requests, 2);
        assert_eq!(r.hits, 2);
        assert_eq!(r.occupancies(), vec![1.0, 0.0]);
    }

    #[test]
    fn full_capacity_second_pass_hits() {
        let (idx, q) = pair();
        for policy in [Policy::Lru, Policy::SimLru, Policy::RndLru] {
            let s = RequestStream::replay(vec![0, 1, 0, 1, 1, 0]);
            let cfg = SimConfig {
                warmup_fraction: 1.0 / 3.0,
                ..SimConfig::new(policy, 2)
            };
            // first request warms both slots for LRU; similarity policies
            // never need the second slot
            let r = simulate(&idx, &q, &cfg, &s).unwrap();
            assert_eq!(r.hits as usize, r.measured_requests, "{policy}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (idx, q) = pair();
        let s = RequestStream::replay(vec![0]);
        assert!(simulate(&idx, &q, &SimConfig::new(Policy::Lru, 0), &s).is_err());
        let cfg = SimConfig {
            warmup_fraction: 1.0,
            ..SimConfig::new(Policy::Lru, 1)
        };
        assert!(simulate(&idx, &q, &cfg, &s).is_err());
    }

    fn result_with_hits(hits: u64) -> SimResult {
        SimResult {
            policy: Policy::SimLru,
            capacity: 1,
            threshold: 1.0,
            warmup_fraction: 0.0,
            total_requests: 10,
            measured_requests: 10,
            hits,
            item_requests: vec![10],
            item_hits: vec![hits],
            presence: vec![5],
        }
    }

    #[test]
    fn aggregation_examples() {
        let same = aggregate_replications(&[result_with_hits(4), result_with_hits(4)]).unwrap();
        assert_eq!(same.ci_half_width, Some(0.0));
        let two = aggregate_replications(&[result_with_hits(4), result_with_hits(6)]).unwrap();
        approx::assert_abs_diff_eq!(two.mean_hit_rate, 0.5, epsilon = 1e-15);
        let expected = 1.96 * 0.02f64.sqrt() / 2f64.sqrt();
        approx::assert_abs_diff_eq!(two.ci_half_width.unwrap(), expected, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(two.ci_half_width.unwrap(), 0.196, epsilon = 1e-3);
        let one = aggregate_replications(&[result_with_hits(4)]).unwrap();
        assert_eq!(one.ci_half_width, None);
        assert_eq!(one.ci_bounds(), None);
        let mut other = result_with_hits(4);
        other.capacity = 2;
        assert!(matches!(
            aggregate_replications(&[result_with_hits(4), other]),
            Err(Error::MixedConfigurations)
        ));
        assert!(matches!(
            aggregate_replications(&[]),
            Err(Error::NoReplications)
        ));
    }
}
