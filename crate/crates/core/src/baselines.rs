//! Comparison estimators: classic LRU under the TTL approximation, LRU fed
//! with neighbourhood-aggregated rates, and the greedy maximum weighted
//! coverage static allocation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::catalog::NeighborIndex;
use crate::error::{Error, Result};
use crate::solver::bisect_increasing;

#[derive(Debug, Clone, PartialEq)]
pub struct TtlEstimate {
    pub t_c: f64,
    /// Per-item hit probability, equal to the occupancy.
    pub hit: Vec<f64>,
    /// `sum_n lambda_n h_n` with the original (not aggregated) rates.
    pub hit_rate: f64,
}

fn lru_with_rates(effective: &[f64], lambda: &[f64], capacity: usize) -> Result<TtlEstimate> {
    let reachable = effective.iter().filter(|&&r| r > 0.0).count();
    if capacity == 0 || capacity >= reachable {
        return Err(Error::InfeasibleCapacity {
            capacity,
            reachable,
        });
    }
    let g = |t: f64| effective.iter().map(|&r| -(-r * t).exp_m1()).sum::<f64>();
    let t_c = bisect_increasing(g, capacity as f64);
    let hit: Vec<f64> = effective.iter().map(|&r| -(-r * t_c).exp_m1()).collect();
    let hit_rate = lambda.iter().zip(&hit).map(|(l, h)| l * h).sum();
    Ok(TtlEstimate { t_c, hit, hit_rate })
}

/// `h_n = 1 - exp(-lambda_n t_C)` with `sum_n h_n = C`.
pub fn lru_ttl(lambda: &[f64], capacity: usize) -> Result<TtlEstimate> {
    lru_with_rates(lambda, lambda, capacity)
}

pub fn aggregate_rates(lambda: &[f64], index: &NeighborIndex) -> Vec<f64> {
    (0..index.len())
        .map(|n| index.neighbors(n).iter().map(|e| lambda[e.item]).sum())
        .collect()
}

/// LRU where each item is requested at the total rate of its neighbourhood.
pub fn lru_agg(lambda: &[f64], index: &NeighborIndex, capacity: usize) -> Result<TtlEstimate> {
    if lambda.len() != index.len() {
        return Err(Error::InvalidParameter(
            "rate vector length mismatch".into(),
        ));
    }
    lru_with_rates(&aggregate_rates(lambda, index), lambda, capacity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInstance {
    pub weights: Vec<f64>,
    pub sets: Vec<Vec<usize>>,
    pub budget: usize,
}

impl CoverageInstance {
    /// Sets are the closed neighbourhoods `N[n]`, weights the request rates.
    pub fn from_index(index: &NeighborIndex, lambda: &[f64], budget: usize) -> Self {
        CoverageInstance {
            weights: lambda.to_vec(),
            sets: (0..index.len())
                .map(|n| index.neighbors(n).iter().map(|e| e.item).collect())
                .collect(),
            budget,
        }
    }

    pub fn covered_weight(&self, selection: &[usize]) -> f64 {
        let mut covered = vec![false; self.weights.len()];
        for &s in selection {
            for &e in &self.sets[s] {
                covered[e] = true;
            }
        }
        covered
            .iter()
            .zip(&self.weights)
            .filter(|(c, _)| **c)
            .map(|(_, w)| w)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub selected: Vec<usize>,
    /// Marginal covered weight of each pick, in pick order.
    pub gains: Vec<f64>,
    pub covered_weight: f64,
}

#[derive(PartialEq)]
struct Candidate {
    gain: f64,
    set: usize,
    round: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.set.cmp(&self.set))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy maximum weighted coverage: repeatedly takes the set with the
/// largest residual weight (lowest index on ties) until the budget is spent
/// or nothing uncovered remains.
///
/// Marginal gains can only shrink, so stale heap entries are upper bounds and
/// are refreshed lazily.
pub fn greedy_coverage(instance: &CoverageInstance) -> Coverage {
    let mut covered = vec![false; instance.weights.len()];
    let residual = |set: usize, covered: &[bool]| -> f64 {
        instance.sets[set]
            .iter()
            .filter(|&&e| !covered[e])
            .map(|&e| instance.weights[e])
            .sum()
    };
    let mut heap: BinaryHeap<Candidate> = (0..instance.sets.len())
        .map(|set| Candidate {
            gain: residual(set, &covered),
            set,
            round: 0,
        })
        .collect();

    let mut selected = Vec::new();
    let mut gains = Vec::new();
    while selected.len() < instance.budget {
        let Some(top) = heap.pop() else { break };
        if top.round != selected.len() {
            heap.push(Candidate {
                gain: residual(top.set, &covered),
                set: top.set,
                round: selected.len(),
            });
            continue;
        }
        if top.gain <= 0.0 {
            break;
        }
        for &e in &instance.sets[top.set] {
            covered[e] = true;
        }
        selected.push(top.set);
        gains.push(top.gain);
    }
    let covered_weight = covered
        .iter()
        .zip(&instance.weights)
        .filter(|(c, _)| **c)
        .map(|(_, w)| w)
        .sum();
    Coverage {
        selected,
        gains,
        covered_weight,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, TieBreak};
    use approx::assert_abs_diff_eq;

    fn line(weights: Vec<f64>, d: f64) -> (Vec<f64>, NeighborIndex) {
        let n = weights.len();
        let c = Catalog::new((0..n).map(|i| vec![i as f64]).collect(), weights).unwrap();
        let idx = NeighborIndex::build(&c, d, TieBreak::ItemId).unwrap();
        (c.rates().to_vec(), idx)
    }

    #[test]
    fn lru_ttl_symmetric_pair() {
        let r = lru_ttl(&[0.5, 0.5], 1).unwrap();
        assert_abs_diff_eq!(r.hit[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t_c, 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert!(matches!(
            lru_ttl(&[1.0], 1),
            Err(Error::InfeasibleCapacity { .. })
        ));
    }

    #[test]
    fn lru_ttl_skewed_pair() {
        // independent route: Newton on exp(-0.75 t) + exp(-0.25 t) - 1
        let mut t = 1.0f64;
        for _ in 0..50 {
            let f = (-0.75 * t).exp() + (-0.25 * t).exp() - 1.0;
            let df = -0.75 * (-0.75 * t).exp() - 0.25 * (-0.25 * t).exp();
            t -= f / df;
        }
        let r = lru_ttl(&[0.75, 0.25], 1).unwrap();
        assert_abs_diff_eq!(r.t_c, t, epsilon = 1e-10);
        assert_abs_diff_eq!(r.t_c, 1.528980, epsilon = 1e-6);
        assert_abs_diff_eq!(r.hit[0], 0.682328, epsilon = 1e-6);
        assert_abs_diff_eq!(r.hit[1], 0.317672, epsilon = 1e-6);
        assert_abs_diff_eq!(r.hit.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lru_agg_examples() {
        let (lambda, isolated) = line(vec![0.5, 0.3, 0.2], 0.5);
        assert_eq!(
            lru_agg(&lambda, &isolated, 1).unwrap(),
            lru_ttl(&lambda, 1).unwrap()
        );

        let (lambda, idx) = line(vec![0.6, 0.4], 1.0);
        let r = lru_agg(&lambda, &idx, 1).unwrap();
        assert_abs_diff_eq!(r.hit[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t_c, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.hit_rate, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn aggregation_only_adds_rate() {
        let (lambda, idx) = line(vec![0.1, 0.4, 0.2, 0.3], 1.0);
        let agg = aggregate_rates(&lambda, &idx);
        for t in [0.5, 2.0] {
            for (a, l) in agg.iter().zip(&lambda) {
                assert!(1.0 - (-a * t).exp() >= 1.0 - (-l * t).exp());
            }
        }
    }

    #[test]
    fn greedy_line_picks_middle() {
        let (lambda, idx) = line(vec![0.2, 0.5, 0.3], 1.0);
        let g = greedy_coverage(&CoverageInstance::from_index(&idx, &lambda, 1));
        assert_eq!(g.selected, vec![1]);
        assert_abs_diff_eq!(g.covered_weight, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn greedy_full_budget_covers_everything_and_stops_early() {
        let (lambda, idx) = line(vec![0.2, 0.5, 0.3, 0.1, 0.4], 1.0);
        let g = greedy_coverage(&CoverageInstance::from_index(&idx, &lambda, 5));
        assert_abs_diff_eq!(g.covered_weight, 1.0, epsilon = 1e-12);
        assert!(g.selected.len() < 5);
        assert!(g.gains.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn greedy_ties_prefer_lowest_id() {
        let inst = CoverageInstance {
            weights: vec![0.25; 4],
            sets: vec![vec![0], vec![1, 2], vec![2, 3], vec![3]],
            budget: 1,
        };
        assert_eq!(greedy_coverage(&inst).selected, vec![1]);
    }
}
