//! TTL approximation for RND-LRU and SIM-LRU.
//!
//! Under the approximation an unrefreshed item survives in the cache for the
//! characteristic time `t_C`. Item `n` alternates between an off period,
//! ended by a miss at rate `lambda_e[n]`, and an on period whose expected
//! length is `expm1(lambda_r[n] * t_C) / lambda_r[n]`, where `lambda_r[n]`
//! counts every request that moves `n` to the front (its own and those it
//! serves for neighbours). Presence events are treated as independent given
//! `t_C`, which turns the entry and refresh probabilities into products over
//! the ordered neighbourhoods. The resulting system is solved by a damped
//! fixed-point iteration, with `t_C` re-derived from the capacity
//! constraint at every step.

use rayon::prelude::*;

use crate::catalog::{NeighborIndex, QModel};
use crate::error::{Error, Result};

/// Exponent cap for `expm1(lambda_r * t_C)`.
pub const MAX_EXPONENT: f64 = 700.0;

pub fn entry_rates(o: &[f64], index: &NeighborIndex, q: &QModel, lambda: &[f64]) -> Vec<f64> {
    (0..index.len())
        .into_par_iter()
        .map(|n| {
            let mut none_closer = 1.0;
            let mut miss = 0.0;
            for e in &index.neighbors(n)[1..] {
                let i = e.item;
                miss += (1.0 - q.prob(e.distance)) * o[i] * none_closer;
                none_closer *= 1.0 - o[i];
            }
            lambda[n] * (none_closer + miss)
        })
        .collect()
}

/// Running products `prod_{positions < k} (1 - o)` along each list, so that
/// a neighbour at position `k` of `i`'s list sees `prefix[k]`.
fn prefix_products(o: &[f64], index: &NeighborIndex) -> Vec<Vec<f64>> {
    (0..index.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 1.0;
            index
                .neighbors(i)
                .iter()
                .map(|e| {
                    let before = acc;
                    acc *= 1.0 - o[e.item];
                    before
                })
                .collect()
        })
        .collect()
}

pub fn refresh_rates(o: &[f64], index: &NeighborIndex, q: &QModel, lambda: &[f64]) -> Vec<f64> {
    let prefix = prefix_products(o, index);
    (0..index.len())
        .into_par_iter()
        .map(|n| {
            index
                .neighbors(n)
                .iter()
                .zip(index.reverse_positions(n))
                .map(|(e, &pos)| lambda[e.item] * q.prob(e.distance) * prefix[e.item][pos])
                .sum()
        })
        .collect()
}

/// Expected on-period length `expm1(lambda_r * t) / lambda_r`, with the
/// exponent capped at [`MAX_EXPONENT`] and the `lambda_r -> 0` limit `t`.
fn on_time(lambda_r: f64, t_c: f64) -> f64 {
    if lambda_r <= 0.0 {
        return t_c;
    }
    (lambda_r * t_c).min(MAX_EXPONENT).exp_m1() / lambda_r
}

pub fn occupancy(lambda_e: f64, lambda_r: f64, t_c: f64) -> f64 {
    if lambda_e <= 0.0 {
        return 0.0;
    }
    // E[on] / (E[off] + E[on]) with E[off] = 1 / lambda_e
    let x = lambda_e * on_time(lambda_r, t_c);
    x / (1.0 + x)
}

pub fn occupancies(lambda_e: &[f64], lambda_r: &[f64], t_c: f64) -> Vec<f64> {
    lambda_e
        .iter()
        .zip(lambda_r)
        .map(|(&e, &r)| occupancy(e, r, t_c))
        .collect()
}

fn occupancy_sum(lambda_e: &[f64], lambda_r: &[f64], t_c: f64) -> f64 {
    lambda_e
        .iter()
        .zip(lambda_r)
        .map(|(&e, &r)| occupancy(e, r, t_c))
        .sum()
}

/// Solves `g(t) = target` for a nondecreasing `g` with `g(0) = 0`: doubles
/// an upper bracket, then bisects down to adjacent doubles. Returns the
/// bracket end with the smaller residual.
pub fn bisect_increasing(g: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while g(hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return lo;
        }
    }
    for _ in 0..2100 {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (g(lo) - target).abs() <= (g(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

/// Characteristic time at which the occupancies sum to `capacity`.
pub fn solve_tc(lambda_e: &[f64], lambda_r: &[f64], capacity: usize) -> Result<f64> {
    let reachable = lambda_e.iter().filter(|&&e| e > 0.0).count();
    if capacity == 0 || capacity >= reachable {
        return Err(Error::InfeasibleCapacity {
            capacity,
            reachable,
        });
    }
    let target = capacity as f64;
    Ok(bisect_increasing(
        |t| occupancy_sum(lambda_e, lambda_r, t),
        target,
    ))
}

pub fn hit_probs(o: &[f64], index: &NeighborIndex, q: &QModel) -> Vec<f64> {
    (0..index.len())
        .into_par_iter()
        .map(|n| {
            let mut h = o[n];
            let mut none_closer = 1.0;
            for e in &index.neighbors(n)[1..] {
                let i = e.item;
                h += q.prob(e.distance) * o[i] * none_closer;
                none_closer *= 1.0 - o[i];
            }
            h
        })
        .collect()
}

pub fn hit_rate(lambda: &[f64], h: &[f64]) -> f64 {
    lambda.iter().zip(h).map(|(l, h)| l * h).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    /// Stop once `max |o(j) - o(j-1)|` falls to this value.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Weight of the new prediction in the damped update.
    pub damping: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            epsilon: 1e-8,
            max_iterations: 100,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub t_c: f64,
    pub hit_rate: f64,
    /// `None` for the initial (LRU) point.
    pub max_delta_o: Option<f64>,
    /// Occupancy sum of the undamped prediction at `t_c`.
    pub capacity_sum: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub iteration: usize,
    pub occupancy: Vec<f64>,
    pub lambda_e: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub t_c: f64,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub occupancy: Vec<f64>,
    pub hit: Vec<f64>,
    pub lambda_e: Vec<f64>,
    pub lambda_r: Vec<f64>,
    pub t_c: f64,
    pub hit_rate: f64,
    /// Iteration 0 (LRU initialization) followed by one record per
    /// iteration.
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// Items whose hit probability exceeds one.
    pub overfull_hits: usize,
}

impl SolverResult {
    pub fn initial_t_c(&self) -> f64 {
        self.trace[0].t_c
    }

    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Damped fixed-point iteration. `observer` sees the state after every
/// iteration.
pub fn fixed_point_with(
    index: &NeighborIndex,
    q: &QModel,
    lambda: &[f64],
    capacity: usize,
    params: &SolverParams,
    mut observer: impl FnMut(&SolverState),
) -> Result<SolverResult> {
    if lambda.len() != index.len() {
        return Err(Error::InvalidParameter(format!(
            "{} rates for {} items",
            lambda.len(),
            index.len()
        )));
    }
    if params.epsilon.is_nan() || params.epsilon <= 0.0 {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    if !(params.damping > 0.0 && params.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping must lie in (0, 1], got {}",
            params.damping
        )));
    }

    let t0 = solve_tc(lambda, lambda, capacity)?;
    let mut o = occupancies(lambda, lambda, t0);
    let h0 = hit_probs(&o, index, q);
    let mut trace = vec![IterationRecord {
        iteration: 0,
        t_c: t0,
        hit_rate: hit_rate(lambda, &h0),
        max_delta_o: None,
        capacity_sum: o.iter().sum(),
    }];
    let mut t_c = t0;
    let mut lambda_e = lambda.to_vec();
    let mut lambda_r = lambda.to_vec();
    let mut converged = false;

    for j in 1..=params.max_iterations {
        lambda_e = entry_rates(&o, index, q, lambda);
        lambda_r = refresh_rates(&o, index, q, lambda);
        t_c = solve_tc(&lambda_e, &lambda_r, capacity)?;
        let predicted = occupancies(&lambda_e, &lambda_r, t_c);
        let capacity_sum = predicted.iter().sum();
        let mut delta = 0.0f64;
        for (old, new) in o.iter_mut().zip(&predicted) {
            let next = params.damping * new + (1.0 - params.damping) * *old;
            delta = delta.max((next - *old).abs());
            *old = next;
        }
        let h = hit_probs(&o, index, q);
        trace.push(IterationRecord {
            iteration: j,
            t_c,
            hit_rate: hit_rate(lambda, &h),
            max_delta_o: Some(delta),
            capacity_sum,
        });
        observer(&SolverState {
            iteration: j,
            occupancy: o.clone(),
            lambda_e: lambda_e.clone(),
            lambda_r: lambda_r.clone(),
            t_c,
        });
        if delta <= params.epsilon {
            converged = true;
            break;
        }
    }

    let hit = hit_probs(&o, index, q);
    Ok(SolverResult {
        hit_rate: hit_rate(lambda, &hit),
        overfull_hits: hit.iter().filter(|&&h| h > 1.0).count(),
        occupancy: o,
        hit,
        lambda_e,
        lambda_r,
        t_c,
        trace,
        converged,
    })
}

pub fn fixed_point(
    index: &NeighborIndex,
    q: &QModel,
    lambda: &[f64],
    capacity: usize,
    params: &SolverParams,
) -> Result<SolverResult> {
    fixed_point_with(index, q, lambda, capacity, params, |_| {})
}

/// Writes the convergence trace as `iteration,t_c,hit_rate,max_delta_o`;
/// the initial row leaves `max_delta_o` empty.
pub fn write_trace_csv<W: std::io::Write>(trace: &[IterationRecord], mut out: W) -> Result<()> {
    writeln!(out, "iteration,t_c,hit_rate,max_delta_o")?;
    for r in trace {
        match r.max_delta_o {
            Some(d) => writeln!(out, "{},{},{},{}", r.iteration, r.t_c, r.hit_rate, d)?,
            None => writeln!(out, "{},{},{},", r.iteration, r.t_c, r.hit_rate)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, TieBreak};
    use approx::assert_abs_diff_eq;

    fn pair(d: f64) -> NeighborIndex {
        let c = Catalog::new(vec![vec![0.0], vec![1.0]], vec![0.6, 0.4]).unwrap();
        NeighborIndex::build(&c, d, TieBreak::ItemId).unwrap()
    }

    fn isolated(n: usize) -> NeighborIndex {
        let c = Catalog::new((0..n).map(|i| vec![i as f64]).collect(), vec![1.0; n]).unwrap();
        NeighborIndex::build(&c, 0.5, TieBreak::ItemId).unwrap()
    }

    #[test]
    fn isolated_items_keep_their_rates() {
        let idx = isolated(3);
        let q = QModel::sim_lru(0.5);
        let lambda = [0.2, 0.3, 0.5];
        let o = [0.9, 0.1, 0.4];
        assert_eq!(entry_rates(&o, &idx, &q, &lambda), lambda.to_vec());
        assert_eq!(refresh_rates(&o, &idx, &q, &lambda), lambda.to_vec());
        assert_eq!(hit_probs(&[0.7, 0.0, 0.0], &idx, &q)[0], 0.7);
    }

    #[test]
    fn pair_entry_rates() {
        let idx = pair(1.0);
        let lambda = [0.6, 0.4];
        let o = [0.0, 0.5];
        let le = entry_rates(&o, &idx, &QModel::sim_lru(1.0), &lambda);
        assert_abs_diff_eq!(le[0], 0.3, epsilon = 1e-15);
        let q = QModel::step(1.0, &[(1.0, 0.25)]).unwrap();
        let le = entry_rates(&o, &idx, &q, &lambda);
        assert_abs_diff_eq!(le[0], 0.525, epsilon = 1e-15);
    }

    #[test]
    fn pair_refresh_rates() {
        let idx = pair(1.0);
        let lambda = [0.6, 0.4];
        let lr = refresh_rates(&[0.0, 0.5], &idx, &QModel::sim_lru(1.0), &lambda);
        assert_abs_diff_eq!(lr[0], 0.8, epsilon = 1e-15);
        let lr = refresh_rates(&[0.3, 0.5], &idx, &QModel::exact_only(1.0), &lambda);
        assert_eq!(lr, lambda.to_vec());
    }

    #[test]
    fn occupancy_formula() {
        for &(l, t) in &[(0.1, 3.0), (1.0, 0.5), (2.5, 7.0)] {
            assert_abs_diff_eq!(occupancy(l, l, t), 1.0 - (-l * t).exp(), epsilon = 1e-14);
        }
        assert_eq!(occupancy(0.0, 1.0, 5.0), 0.0);
        assert_abs_diff_eq!(occupancy(0.3, 0.0, 2.0), 0.6 / 1.6, epsilon = 1e-15);
        let e = 0.8f64.exp_m1() / 0.8;
        assert_abs_diff_eq!(e, 1.531926, epsilon = 1e-6);
        assert_abs_diff_eq!(
            occupancy(0.3, 0.8, 1.0),
            e / (1.0 / 0.3 + e),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(occupancy(0.3, 0.8, 1.0), 0.314870, epsilon = 1e-6);
        // capped exponent stays finite and monotone
        let big = occupancy(1e-3, 1.0, 1e6);
        assert!(big.is_finite() && big > 0.999_999 && big <= 1.0);
        assert!(occupancy(1e-3, 1.0, 1e7) >= big);
    }

    #[test]
    fn occupancy_matches_renewal_reward_simulation() {
        use rand::{Rng, SeedableRng};
        let (le, lr, t_c) = (0.3, 0.8, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut exp = |rate: f64| -(1.0 - rng.gen::<f64>()).ln() / rate;
        let (mut on, mut off) = (0.0, 0.0);
        for _ in 0..400_000 {
            off += exp(le);
            loop {
                let x = exp(lr);
                if x < t_c {
                    on += x;
                } else {
                    on += t_c;
                    break;
                }
            }
        }
        assert_abs_diff_eq!(on / (on + off), occupancy(le, lr, t_c), epsilon = 2e-3);
    }

    #[test]
    fn characteristic_time_examples() {
        assert_abs_diff_eq!(
            bisect_increasing(|t| 1.0 - (-t).exp(), 0.5),
            2f64.ln(),
            epsilon = 1e-12
        );
        let n = 8;
        let lambda = vec![1.0 / n as f64; n];
        let t = solve_tc(&lambda, &lambda, n / 2).unwrap();
        assert_abs_diff_eq!(t, n as f64 * 2f64.ln(), epsilon = 1e-9);
        let t_more = solve_tc(&lambda, &lambda, n - 1).unwrap();
        assert!(t_more > t);
        assert!(matches!(
            solve_tc(&lambda, &lambda, n),
            Err(Error::InfeasibleCapacity { .. })
        ));
        let sparse = [0.5, 0.0, 0.5];
        assert!(solve_tc(&sparse, &sparse, 2).is_err());
        assert!(solve_tc(&sparse, &sparse, 1).is_ok());
    }

    #[test]
    fn pair_hit_probabilities() {
        let idx = pair(1.0);
        let h = hit_probs(&[0.6, 0.4], &idx, &QModel::sim_lru(1.0));
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-15);
        assert_eq!(
            hit_probs(&[0.0, 0.0], &idx, &QModel::sim_lru(1.0)),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn trivial_neighbourhoods_converge_immediately() {
        let idx = isolated(6);
        let lambda = [0.3, 0.25, 0.2, 0.1, 0.1, 0.05];
        let r = fixed_point(
            &idx,
            &QModel::sim_lru(0.5),
            &lambda,
            2,
            &SolverParams::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations(), 1);
        assert_eq!(r.t_c, r.initial_t_c());
        assert_eq!(r.trace[1].max_delta_o, Some(0.0));
    }

    #[test]
    fn pair_hit_rate_is_one_at_every_iterate() {
        let idx = pair(1.0);
        let lambda = [0.6, 0.4];
        let r = fixed_point(
            &idx,
            &QModel::sim_lru(1.0),
            &lambda,
            1,
            &SolverParams::default(),
        )
        .unwrap();
        for rec in &r.trace[1..] {
            assert_abs_diff_eq!(rec.hit_rate, 1.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(r.hit_rate, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        let idx = pair(1.0);
        let q = QModel::sim_lru(1.0);
        let bad = SolverParams {
            damping: 0.0,
            ..SolverParams::default()
        };
        assert!(fixed_point(&idx, &q, &[0.6, 0.4], 1, &bad).is_err());
        assert!(fixed_point(&idx, &q, &[0.6, 0.4], 2, &SolverParams::default()).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let idx = isolated(3);
        let r = fixed_point(
            &idx,
            &QModel::sim_lru(0.5),
            &[0.5, 0.3, 0.2],
            1,
            &SolverParams::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&r.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "iteration,t_c,hit_rate,max_delta_o");
        assert!(lines[1].starts_with("0,") && lines[1].ends_with(','));
        assert_eq!(lines[2], format!("1,{},{},0", r.t_c, r.trace[1].hit_rate));
    }
}
