//! Experiment orchestration behind the command-line tool: synthetic catalog
//! emission, capacity sweeps over every estimator, occupancy maps and
//! convergence traces.
//!
//! Replication `k` of every simulated point uses the same stream seed at
//! every capacity, so curves across capacities share random numbers. Sweep
//! points run on a bounded rayon pool; rows are sorted before emission and
//! every value is a function of the configuration alone, so output does not
//! depend on the pool size.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselines::{greedy_coverage, lru_agg, lru_ttl, CoverageInstance};
use crate::catalog::{Catalog, NeighborIndex, QModel, TieBreak};
use crate::error::{Error, Result};
use crate::simulator::{aggregate_replications, mix_seed, replicate, Policy, SimConfig};
use crate::solver::{fixed_point, SolverParams, SolverResult};
use crate::workload::{
    gen_requests, grid_weights, ingest_trace, read_trace_counts, PopularityProfile,
};

pub const DEFAULT_HOTSPOTS: [(usize, usize); 2] = [(24, 24), (74, 74)];

/// RND-LRU serve probabilities 1, 1/2, 1/4 at distances 1, sqrt 2, 2.
pub fn default_q_map() -> Vec<(f64, f64)> {
    vec![(1.0, 1.0), (std::f64::consts::SQRT_2, 0.5), (2.0, 0.25)]
}

#[derive(Debug, Clone, PartialEq)]
pub enum CatalogSource {
    Grid {
        width: usize,
        height: usize,
        alpha: f64,
        hotspots: Vec<(usize, usize)>,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: CatalogSource,
    /// Optional `item_id,count` file replacing the catalog weights.
    pub trace_counts: Option<PathBuf>,
    pub threshold: f64,
    /// Step table for RND-LRU; `None` selects [`default_q_map`].
    pub q_map: Option<Vec<(f64, f64)>>,
    pub policy: Policy,
    pub capacities: Vec<usize>,
    pub requests: usize,
    pub replications: usize,
    pub seed: u64,
    pub solver: SolverParams,
    pub warmup_fraction: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: CatalogSource::Grid {
                width: 100,
                height: 100,
                alpha: 2.5,
                hotspots: DEFAULT_HOTSPOTS.to_vec(),
            },
            trace_counts: None,
            threshold: 1.0,
            q_map: None,
            policy: Policy::SimLru,
            capacities: (1..=10).map(|k| 100 * k).collect(),
            requests: 200_000,
            replications: 10,
            seed: 1,
            solver: SolverParams::default(),
            warmup_fraction: 0.0,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacities.is_empty() {
            return Err(Error::InvalidParameter("no capacities given".into()));
        }
        if self.capacities.contains(&0) {
            return Err(Error::InvalidParameter(
                "capacities must be positive".into(),
            ));
        }
        if self.capacities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "capacities must be strictly increasing".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "replications must be at least 1".into(),
            ));
        }
        if self.requests == 0 {
            return Err(Error::InvalidParameter(
                "requests must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn q_model(&self) -> Result<QModel> {
        match self.policy {
            Policy::Lru => Ok(QModel::exact_only(self.threshold)),
            Policy::SimLru => match &self.q_map {
                None => Ok(QModel::sim_lru(self.threshold)),
                Some(table) => QModel::step(self.threshold, table),
            },
            Policy::RndLru => {
                let table = self.q_map.clone().unwrap_or_else(default_q_map);
                QModel::step(self.threshold, &table)
            }
        }
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.workers {
            None => Ok(f()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Catalog, neighbourhoods and serve probabilities for one configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub catalog: Catalog,
    pub index: NeighborIndex,
    pub q: QModel,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let catalog = match &config.source {
            CatalogSource::Grid {
                width,
                height,
                alpha,
                hotspots,
            } => Catalog::grid(
                *width,
                *height,
                grid_weights(*width, *height, hotspots, *alpha)?,
            )?,
            CatalogSource::File(path) => Catalog::from_csv_path(path)?,
        };
        let catalog = match &config.trace_counts {
            Some(path) => {
                let profile = ingest_trace(&catalog, &read_trace_counts(path)?)?;
                catalog.with_weights(profile.probabilities())?
            }
            None => catalog,
        };
        let index =
            NeighborIndex::build(&catalog, config.threshold, TieBreak::default_for(&catalog))?;
        Ok(Experiment {
            catalog,
            index,
            q: config.q_model()?,
        })
    }

    pub fn rates(&self) -> &[f64] {
        self.catalog.rates()
    }
}

/// Writes the grid catalog CSV with its unnormalized popularity weights.
pub fn cmd_synth(config: &ExperimentConfig, out: impl Write) -> Result<usize> {
    let CatalogSource::Grid {
        width,
        height,
        alpha,
        hotspots,
    } = &config.source
    else {
        return Err(Error::InvalidParameter(
            "synth needs grid parameters, not a catalog file".into(),
        ));
    };
    let weights = grid_weights(*width, *height, hotspots, *alpha)?;
    let catalog = Catalog::grid(*width, *height, weights.clone())?;
    catalog.write_csv(out, &weights)?;
    Ok(catalog.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Exp(Policy),
    Ours(Policy),
    ExpLru,
    Lru,
    LruAgg,
    Greedy,
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Exp(p) => format!("Exp-{}", p.tag()),
            Method::Ours(p) => format!("Ours-{}", p.tag()),
            Method::ExpLru => "Exp-LRU".into(),
            Method::Lru => "LRU".into(),
            Method::LruAgg => "LRU-agg".into(),
            Method::Greedy => "Greedy".into(),
        }
    }

    pub fn for_policy(policy: Policy) -> Vec<Method> {
        let mut m = vec![Method::Exp(policy), Method::Ours(policy)];
        if policy != Policy::Lru {
            m.push(Method::ExpLru);
        }
        m.extend([Method::Lru, Method::LruAgg, Method::Greedy]);
        m
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "Exp-SIM" => Method::Exp(Policy::SimLru),
            "Exp-RND" => Method::Exp(Policy::RndLru),
            "Exp-LRU" => Method::ExpLru,
            "Ours-SIM" => Method::Ours(Policy::SimLru),
            "Ours-RND" => Method::Ours(Policy::RndLru),
            "Ours-LRU" => Method::Ours(Policy::Lru),
            "LRU" => Method::Lru,
            "LRU-agg" => Method::LruAgg,
            "Greedy" => Method::Greedy,
            _ => return Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        };
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub capacity: usize,
    pub method: Method,
    /// `None` when the estimator is infeasible at this capacity.
    pub hit_rate: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

fn feasible<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InfeasibleCapacity { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn simulated(
    exp: &Experiment,
    config: &ExperimentConfig,
    policy: Policy,
    capacity: usize,
) -> Result<crate::simulator::ReplicationSummary> {
    let profile = PopularityProfile::from_catalog(&exp.catalog);
    let stream = gen_requests(&profile, config.requests, config.seed)?;
    let sim = SimConfig {
        policy,
        capacity,
        warmup_fraction: config.warmup_fraction,
        seed: mix_seed(config.seed, 0x5EED),
        check_separation: false,
    };
    let q = if policy == Policy::Lru {
        QModel::exact_only(config.threshold)
    } else {
        exp.q.clone()
    };
    aggregate_replications(&replicate(
        &exp.index,
        &q,
        &sim,
        &stream,
        config.replications,
    )?)
}

fn sweep_point(
    exp: &Experiment,
    config: &ExperimentConfig,
    capacity: usize,
) -> Result<Vec<SweepRow>> {
    let lambda = exp.rates();
    Method::for_policy(config.policy)
        .into_par_iter()
        .map(|method| {
            let (hit_rate, ci) = match method {
                Method::Exp(p) => {
                    let s = simulated(exp, config, p, capacity)?;
                    (Some(s.mean_hit_rate), s.ci_bounds())
                }
                Method::ExpLru => {
                    let s = simulated(exp, config, Policy::Lru, capacity)?;
                    (Some(s.mean_hit_rate), s.ci_bounds())
                }
                Method::Ours(_) => (
                    feasible(fixed_point(
                        &exp.index,
                        &exp.q,
                        lambda,
                        capacity,
                        &config.solver,
                    ))?
                    .map(|r| r.hit_rate),
                    None,
                ),
                Method::Lru => (
                    feasible(lru_ttl(lambda, capacity))?.map(|r| r.hit_rate),
                    None,
                ),
                Method::LruAgg => (
                    feasible(lru_agg(lambda, &exp.index, capacity))?.map(|r| r.hit_rate),
                    None,
                ),
                Method::Greedy => (
                    Some(
                        greedy_coverage(&CoverageInstance::from_index(
                            &exp.index, lambda, capacity,
                        ))
                        .covered_weight,
                    ),
                    None,
                ),
            };
            Ok(SweepRow {
                capacity,
                method,
                hit_rate,
                ci,
            })
        })
        .collect()
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let exp = Experiment::prepare(config)?;
    run_sweep_on(&exp, config)
}

pub fn run_sweep_on(exp: &Experiment, config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let nested: Vec<Vec<SweepRow>> = config.in_pool(|| {
        config
            .capacities
            .par_iter()
            .map(|&c| sweep_point(exp, config, c))
            .collect::<Result<_>>()
    })??;
    let mut rows: Vec<SweepRow> = nested.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.capacity, r.method));
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "capacity,method,hit_rate,ci_low,ci_high")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.capacity,
            r.method.name(),
            opt(r.hit_rate),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
        )?;
    }
    Ok(())
}

fn parse_opt(s: &str, origin: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::parse(origin, line, format!("bad number {s:?}")))
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let ln = k as u64 + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse("sweep", ln, "expected 5 fields"));
        }
        let capacity = f[0]
            .parse()
            .map_err(|_| Error::parse("sweep", ln, "bad capacity"))?;
        let lo = parse_opt(f[3], "sweep", ln)?;
        let hi = parse_opt(f[4], "sweep", ln)?;
        rows.push(SweepRow {
            capacity,
            method: f[1].parse()?,
            hit_rate: parse_opt(f[2], "sweep", ln)?,
            ci: lo.zip(hi),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRow {
    pub item_id: usize,
    pub position: Option<(usize, usize)>,
    pub simulated: f64,
    pub solver: f64,
}

/// Per-item simulated (request-averaged) and predicted occupancies. When the
/// capacity can hold every item with positive rate the prediction is the
/// saturated cache: one for those items, zero for the rest.
pub fn run_occupancy(config: &ExperimentConfig, capacity: usize) -> Result<Vec<OccupancyRow>> {
    let exp = Experiment::prepare(config)?;
    let lambda = exp.rates();
    let (sim, solved) = config.in_pool(|| {
        rayon::join(
            || simulated(&exp, config, config.policy, capacity),
            || {
                feasible(fixed_point(
                    &exp.index,
                    &exp.q,
                    lambda,
                    capacity,
                    &config.solver,
                ))
            },
        )
    })?;
    let sim = sim?;
    let predicted = match solved? {
        Some(r) => r.occupancy,
        None => lambda
            .iter()
            .map(|&l| if l > 0.0 { 1.0 } else { 0.0 })
            .collect(),
    };
    Ok((0..exp.catalog.len())
        .map(|id| OccupancyRow {
            item_id: id,
            position: exp.catalog.item(id).grid_position,
            simulated: sim.occupancy[id],
            solver: predicted[id],
        })
        .collect())
}

pub fn write_occupancy_csv(rows: &[OccupancyRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "item_id,x,y,occupancy_sim,occupancy_solver")?;
    for r in rows {
        let (x, y) = match r.position {
            Some((x, y)) => (x.to_string(), y.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            r.item_id, x, y, r.simulated, r.solver
        )?;
    }
    Ok(())
}

pub fn run_trace(config: &ExperimentConfig, capacity: usize) -> Result<SolverResult> {
    let exp = Experiment::prepare(config)?;
    config.in_pool(|| fixed_point(&exp.index, &exp.q, exp.rates(), capacity, &config.solver))?
}

/// Writes `contents` to `dir/name`, creating `dir`.
pub fn write_output(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidParameter(format!("grid must look like WxH, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        w.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    ))
}

/// `"x,y;x,y"`.
pub fn parse_hotspots(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let bad = || Error::InvalidParameter(format!("bad hotspot {p:?}, expected x,y"));
            let (x, y) = p.split_once(',').ok_or_else(bad)?;
            Ok((
                x.trim().parse().map_err(|_| bad())?,
                y.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// `"distance:q,distance:q,..."`.
pub fn parse_q_map(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let bad =
                || Error::InvalidParameter(format!("bad q-map entry {p:?}, expected distance:q"));
            let (d, q) = p.split_once(':').ok_or_else(bad)?;
            Ok((
                d.trim().parse().map_err(|_| bad())?,
                q.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Comma-separated list, or `start..end:step` (inclusive end).
pub fn parse_capacities(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidParameter(format!("bad capacity list {s:?}"));
    if let Some((range, step)) = s.split_once(':') {
        let (a, b) = range.split_once("..").ok_or_else(bad)?;
        let (a, b, step): (usize, usize, usize) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
            step.trim().parse().map_err(|_| bad())?,
        );
        if step == 0 {
            return Err(bad());
        }
        return Ok((a..=b).step_by(step).collect());
    }
    s.split(',')
        .map(|c| c.trim().parse().map_err(|_| bad()))
        .collect()
}
