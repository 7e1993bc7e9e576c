//! Python bindings for `simcache-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use simcache_core::experiment::{self, CatalogSource, ExperimentConfig, DEFAULT_HOTSPOTS};
use simcache_core::{self as core, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn check_len(rates: &[f64], index: &NeighborIndex) -> PyResult<()> {
    if rates.len() != index.inner.len() {
        return Err(PyValueError::new_err(format!(
            "{} rates for {} items",
            rates.len(),
            index.inner.len()
        )));
    }
    Ok(())
}

fn policy(name: &str) -> PyResult<core::Policy> {
    name.parse().map_err(to_py)
}

#[pyclass(module = "simcache", frozen)]
struct Catalog {
    inner: core::Catalog,
}

#[pymethods]
impl Catalog {
    #[new]
    fn new(embeddings: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Self> {
        core::Catalog::new(embeddings, weights)
            .map(|inner| Catalog { inner })
            .map_err(to_py)
    }

    /// Grid catalog with ids `y * width + x`.
    #[staticmethod]
    fn grid(width: usize, height: usize, weights: Vec<f64>) -> PyResult<Self> {
        core::Catalog::grid(width, height, weights)
            .map(|inner| Catalog { inner })
            .map_err(to_py)
    }

    /// Grid with two-hotspot popularity `(min distance + 1)^-alpha`.
    #[staticmethod]
    #[pyo3(signature = (width, height, alpha, hotspots = None))]
    fn synthetic_grid(
        width: usize,
        height: usize,
        alpha: f64,
        hotspots: Option<Vec<(usize, usize)>>,
    ) -> PyResult<Self> {
        let hotspots = hotspots.unwrap_or_else(|| DEFAULT_HOTSPOTS.to_vec());
        let profile =
            core::synth_grid_popularity(width, height, &hotspots, alpha).map_err(to_py)?;
        Self::grid(width, height, profile.probabilities().to_vec())
    }

    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        core::Catalog::from_csv_path(path)
            .map(|inner| Catalog { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Normalized request rates.
    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.inner.rates().to_vec()
    }

    #[getter]
    fn grid_shape(&self) -> Option<(usize, usize)> {
        self.inner.grid_shape().map(|g| (g.width, g.height))
    }

    fn embedding(&self, item: usize) -> PyResult<Vec<f64>> {
        if item >= self.inner.len() {
            return Err(to_py(Error::UnknownItem(item)));
        }
        Ok(self.inner.embedding(item).to_vec())
    }

    fn dis(&self, a: usize, b: usize) -> PyResult<f64> {
        if a.max(b) >= self.inner.len() {
            return Err(to_py(Error::UnknownItem(a.max(b))));
        }
        Ok(self.inner.dis(a, b))
    }

    fn __repr__(&self) -> String {
        format!(
            "Catalog(items={}, dim={})",
            self.inner.len(),
            self.inner.dim()
        )
    }
}

#[pyclass(module = "simcache", frozen)]
struct NeighborIndex {
    inner: core::NeighborIndex,
}

#[pymethods]
impl NeighborIndex {
    /// `tie_break` is "id", "ccw" or None for the catalog default.
    #[new]
    #[pyo3(signature = (catalog, d, tie_break = None))]
    fn new(catalog: &Catalog, d: f64, tie_break: Option<&str>) -> PyResult<Self> {
        let tie = match tie_break {
            None => core::TieBreak::default_for(&catalog.inner),
            Some("id") => core::TieBreak::ItemId,
            Some("ccw") => core::TieBreak::CounterClockwise,
            Some(other) => {
                return Err(PyValueError::new_err(format!(
                    "tie_break must be 'id' or 'ccw', got {other:?}"
                )))
            }
        };
        core::NeighborIndex::build(&catalog.inner, d, tie)
            .map(|inner| NeighborIndex { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold()
    }

    /// Ordered closed neighbourhood of `item` as `(item, distance)` pairs.
    fn neighbors(&self, item: usize) -> PyResult<Vec<(usize, f64)>> {
        if item >= self.inner.len() {
            return Err(to_py(Error::UnknownItem(item)));
        }
        Ok(self
            .inner
            .neighbors(item)
            .iter()
            .map(|e| (e.item, e.distance))
            .collect())
    }
}

#[pyclass(module = "simcache", frozen)]
struct QModel {
    inner: core::QModel,
}

#[pymethods]
impl QModel {
    #[staticmethod]
    fn sim_lru(d: f64) -> Self {
        QModel {
            inner: core::QModel::sim_lru(d),
        }
    }

    #[staticmethod]
    fn exact_only(d: f64) -> Self {
        QModel {
            inner: core::QModel::exact_only(d),
        }
    }

    /// Step table of `(distance, q)` pairs.
    #[staticmethod]
    fn step(d: f64, table: Vec<(f64, f64)>) -> PyResult<Self> {
        core::QModel::step(d, &table)
            .map(|inner| QModel { inner })
            .map_err(to_py)
    }

    fn prob(&self, distance: f64) -> f64 {
        self.inner.prob(distance)
    }
}

#[pyclass(module = "simcache", frozen, get_all)]
struct SolverResult {
    occupancy: Vec<f64>,
    hit: Vec<f64>,
    lambda_e: Vec<f64>,
    lambda_r: Vec<f64>,
    t_c: f64,
    initial_t_c: f64,
    hit_rate: f64,
    converged: bool,
    iterations: usize,
    overfull_hits: usize,
    /// `(iteration, t_c, hit_rate, max_delta_o)` rows; row 0 has no delta.
    trace: Vec<(usize, f64, f64, Option<f64>)>,
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (index, q, rates, capacity, epsilon = 1e-8, max_iterations = 100, damping = 0.5))]
fn fixed_point(
    py: Python<'_>,
    index: &NeighborIndex,
    q: &QModel,
    rates: Vec<f64>,
    capacity: usize,
    epsilon: f64,
    max_iterations: usize,
    damping: f64,
) -> PyResult<SolverResult> {
    let params = core::SolverParams {
        epsilon,
        max_iterations,
        damping,
    };
    let r = py
        .detach(|| core::fixed_point(&index.inner, &q.inner, &rates, capacity, &params))
        .map_err(to_py)?;
    Ok(SolverResult {
        initial_t_c: r.initial_t_c(),
        iterations: r.iterations(),
        trace: r
            .trace
            .iter()
            .map(|t| (t.iteration, t.t_c, t.hit_rate, t.max_delta_o))
            .collect(),
        occupancy: r.occupancy,
        hit: r.hit,
        lambda_e: r.lambda_e,
        lambda_r: r.lambda_r,
        t_c: r.t_c,
        hit_rate: r.hit_rate,
        converged: r.converged,
        overfull_hits: r.overfull_hits,
    })
}

#[pyclass(module = "simcache", frozen, get_all)]
struct Simulation {
    replications: usize,
    mean_hit_rate: f64,
    ci_half_width: Option<f64>,
    occupancy: Vec<f64>,
    hit_rates: Vec<f64>,
}

/// Simulates `replications` independent IRM streams of `requests` requests.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (index, q, rates, policy, capacity, requests, replications = 1, seed = 1, warmup = 0.0, check_separation = false))]
fn simulate(
    py: Python<'_>,
    index: &NeighborIndex,
    q: &QModel,
    rates: Vec<f64>,
    policy: &str,
    capacity: usize,
    requests: usize,
    replications: usize,
    seed: u64,
    warmup: f64,
    check_separation: bool,
) -> PyResult<Simulation> {
    let policy = self::policy(policy)?;
    check_len(&rates, index)?;
    let run = || -> core::Result<(core::ReplicationSummary, Vec<f64>)> {
        let profile = core::PopularityProfile::new(&rates, core::workload::ProfileSource::Catalog)?;
        let stream = core::gen_requests(&profile, requests, seed)?;
        let config = core::SimConfig {
            policy,
            capacity,
            warmup_fraction: warmup,
            seed: core::simulator::mix_seed(seed, 0x5EED),
            check_separation,
        };
        let runs = core::replicate(&index.inner, &q.inner, &config, &stream, replications)?;
        let rates = runs.iter().map(|r| r.hit_rate()).collect();
        Ok((core::aggregate_replications(&runs)?, rates))
    };
    let (summary, hit_rates) = py.detach(run).map_err(to_py)?;
    Ok(Simulation {
        replications: summary.replications,
        mean_hit_rate: summary.mean_hit_rate,
        ci_half_width: summary.ci_half_width,
        occupancy: summary.occupancy,
        hit_rates,
    })
}

/// Classic LRU under the characteristic-time approximation: `(t_c, hit, hit_rate)`.
#[pyfunction]
fn lru_ttl(rates: Vec<f64>, capacity: usize) -> PyResult<(f64, Vec<f64>, f64)> {
    let r = core::lru_ttl(&rates, capacity).map_err(to_py)?;
    Ok((r.t_c, r.hit, r.hit_rate))
}

/// LRU fed with neighbourhood-aggregated rates: `(t_c, hit, hit_rate)`.
#[pyfunction]
fn lru_agg(
    rates: Vec<f64>,
    index: &NeighborIndex,
    capacity: usize,
) -> PyResult<(f64, Vec<f64>, f64)> {
    let r = core::lru_agg(&rates, &index.inner, capacity).map_err(to_py)?;
    Ok((r.t_c, r.hit, r.hit_rate))
}

/// Greedy coverage of closed neighbourhoods: `(selected, covered_weight)`.
#[pyfunction]
fn greedy_coverage(
    index: &NeighborIndex,
    rates: Vec<f64>,
    capacity: usize,
) -> PyResult<(Vec<usize>, f64)> {
    check_len(&rates, index)?;
    let g = core::greedy_coverage(&core::CoverageInstance::from_index(
        &index.inner,
        &rates,
        capacity,
    ));
    Ok((g.selected, g.covered_weight))
}

/// Exact steady state for tiny instances: `(hit_rate, hit, occupancy)`.
#[pyfunction]
fn exact_hit_rate(
    policy: &str,
    index: &NeighborIndex,
    q: &QModel,
    rates: Vec<f64>,
    capacity: usize,
) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let r = core::exact_hit_rate(
        self::policy(policy)?,
        &index.inner,
        &q.inner,
        &rates,
        capacity,
    )
    .map_err(to_py)?;
    Ok((r.hit_rate, r.hit, r.occupancy))
}

/// Unnormalized two-hotspot grid popularity weights in id order.
#[pyfunction]
#[pyo3(signature = (width, height, alpha, hotspots = None))]
fn grid_weights(
    width: usize,
    height: usize,
    alpha: f64,
    hotspots: Option<Vec<(usize, usize)>>,
) -> PyResult<Vec<f64>> {
    let hotspots = hotspots.unwrap_or_else(|| DEFAULT_HOTSPOTS.to_vec());
    core::workload::grid_weights(width, height, &hotspots, alpha).map_err(to_py)
}

type SweepTuple = (usize, String, Option<f64>, Option<f64>, Option<f64>);

/// Capacity sweep. Rows are `(capacity, method, hit_rate, ci_low, ci_high)`.
#[pyfunction]
#[pyo3(signature = (
    capacities, grid = (100, 100), alpha = 2.5, hotspots = None, catalog = None, d = 1.0,
    q_map = None, policy = "sim-lru", requests = 200_000, replications = 10, seed = 1,
    warmup = 0.0, epsilon = 1e-8, max_iterations = 100, damping = 0.5, workers = None
))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    capacities: Vec<usize>,
    grid: (usize, usize),
    alpha: f64,
    hotspots: Option<Vec<(usize, usize)>>,
    catalog: Option<PathBuf>,
    d: f64,
    q_map: Option<Vec<(f64, f64)>>,
    policy: &str,
    requests: usize,
    replications: usize,
    seed: u64,
    warmup: f64,
    epsilon: f64,
    max_iterations: usize,
    damping: f64,
    workers: Option<usize>,
) -> PyResult<Vec<SweepTuple>> {
    let source = match catalog {
        Some(path) => CatalogSource::File(path),
        None => CatalogSource::Grid {
            width: grid.0,
            height: grid.1,
            alpha,
            hotspots: hotspots.unwrap_or_else(|| DEFAULT_HOTSPOTS.to_vec()),
        },
    };
    let config = ExperimentConfig {
        source,
        trace_counts: None,
        threshold: d,
        q_map,
        policy: self::policy(policy)?,
        capacities,
        requests,
        replications,
        seed,
        solver: core::SolverParams {
            epsilon,
            max_iterations,
            damping,
        },
        warmup_fraction: warmup,
        workers,
    };
    let rows = py
        .detach(|| experiment::run_sweep(&config))
        .map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            (
                r.capacity,
                r.method.name(),
                r.hit_rate,
                r.ci.map(|c| c.0),
                r.ci.map(|c| c.1),
            )
        })
        .collect())
}

#[pymodule]
fn simcache(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Catalog>()?;
    m.add_class::<NeighborIndex>()?;
    m.add_class::<QModel>()?;
    m.add_class::<SolverResult>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lru_ttl, m)?)?;
    m.add_function(wrap_pyfunction!(lru_agg, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(exact_hit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(grid_weights, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
