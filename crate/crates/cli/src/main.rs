use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use simcache_core::experiment::{
    cmd_synth, parse_capacities, parse_grid, parse_hotspots, parse_q_map, run_occupancy, run_sweep,
    run_trace, write_occupancy_csv, write_output, write_sweep_csv, CatalogSource, ExperimentConfig,
};
use simcache_core::solver::write_trace_csv;
use simcache_core::{synth_grid_popularity, Policy, SolverParams};

/// Similarity-cache hit-rate experiments: simulation versus TTL estimates.
#[derive(Parser)]
#[command(name = "simcache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic grid catalog and its popularity profile.
    Synth(SynthArgs),
    /// Hit rate versus capacity for the simulator and every estimator.
    Sweep(SweepArgs),
    /// Per-item simulated and predicted occupancies at one capacity.
    Occupancy(PointArgs),
    /// Characteristic time and hit rate at every solver iteration.
    Trace(PointArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Grid size as WxH.
    #[arg(long, default_value = "100x100")]
    grid: String,
    /// Popularity skew.
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    /// Popularity hotspots as "x,y;x,y".
    #[arg(long, default_value = "24,24;74,74")]
    hotspots: String,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Catalog CSV (item_id,dim_0,...,weight); replaces the synthetic grid.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Request counts CSV (item_id,count) replacing the catalog weights.
    #[arg(long)]
    trace_counts: Option<PathBuf>,
    /// Dissimilarity threshold.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Serve probabilities as "distance:q,..." (RND-LRU; default 1:1,sqrt2:0.5,2:0.25).
    #[arg(long)]
    q_map: Option<String>,
    #[arg(long, default_value = "sim-lru", value_parser = ["lru", "sim-lru", "rnd-lru"])]
    policy: String,
    /// Requests per simulation run.
    #[arg(long, default_value_t = 200_000)]
    requests: usize,
    #[arg(long, default_value_t = 10)]
    replications: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction of each run discarded before measuring.
    #[arg(long, default_value_t = 0.0)]
    warmup: f64,
    /// Stop when max |delta o| falls to this value.
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Weight of the new occupancy estimate in each damped update.
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Capacities as "100,200,..." or "100..1000:100".
    #[arg(long, default_value = "100..1000:100")]
    capacities: String,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 500)]
    capacity: usize,
}

fn emit(dir: &std::path::Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = write_output(dir, name, contents)
        .with_context(|| format!("writing {name} to {}", dir.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn grid_source(g: &GridArgs) -> Result<CatalogSource> {
    let (width, height) = parse_grid(&g.grid)?;
    let hotspots = parse_hotspots(&g.hotspots)?;
    if let Some(&(x, y)) = hotspots.iter().find(|&&(x, y)| x >= width || y >= height) {
        anyhow::bail!("hotspot ({x}, {y}) lies outside the {width}x{height} grid; set --hotspots");
    }
    Ok(CatalogSource::Grid {
        width,
        height,
        alpha: g.alpha,
        hotspots,
    })
}

fn config(c: &CommonArgs, capacities: Vec<usize>) -> Result<ExperimentConfig> {
    let source = match &c.catalog {
        Some(path) => CatalogSource::File(path.clone()),
        None => grid_source(&c.grid)?,
    };
    let config = ExperimentConfig {
        source,
        trace_counts: c.trace_counts.clone(),
        threshold: c.d,
        q_map: c.q_map.as_deref().map(parse_q_map).transpose()?,
        policy: c.policy.parse::<Policy>()?,
        capacities,
        requests: c.requests,
        replications: c.replications,
        seed: c.seed,
        solver: SolverParams {
            epsilon: c.epsilon,
            max_iterations: c.max_iters,
            damping: c.damping,
        },
        warmup_fraction: c.warmup,
        workers: c.workers,
    };
    config.validate()?;
    Ok(config)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let source = grid_source(&args.grid)?;
    let config = ExperimentConfig {
        source: source.clone(),
        ..ExperimentConfig::default()
    };
    let mut catalog = Vec::new();
    let rows = cmd_synth(&config, &mut catalog)?;
    let CatalogSource::Grid {
        width,
        height,
        alpha,
        hotspots,
    } = source
    else {
        unreachable!()
    };
    let mut popularity = Vec::new();
    synth_grid_popularity(width, height, &hotspots, alpha)?.write_csv(&mut popularity)?;
    emit(&args.out, "catalog.csv", &catalog)?;
    emit(&args.out, "popularity.csv", &popularity)?;
    eprintln!("{rows} items");
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let config = config(&args.common, parse_capacities(&args.capacities)?)?;
    let rows = run_sweep(&config)?;
    for r in rows.iter().filter(|r| r.hit_rate.is_none()) {
        eprintln!(
            "warning: capacity {} is infeasible for {} (no fewer reachable items than slots)",
            r.capacity,
            r.method.name()
        );
    }
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    emit(&args.common.out, "sweep.csv", &csv)?;
    Ok(())
}

fn occupancy(args: &PointArgs) -> Result<()> {
    let config = config(&args.common, vec![args.capacity])?;
    let rows = run_occupancy(&config, args.capacity)?;
    let mut csv = Vec::new();
    write_occupancy_csv(&rows, &mut csv)?;
    emit(&args.common.out, "occupancy.csv", &csv)?;
    Ok(())
}

fn trace(args: &PointArgs) -> Result<()> {
    let config = config(&args.common, vec![args.capacity])?;
    let result = run_trace(&config, args.capacity)?;
    let mut csv = Vec::new();
    write_trace_csv(&result.trace, &mut csv)?;
    emit(&args.common.out, "trace.csv", &csv)?;
    eprintln!(
        "{} after {} iterations, t_C {} (initial {}), hit rate {}",
        if result.converged {
            "converged"
        } else {
            "stopped"
        },
        result.iterations(),
        result.t_c,
        result.initial_t_c(),
        result.hit_rate
    );
    if result.overfull_hits > 0 {
        eprintln!(
            "note: {} items have predicted hit probability above 1",
            result.overfull_hits
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Occupancy(a) => occupancy(a),
        Command::Trace(a) => trace(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
