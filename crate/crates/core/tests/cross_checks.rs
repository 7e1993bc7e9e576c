use simcache_core::experiment::{
    read_sweep_csv, run_sweep, write_sweep_csv, CatalogSource, ExperimentConfig,
};
use simcache_core::workload::grid_weights;
use simcache_core::{
    aggregate_replications, fixed_point, gen_requests, lru_agg, lru_ttl, replicate, Catalog,
    NeighborIndex, Policy, PopularityProfile, QModel, RequestStream, SimConfig, SolverParams,
    TieBreak,
};

fn zipf(n: usize, s: f64) -> Catalog {
    let w = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    Catalog::new((0..n).map(|i| vec![i as f64]).collect(), w).unwrap()
}

fn grid(side: usize, alpha: f64) -> Catalog {
    let hot = [(side / 4, side / 4), (3 * side / 4, 3 * side / 4)];
    Catalog::grid(side, side, grid_weights(side, side, &hot, alpha).unwrap()).unwrap()
}

#[test]
fn lru_simulation_matches_characteristic_time() {
    let catalog = zipf(500, 0.8);
    let index = NeighborIndex::build(&catalog, 0.5, TieBreak::ItemId).unwrap();
    let stream = gen_requests(&PopularityProfile::from_catalog(&catalog), 400_000, 3).unwrap();
    let mut config = SimConfig::new(Policy::Lru, 50);
    config.warmup_fraction = 0.1;
    let runs = replicate(&index, &QModel::exact_only(0.5), &config, &stream, 4).unwrap();
    let sim = aggregate_replications(&runs).unwrap();
    let ttl = lru_ttl(catalog.rates(), 50).unwrap();
    assert!(
        (sim.mean_hit_rate - ttl.hit_rate).abs() < 5e-3,
        "{} vs {}",
        sim.mean_hit_rate,
        ttl.hit_rate
    );
}

#[test]
fn solver_tracks_simulation_on_a_small_grid() {
    let catalog = grid(30, 1.4);
    let index = NeighborIndex::build(&catalog, 1.0, TieBreak::CounterClockwise).unwrap();
    let q = QModel::sim_lru(1.0);
    let ours = fixed_point(&index, &q, catalog.rates(), 60, &SolverParams::default()).unwrap();
    let stream = gen_requests(&PopularityProfile::from_catalog(&catalog), 200_000, 8).unwrap();
    let mut config = SimConfig::new(Policy::SimLru, 60);
    config.warmup_fraction = 0.1;
    let sim = aggregate_replications(&replicate(&index, &q, &config, &stream, 4).unwrap()).unwrap();
    let ttl = lru_ttl(catalog.rates(), 60).unwrap();
    let agg = lru_agg(catalog.rates(), &index, 60).unwrap();
    let ours_gap = (ours.hit_rate - sim.mean_hit_rate).abs();
    assert!(ours_gap < (ttl.hit_rate - sim.mean_hit_rate).abs());
    assert!(ours_gap < (agg.hit_rate - sim.mean_hit_rate).abs());
    assert!(ours.t_c > ours.initial_t_c());
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let weights = grid_weights(6, 6, &[(1, 1), (4, 4)], 2.5).unwrap();
    let catalog = Catalog::grid(6, 6, weights.clone()).unwrap();

    let path = dir.path().join("catalog.csv");
    let mut bytes = Vec::new();
    catalog.write_csv(&mut bytes, &weights).unwrap();
    std::fs::write(&path, &bytes).unwrap();
    let back = Catalog::from_csv_path(&path).unwrap();
    assert_eq!(back.rates(), catalog.rates());
    assert_eq!(back.grid_shape(), catalog.grid_shape());

    let stream = gen_requests(&PopularityProfile::from_catalog(&catalog), 500, 1).unwrap();
    let mut text = Vec::new();
    stream.write_replay(&mut text).unwrap();
    let replay = RequestStream::read_replay(text.as_slice(), catalog.len(), "replay").unwrap();
    assert_eq!(replay.to_vec(), stream.to_vec());

    let config = ExperimentConfig {
        source: CatalogSource::File(path),
        capacities: vec![3, 6],
        requests: 5_000,
        replications: 3,
        ..ExperimentConfig::default()
    };
    let rows = run_sweep(&config).unwrap();
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).unwrap();
    assert_eq!(
        read_sweep_csv(std::str::from_utf8(&csv).unwrap()).unwrap(),
        rows
    );
}
