"""Smoke test for the simcache extension module.

Build and run from the workspace root:

    cargo build --release -p simcache-py --features extension-module
    cp target/release/libsimcache.so crates/python/python/simcache.so
    python3 crates/python/python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import simcache


def main():
    catalog = simcache.Catalog.synthetic_grid(30, 30, 2.5, hotspots=[(7, 7), (22, 22)])
    assert len(catalog) == 900 and catalog.grid_shape == (30, 30)
    rates = catalog.rates
    assert abs(sum(rates) - 1.0) < 1e-12

    index = simcache.NeighborIndex(catalog, 1.0)
    assert [n for n, _ in index.neighbors(31)] == [31, 32, 61, 30, 1]

    q = simcache.QModel.sim_lru(1.0)
    ours = simcache.fixed_point(index, q, rates, 60)
    assert ours.t_c > ours.initial_t_c
    assert abs(sum(ours.occupancy) - 60) < 0.06
    assert ours.trace[0][3] is None

    t_c, hit, lru = simcache.lru_ttl(rates, 60)
    assert math.isclose(t_c, ours.initial_t_c, rel_tol=1e-12)
    _, _, agg = simcache.lru_agg(rates, index, 60)
    _, greedy = simcache.greedy_coverage(index, rates, 60)

    sim = simcache.simulate(index, q, rates, "sim-lru", 60, 100_000, replications=4, seed=3, warmup=0.1)
    assert sim.ci_half_width is not None and len(sim.hit_rates) == 4
    assert abs(ours.hit_rate - sim.mean_hit_rate) < abs(lru - sim.mean_hit_rate)
    assert greedy >= sim.mean_hit_rate
    print(f"exp {sim.mean_hit_rate:.4f}  ours {ours.hit_rate:.4f}  lru {lru:.4f}  agg {agg:.4f}  greedy {greedy:.4f}")

    tiny = simcache.Catalog([[0.0], [1.0], [2.0]], [0.5, 0.3, 0.2])
    tiny_index = simcache.NeighborIndex(tiny, 0.5)
    exact, _, _ = simcache.exact_hit_rate("lru", tiny_index, simcache.QModel.exact_only(0.5), tiny.rates, 1)
    assert math.isclose(exact, sum(r * r for r in tiny.rates), rel_tol=1e-9)

    rows = simcache.sweep([10, 20], grid=(12, 12), hotspots=[(3, 3), (8, 8)], requests=5000, replications=2)
    assert len(rows) == 12 and rows[0][1] == "Exp-SIM"

    try:
        simcache.lru_ttl([1.0], 1)
    except ValueError as e:
        assert "capacity" in str(e)
    else:
        raise AssertionError("expected ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
