use std::path::Path;
use std::process::{Command, Output};

fn simcache(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simcache"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run simcache")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const SMALL: &[&str] = &["--grid", "12x12", "--hotspots", "3,3;8,8"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: Vec<String>, out: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    simcache(&refs, out)
}

#[test]
fn synth_writes_full_grid_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(simcache(&["synth"], &a).status.success());
    assert!(simcache(&["synth"], &b).status.success());
    let catalog = read(a.join("catalog.csv"));
    assert_eq!(catalog.lines().count(), 10_001);
    assert_eq!(catalog, read(b.join("catalog.csv")));
    assert_eq!(read(a.join("popularity.csv")).lines().count(), 10_001);
}

#[test]
fn synth_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = simcache(&["synth", "--grid", "1x1", "--hotspots", "0,0"], dir.path());
    assert!(o.status.success());
    assert_eq!(
        read(dir.path().join("catalog.csv")),
        "item_id,dim_0,dim_1,weight\n0,0,0,1\n"
    );
}

#[test]
fn sweep_rows_and_lru_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(
        SMALL,
        &[
            "--d",
            "0.5",
            "--capacities",
            "5..20:5",
            "--requests",
            "3000",
            "--replications",
            "1",
        ],
    );
    let o = run([vec!["sweep".to_string()], args].concat(), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(dir.path().join("sweep.csv"));
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 4 * 6);
    for cap in ["5", "10", "15", "20"] {
        let get = |m: &str| -> f64 {
            rows.iter().find(|r| r[0] == cap && r[1] == m).unwrap()[2]
                .parse()
                .unwrap()
        };
        assert!((get("Ours-SIM") - get("LRU")).abs() <= 1e-9);
    }
    assert!(rows.iter().all(|r| r[3].is_empty() && r[4].is_empty()));
}

#[test]
fn sweep_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(workers);
        let args = with(
            SMALL,
            &[
                "--policy",
                "rnd-lru",
                "--d",
                "2",
                "--capacities",
                "4,8",
                "--requests",
                "4000",
                "--replications",
                "3",
                "--workers",
                workers,
            ],
        );
        assert!(run([vec!["sweep".to_string()], args].concat(), &out)
            .status
            .success());
        outputs.push(read(out.join("sweep.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].contains("Exp-RND") && outputs[0].contains("Ours-RND"));
}

#[test]
fn infeasible_capacity_is_flagged_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(
        SMALL,
        &[
            "--capacities",
            "10,144",
            "--requests",
            "2000",
            "--replications",
            "2",
        ],
    );
    let o = run([vec!["sweep".to_string()], args].concat(), dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
    assert!(read(dir.path().join("sweep.csv")).contains("144,Ours-SIM,,,"));
}

#[test]
fn occupancy_and_trace_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(
        SMALL,
        &[
            "--capacity",
            "20",
            "--requests",
            "5000",
            "--replications",
            "2",
        ],
    );
    assert!(run(
        [vec!["occupancy".to_string()], args.clone()].concat(),
        dir.path()
    )
    .status
    .success());
    let occ = read(dir.path().join("occupancy.csv"));
    let mut lines = occ.lines();
    assert_eq!(
        lines.next(),
        Some("item_id,x,y,occupancy_sim,occupancy_solver")
    );
    let solver: Vec<f64> = lines
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(solver.len(), 144);
    assert!(solver.iter().all(|o| (0.0..=1.0).contains(o)));
    assert!((solver.iter().sum::<f64>() - 20.0).abs() < 0.02);

    assert!(run([vec!["trace".to_string()], args].concat(), dir.path())
        .status
        .success());
    let trace = read(dir.path().join("trace.csv"));
    let rows: Vec<Vec<&str>> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows[0][0], "0");
    assert!(rows[0][3].is_empty());
    let t0: f64 = rows[0][1].parse().unwrap();
    let last: f64 = rows[rows.len() - 1][1].parse().unwrap();
    assert!(last >= t0);
}

#[test]
fn trace_without_neighbours_stops_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(SMALL, &["--d", "0.5", "--capacity", "10"]);
    assert!(run([vec!["trace".to_string()], args].concat(), dir.path())
        .status
        .success());
    let trace = read(dir.path().join("trace.csv"));
    let rows: Vec<&str> = trace.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("1,"));
    assert!(rows[2].ends_with(",0"));
}

#[test]
fn bad_configuration_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        [
            vec!["sweep".to_string()],
            with(SMALL, &["--capacities", "10,5"]),
        ]
        .concat(),
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("strictly increasing"));

    let o = simcache(&["sweep", "--grid", "3x3"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--hotspots"));

    let o = run(
        [
            vec!["trace".to_string()],
            with(SMALL, &["--capacity", "144"]),
        ]
        .concat(),
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
