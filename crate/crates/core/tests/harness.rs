mod common;

use std::path::Path;
use std::process::Command;

use ris_zf::alloc::{AlgoOptions, Algorithm};
use ris_zf::channel::ScenarioConfig;
use ris_zf::harness::{
    csv_string, emit, mean_std, parse_csv, run_sweep, run_trial, Axis, ConfigFile, Format,
    SweepRecord, SweepResult, SweepSpec,
};

const GOLDEN_CONFIG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/mini.json");
const GOLDEN_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/mini_power.csv");

fn spec(trials: usize, algorithms: Vec<Algorithm>) -> SweepSpec {
    SweepSpec {
        axis: Axis::Power,
        values: vec![20.0],
        trials,
        algorithms,
        base: ScenarioConfig::reference(4, 16),
        master_seed: 77,
        options: AlgoOptions::default(),
        timing: false,
    }
}

fn samples(res: &SweepResult, alg: Algorithm) -> Vec<f64> {
    res.record(20.0, alg).unwrap().1.iter().map(|s| s.unwrap()).collect()
}

#[test]
fn single_trial_equals_run_trial() {
    let algs = vec![Algorithm::Direct, Algorithm::Greedy];
    let res = run_sweep(&spec(1, algs.clone()), Some(1)).unwrap();
    let mut cfg = ScenarioConfig::reference(4, 16);
    cfg.ptx_dbm = 20.0;
    let t = run_trial(&cfg, 77, 0, &algs, &AlgoOptions::default(), false);
    for (alg, rec) in &t.results {
        let (r, s) = res.record(20.0, *alg).unwrap();
        assert_eq!(r.mean_se, rec.as_ref().unwrap().se);
        assert_eq!(s, &[Some(r.mean_se)]);
        assert_eq!(r.std_se, 0.0);
    }
}

#[test]
fn doubling_trials_keeps_prefix() {
    let algs = vec![Algorithm::Random, Algorithm::AddOne];
    let a = run_sweep(&spec(3, algs.clone()), Some(2)).unwrap();
    let b = run_sweep(&spec(6, algs), Some(3)).unwrap();
    for alg in [Algorithm::Random, Algorithm::AddOne] {
        assert_eq!(samples(&a, alg)[..], samples(&b, alg)[..3]);
    }
}

#[test]
fn aggregation_matches_streaming_recomputation() {
    let res = run_sweep(&spec(7, Algorithm::ALL.to_vec()), None).unwrap();
    assert_eq!(res.failures, 0);
    for alg in Algorithm::ALL {
        let xs = samples(&res, alg);
        // Welford
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in &xs {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let (r, _) = res.record(20.0, alg).unwrap();
        assert!((r.mean_se - mean).abs() < 1e-12 * mean);
        assert!((r.std_se - (m2 / (n - 1.0)).sqrt()).abs() < 1e-10 * mean);
        assert_eq!(r.trials, 7);
    }
    assert_eq!(mean_std(&[]), (0.0, 0.0));
}

#[test]
fn records_sorted_by_value_then_name() {
    let mut s = spec(1, vec![Algorithm::Random, Algorithm::Direct]);
    s.values = vec![0.0, 10.0];
    let res = run_sweep(&s, Some(1)).unwrap();
    let keys: Vec<(f64, &str)> = res
        .records
        .iter()
        .map(|r| (r.axis_value, r.algorithm.as_str()))
        .collect();
    assert_eq!(keys, vec![(0.0, "direct"), (0.0, "random"), (10.0, "direct"), (10.0, "random")]);
}

#[test]
fn empty_algorithm_list_emits_header_only() {
    let res = run_sweep(&spec(2, vec![]), Some(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit(&res, Format::Csv, &path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "axis,axis_value,algorithm,mean_se,std_se,mean_users,trials,mean_ms\n"
    );
}

#[test]
fn csv_and_json_round_trip() {
    let rec = SweepRecord {
        axis: "n_ris".into(),
        axis_value: 64.0,
        algorithm: "greedy".into(),
        mean_se: 19.1234568,
        std_se: 0.5,
        mean_users: 3.25,
        trials: 300,
        mean_ms: 0.0,
    };
    let text = csv_string(std::slice::from_ref(&rec)).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(parse_csv(&text).unwrap(), vec![rec.clone()]);

    let res = run_sweep(&spec(2, vec![Algorithm::Direct]), Some(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    emit(&res, Format::Json, &path).unwrap();
    let back: Vec<SweepRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, res.records);
}

#[test]
fn unwritable_path_is_an_error() {
    let res = run_sweep(&spec(1, vec![Algorithm::Direct]), Some(1)).unwrap();
    assert!(emit(&res, Format::Csv, Path::new("/nonexistent-dir/x/out.csv")).is_err());
}

#[test]
fn golden_mini_sweep() {
    let cfg = ConfigFile::load(Path::new(GOLDEN_CONFIG)).unwrap();
    let s = SweepSpec::from_config(&cfg, Axis::Power, 4, 2024, Algorithm::ALL.to_vec());
    let res = run_sweep(&s, Some(2)).unwrap();
    let expected = std::fs::read_to_string(GOLDEN_CSV).unwrap();
    assert_eq!(csv_string(&res.records).unwrap(), expected);
}

#[test]
fn shipped_configs_load() {
    for name in ["k4.json", "k12.json"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let cfg = ConfigFile::load(&path).unwrap();
        assert_eq!(cfg.scenario.n_bs, 8);
        assert!(!cfg.sweep.ptx_dbm.is_empty() && !cfg.sweep.n_ris.is_empty());
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-zf"))
}

#[test]
fn cli_run_matches_golden_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let status = cli()
        .args(["run", "--config", GOLDEN_CONFIG, "--sweep", "power", "--trials", "4"])
        .args(["--seed", "2024", "--algorithms", "direct,random,greedy,addone", "--workers", "3"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        std::fs::read_to_string(GOLDEN_CSV).unwrap()
    );

    // unknown algorithm and missing config are config errors
    let bad = cli()
        .args(["run", "--config", GOLDEN_CONFIG, "--sweep", "power", "--algorithms", "bcd"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(2));
    let missing = cli()
        .args(["run", "--config", "/nonexistent.json", "--sweep", "power", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));

    // unknown keys in the config file are rejected
    let text = std::fs::read_to_string(GOLDEN_CONFIG).unwrap();
    let cfg_path = dir.path().join("bad.json");
    std::fs::write(&cfg_path, text.replace("\"n_bs\"", "\"n_antennas\": 3, \"n_bs\"")).unwrap();
    let unknown = cli()
        .args(["run", "--sweep", "power", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(unknown.code(), Some(2));

    // unwritable output
    let io = cli()
        .args(["run", "--config", GOLDEN_CONFIG, "--sweep", "elements", "--trials", "1"])
        .args(["--algorithms", "direct", "--out", "/nonexistent-dir/o.csv"])
        .status()
        .unwrap();
    assert_eq!(io.code(), Some(1));
}

#[test]
fn cli_check_passes() {
    let out = cli().arg("check").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
