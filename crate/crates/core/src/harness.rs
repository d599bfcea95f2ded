//! Monte-Carlo sweeps over transmit power or RIS size.
//!
//! Trial `t` always draws its channel from stream `t` of the master seed, so
//! a power sweep reuses the same channels at every budget and doubling the
//! trial count leaves the first half untouched. Per-trial results are
//! collected in trial order before any reduction, which makes the output
//! independent of the worker count.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{recompute_se, run_algorithm, AlgoOptions, Algorithm, Instance};
use crate::channel::{dbm_to_watts, draw_realization, trial_rng, ScenarioConfig};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "axis",
    "axis_value",
    "algorithm",
    "mean_se",
    "std_se",
    "mean_users",
    "trials",
    "mean_ms",
];

/// Config file layout: the scenario plus the sweep axis values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioConfig,
    pub sweep: SweepAxes,
    #[serde(default)]
    pub options: AlgoOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub ptx_dbm: Vec<f64>,
    pub n_ris: Vec<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "ptx_dbm")]
    Power,
    #[serde(rename = "n_ris")]
    Elements,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Power => "ptx_dbm",
            Axis::Elements => "n_ris",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub base: ScenarioConfig,
    pub master_seed: u64,
    pub options: AlgoOptions,
    /// Record wall time per algorithm. Off by default because it breaks
    /// byte-identical output.
    pub timing: bool,
}

impl SweepSpec {
    /// Builds a sweep over one of the axes listed in a config file.
    pub fn from_config(cfg: &ConfigFile, axis: Axis, trials: usize, seed: u64, algorithms: Vec<Algorithm>) -> Self {
        let values = match axis {
            Axis::Power => cfg.sweep.ptx_dbm.clone(),
            Axis::Elements => cfg.sweep.n_ris.iter().map(|&n| n as f64).collect(),
        };
        Self {
            axis,
            values,
            trials,
            algorithms,
            base: cfg.scenario.clone(),
            master_seed: seed,
            options: cfg.options,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values are empty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return Err(Error::Config(format!("algorithm '{a}' listed twice")));
            }
        }
        for &v in &self.values {
            self.scenario_at(v)?.validate()?;
        }
        Ok(())
    }

    /// Scenario and linear transmit power at one axis value.
    pub fn scenario_at(&self, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = self.base.clone();
        match self.axis {
            Axis::Power => cfg.ptx_dbm = value,
            Axis::Elements => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("n_ris value {value} is not a count")));
                }
                cfg.n_ris = value as usize;
            }
        }
        Ok(cfg)
    }
}

/// Outcome of one algorithm on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub se: f64,
    pub users: usize,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: u64,
    /// One entry per requested algorithm, in request order.
    pub results: Vec<(Algorithm, std::result::Result<TrialRecord, String>)>,
}

/// Seed of the random-phase baseline for a trial, independent of the
/// channel stream.
pub fn phase_seed(seed: u64, trial: u64) -> u64 {
    trial_rng(seed ^ 0x9e37_79b9_7f4a_7c15, trial).next_u64()
}

/// Runs every algorithm on one shared realization.
pub fn run_trial(
    cfg: &ScenarioConfig,
    seed: u64,
    trial: u64,
    algorithms: &[Algorithm],
    opts: &AlgoOptions,
    timing: bool,
) -> TrialOutcome {
    let ptx = dbm_to_watts(cfg.ptx_dbm);
    let inst = draw_realization(cfg, seed, trial).and_then(Instance::new);
    let results = algorithms
        .iter()
        .map(|&alg| {
            let rec = match &inst {
                Ok(inst) => {
                    let start = Instant::now();
                    let out = run_algorithm(alg, inst, ptx, phase_seed(seed, trial), opts);
                    let ms = if timing {
                        start.elapsed().as_secs_f64() * 1e3
                    } else {
                        0.0
                    };
                    out.map(|r| TrialRecord {
                        se: r.se,
                        users: r.allocation.len(),
                        ms,
                    })
                    .map_err(|e| e.to_string())
                }
                Err(e) => Err(e.to_string()),
            };
            (alg, rec)
        })
        .collect();
    TrialOutcome { trial, results }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis: String,
    pub axis_value: f64,
    pub algorithm: String,
    pub mean_se: f64,
    pub std_se: f64,
    pub mean_users: f64,
    /// Successful trials.
    pub trials: usize,
    pub mean_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: Axis,
    /// Sorted by axis value, then algorithm name.
    pub records: Vec<SweepRecord>,
    /// Per-trial SE for every record, `None` where the trial failed.
    pub per_trial: Vec<Vec<Option<f64>>>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

impl SweepResult {
    pub fn record(&self, axis_value: f64, algorithm: Algorithm) -> Option<(&SweepRecord, &[Option<f64>])> {
        self.records
            .iter()
            .zip(&self.per_trial)
            .find(|(r, _)| r.axis_value == axis_value && r.algorithm == algorithm.as_str())
            .map(|(r, s)| (r, s.as_slice()))
    }
}

/// Mean and sample standard deviation; zero spread below two samples.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the sweep on `workers` threads (all cores when `None`).
pub fn run_sweep(spec: &SweepSpec, workers: Option<usize>) -> Result<SweepResult> {
    spec.validate()?;
    let scenarios = spec
        .values
        .iter()
        .map(|&v| spec.scenario_at(v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..scenarios.len())
        .flat_map(|p| (0..spec.trials as u64).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| {
                run_trial(
                    &scenarios[p],
                    spec.master_seed,
                    t,
                    &spec.algorithms,
                    &spec.options,
                    spec.timing,
                )
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut per_trial = Vec::new();
    let mut failures = 0;
    let mut failure_messages = Vec::new();
    for (p, &value) in spec.values.iter().enumerate() {
        let chunk = &outcomes[p * spec.trials..(p + 1) * spec.trials];
        for (a, &alg) in spec.algorithms.iter().enumerate() {
            let mut ses = Vec::new();
            let mut users = Vec::new();
            let mut ms = Vec::new();
            let mut samples = Vec::with_capacity(spec.trials);
            for outcome in chunk {
                match &outcome.results[a].1 {
                    Ok(rec) => {
                        ses.push(rec.se);
                        users.push(rec.users as f64);
                        ms.push(rec.ms);
                        samples.push(Some(rec.se));
                    }
                    Err(msg) => {
                        failures += 1;
                        failure_messages.push(format!(
                            "{}={value} trial {} {alg}: {msg}",
                            spec.axis.as_str(),
                            outcome.trial
                        ));
                        samples.push(None);
                    }
                }
            }
            let (mean_se, std_se) = mean_std(&ses);
            records.push(SweepRecord {
                axis: spec.axis.as_str().to_string(),
                axis_value: value,
                algorithm: alg.as_str().to_string(),
                mean_se,
                std_se,
                mean_users: mean_std(&users).0,
                trials: ses.len(),
                mean_ms: mean_std(&ms).0,
            });
            per_trial.push(samples);
        }
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| {
        records[i]
            .axis_value
            .total_cmp(&records[j].axis_value)
            .then_with(|| records[i].algorithm.cmp(&records[j].algorithm))
    });
    Ok(SweepResult {
        axis: spec.axis,
        records: order.iter().map(|&i| records[i].clone()).collect(),
        per_trial: order.iter().map(|&i| per_trial[i].clone()).collect(),
        failures,
        failure_messages,
    })
}

/// Formats with 9 significant digits in positional notation.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x.is_infinite() { x.to_string() } else { "0".into() };
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may carry into a new leading digit
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 9 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn csv_string(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.axis.clone(),
            fmt_sig9(r.axis_value),
            r.algorithm.clone(),
            fmt_sig9(r.mean_se),
            fmt_sig9(r.std_se),
            fmt_sig9(r.mean_users),
            r.trials.to_string(),
            fmt_sig9(r.mean_ms),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit(result: &SweepResult, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Csv => csv_string(&result.records)?,
        Format::Json => serde_json::to_string_pretty(&result.records)? + "\n",
    };
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Parses CSV produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |e: csv::Error| Error::Config(format!("csv: {e}"));
    if rdr.headers().map_err(bad)?.iter().ne(CSV_HEADER) {
        return Err(Error::Config("unexpected csv header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("csv field '{s}': {e}")));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(bad)?;
        out.push(SweepRecord {
            axis: row[0].to_string(),
            axis_value: num(&row[1])?,
            algorithm: row[2].to_string(),
            mean_se: num(&row[3])?,
            std_se: num(&row[4])?,
            mean_users: num(&row[5])?,
            trials: row[6]
                .parse()
                .map_err(|e| Error::Config(format!("csv trials: {e}")))?,
            mean_ms: num(&row[7])?,
        });
    }
    Ok(out)
}

/// One named self-check outcome.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn attempt<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    f()
}

/// Quick invariants on small seeded instances, run by `ris-zf check`.
pub fn self_check() -> Vec<Check> {
    use crate::numerics::CVec;
    use crate::phase_opt::{waterfill, waterfill_kkt_residual};
    use crate::zf_core::check_unit_modulus;

    let mut checks = Vec::new();
    let mut push = |name: &'static str, r: Result<(bool, String)>| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, e.to_string()));
        checks.push(Check { name, passed, detail });
    };
    let cfg = ScenarioConfig::reference(4, 16);
    let ptx = dbm_to_watts(cfg.ptx_dbm);
    let opts = AlgoOptions::default();

    push("waterfilling KKT", Ok({
        let gains = [3.0, 1.0, 0.2, 0.05];
        let p = waterfill(&gains, 2.0);
        let res = waterfill_kkt_residual(&gains, &p, 2.0);
        (res <= 1e-10, format!("residual {res:.2e}"))
    }));

    push("direct determinism", attempt(|| {
        let a = run_trial(&cfg, 7, 3, &[Algorithm::Direct], &opts, false);
        let b = run_trial(&cfg, 7, 3, &[Algorithm::Direct], &opts, false);
        let (sa, sb) = (a.results[0].1.clone(), b.results[0].1.clone());
        Ok((sa.is_ok() && sa == sb, format!("{sa:?}")))
    }));

    push("dead RIS reduction", attempt(|| {
        let r = draw_realization(&cfg, 7, 0)?.with_dead_ris();
        let inst = Instance::new(r)?;
        let d = run_algorithm(Algorithm::Direct, &inst, ptx, 0, &opts)?;
        let g = run_algorithm(Algorithm::Greedy, &inst, ptx, 0, &opts)?;
        Ok(((d.se - g.se).abs() <= 1e-9, format!("direct {:.6} greedy {:.6}", d.se, g.se)))
    }));

    for (name, alg) in [("greedy consistency", Algorithm::Greedy), ("addone consistency", Algorithm::AddOne)] {
        push(name, attempt(|| {
            let inst = Instance::new(draw_realization(&cfg, 11, 1)?)?;
            let res = run_algorithm(alg, &inst, ptx, 0, &opts)?;
            let theta: CVec = res.theta.clone().unwrap_or_else(|| CVec::zeros(0));
            check_unit_modulus(&theta)?;
            let se = recompute_se(&inst.realization, &res)?;
            let ok = (se - res.se).abs() <= 1e-8 * res.se.max(1.0);
            Ok((ok, format!("reported {:.9} recomputed {:.9}", res.se, se)))
        }));
    }

    push("csv round trip", attempt(|| {
        let spec = SweepSpec {
            axis: Axis::Power,
            values: vec![10.0],
            trials: 2,
            algorithms: vec![Algorithm::Direct, Algorithm::Random],
            base: cfg.clone(),
            master_seed: 1,
            options: opts,
            timing: false,
        };
        let res = run_sweep(&spec, Some(1))?;
        let text = csv_string(&res.records)?;
        let back = parse_csv(&text)?;
        Ok((csv_string(&back)? == text && res.failures == 0, format!("{} rows", back.len())))
    }));

    checks
}
