//! Experiment orchestration: JSON configs, seed-parallel sweeps, CSV/JSON
//! persistence and summary statistics.
//!
//! Work items are `(horizon, instance, seed)` triples. Each is simulated
//! independently on the rayon pool and results are merged in item order, so
//! the CSV is byte-identical across runs and thread counts unless wall-clock
//! timing is switched on.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AuctionEnv, ValuationSchedule};
use crate::ic_verify::{
    allocation_profile, bid_grid, deviation_families, global_ic_check, myerson_identity_residual,
    stage_ic_check, DEFAULT_TOLERANCE,
};
use crate::lowerbound::{make_lb_pair, ucb_regret_ceiling};
use crate::mechanisms::{Mechanism, MechanismConfig};
use crate::rng::derive_seed;
use crate::stats::MeanStat;

pub const CSV_HEADER: [&str; 10] = [
    "experiment_id",
    "mechanism",
    "T",
    "seed",
    "total_opt",
    "total_revenue",
    "total_regret",
    "exploration_rounds",
    "clear_winner",
    "wall_ms",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] crate::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

fn invalid(path: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Sweep,
    IcCheck,
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Fixed {
        ctrs: Vec<f64>,
        values: Vec<f64>,
    },
    /// Per-round values, inline or from a headerless CSV with one row per round.
    Adversarial {
        ctrs: Vec<f64>,
        #[serde(default)]
        table: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        table_csv: Option<PathBuf>,
    },
    /// The four-ad instance pair built per horizon.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcSettings {
    pub states: usize,
    pub grid_points: usize,
    pub seeds: u64,
}

impl Default for IcSettings {
    fn default() -> Self {
        Self {
            states: 1000,
            grid_points: 101,
            seeds: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_id")]
    pub experiment_id: String,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub env: Option<EnvSpec>,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub mechanism_config: MechanismConfig,
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Record wall-clock milliseconds in the CSV. Off by default so output
    /// is reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub ic: IcSettings,
}

fn default_id() -> String {
    "experiment".into()
}

fn default_mechanism() -> Mechanism {
    Mechanism::Ucb
}

fn default_seeds() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment_id: default_id(),
            experiment: Some(kind),
            env: None,
            mechanism: default_mechanism(),
            mechanism_config: MechanismConfig::default(),
            horizons: Vec::new(),
            seeds: default_seeds(),
            master_seed: 0,
            output: None,
            threads: None,
            timing: false,
            ic: IcSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> HarnessResult<ExperimentKind> {
        self.experiment
            .ok_or_else(|| invalid("experiment", "experiment kind not set"))
    }

    /// Checks field-level invariants and returns the first violation.
    pub fn validate(&self) -> HarnessResult<()> {
        let kind = self.kind()?;
        if self.experiment_id.is_empty() || self.experiment_id.contains(['/', ',', '\n']) {
            return Err(invalid(
                "experiment_id",
                "must be nonempty without '/', ',' or newlines",
            ));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds", "must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be >= 1"));
        }
        if let crate::mechanisms::EtcTermination::FixedBudget { cycles: 0 } =
            self.mechanism_config.etc_termination
        {
            return Err(invalid(
                "mechanism_config.etc_termination.cycles",
                "must be >= 1",
            ));
        }
        if kind != ExperimentKind::IcCheck {
            if self.horizons.is_empty() {
                return Err(invalid("horizons", "must be nonempty"));
            }
            if kind == ExperimentKind::Sweep || kind == ExperimentKind::LowerBound {
                if let Some(k) = self.horizons.windows(2).position(|w| w[1] <= w[0]) {
                    return Err(invalid(
                        format!("horizons[{}]", k + 1),
                        "horizons must be strictly increasing",
                    ));
                }
            }
        } else {
            if self.ic.states == 0 {
                return Err(invalid("ic.states", "must be >= 1"));
            }
            if self.ic.grid_points < 2 {
                return Err(invalid("ic.grid_points", "must be >= 2"));
            }
            if self.ic.seeds == 0 {
                return Err(invalid("ic.seeds", "must be >= 1"));
            }
        }
        if kind == ExperimentKind::LowerBound {
            if self.horizons.first() == Some(&0) {
                return Err(invalid("horizons[0]", "lower-bound horizons must be >= 1"));
            }
            return match &self.env {
                None | Some(EnvSpec::LowerBound) => Ok(()),
                Some(_) => Err(invalid("env", "lower-bound experiments use kind \"lower_bound\"")),
            };
        }
        let env = self
            .env
            .as_ref()
            .ok_or_else(|| invalid("env", "environment is required"))?;
        match env {
            EnvSpec::LowerBound => {
                if kind == ExperimentKind::IcCheck {
                    return Err(invalid("env", "ic-check needs a fixed environment"));
                }
                if self.horizons.contains(&0) {
                    return Err(invalid("horizons", "lower-bound horizons must be >= 1"));
                }
            }
            EnvSpec::Fixed { ctrs, values } => {
                check_ctrs(ctrs, "env.fixed")?;
                if values.len() != ctrs.len() {
                    return Err(invalid(
                        "env.fixed.values",
                        format!("expected {} values, got {}", ctrs.len(), values.len()),
                    ));
                }
                if let Some(i) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(invalid(format!("env.fixed.values[{i}]"), "must be > 0"));
                }
            }
            EnvSpec::Adversarial {
                ctrs,
                table,
                table_csv,
            } => {
                check_ctrs(ctrs, "env.adversarial")?;
                if kind == ExperimentKind::IcCheck {
                    return Err(invalid("env", "ic-check needs a fixed environment"));
                }
                if self.mechanism == Mechanism::Etc {
                    return Err(invalid("mechanism", "etc requires a fixed environment"));
                }
                match (table, table_csv) {
                    (Some(_), Some(_)) | (None, None) => {
                        return Err(invalid(
                            "env.adversarial",
                            "give exactly one of `table` or `table_csv`",
                        ))
                    }
                    (Some(rows), None) => check_table(rows, ctrs.len(), "env.adversarial.table")?,
                    (None, Some(_)) => {}
                }
            }
        }
        Ok(())
    }

    /// Environment for horizon `t` (the lower-bound pair yields two).
    fn instances(&self, horizon: usize) -> HarnessResult<Vec<(String, AuctionEnv)>> {
        let spec = match (&self.env, self.kind()?) {
            (_, ExperimentKind::LowerBound) | (Some(EnvSpec::LowerBound), _) => {
                let pair = make_lb_pair(horizon, self.master_seed)?;
                return Ok(vec![
                    (format!("{}/env_1", self.experiment_id), pair.env_1),
                    (format!("{}/env_2", self.experiment_id), pair.env_2),
                ]);
            }
            (Some(spec), _) => spec,
            (None, _) => return Err(invalid("env", "environment is required")),
        };
        let env = match spec {
            EnvSpec::Fixed { ctrs, values } => {
                AuctionEnv::fixed(ctrs.clone(), values.clone(), horizon, self.master_seed)?
            }
            EnvSpec::Adversarial {
                ctrs,
                table,
                table_csv,
            } => {
                let rows = match (table, table_csv) {
                    (Some(rows), _) => rows.clone(),
                    (None, Some(path)) => read_table(path, ctrs.len())?,
                    (None, None) => return Err(invalid("env", "missing valuation table")),
                };
                if rows.len() < horizon {
                    return Err(invalid(
                        "env.adversarial.table",
                        format!("{} rows, horizon {horizon} requested", rows.len()),
                    ));
                }
                AuctionEnv::new(
                    ctrs.clone(),
                    ValuationSchedule::Adversarial(rows[..horizon].to_vec()),
                    horizon,
                    self.master_seed,
                )?
            }
            EnvSpec::LowerBound => unreachable!(),
        };
        Ok(vec![(self.experiment_id.clone(), env)])
    }
}

fn check_ctrs(ctrs: &[f64], prefix: &str) -> HarnessResult<()> {
    if ctrs.len() < 2 {
        return Err(invalid(format!("{prefix}.ctrs"), "need at least 2 ads"));
    }
    if let Some(i) = ctrs.iter().position(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(invalid(format!("{prefix}.ctrs[{i}]"), "must lie in (0, 1)"));
    }
    Ok(())
}

fn check_table(rows: &[Vec<f64>], n: usize, path: &str) -> HarnessResult<()> {
    for (t, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(invalid(format!("{path}[{t}]"), format!("expected {n} values")));
        }
        if let Some(i) = row.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("{path}[{t}][{i}]"), "must be > 0"));
        }
    }
    Ok(())
}

/// Reads a headerless CSV valuation table, one row per round.
pub fn read_table(path: &Path, n: usize) -> HarnessResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (t, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(i, field)| {
                field
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("env.adversarial.table_csv[{t}][{i}]"), e.to_string()))
            })
            .collect::<HarnessResult<Vec<f64>>>()?;
        rows.push(row);
    }
    check_table(&rows, n, "env.adversarial.table_csv")?;
    Ok(rows)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub experiment_id: String,
    pub mechanism: Mechanism,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub total_opt: f64,
    pub total_revenue: f64,
    pub total_regret: f64,
    pub exploration_rounds: Option<usize>,
    /// 0-based ad index.
    pub clear_winner: Option<usize>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStat {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub regret: MeanStat,
    pub mean_revenue: f64,
    pub mean_opt: f64,
    pub negative_fraction: f64,
    /// Fraction of explore-then-commit runs that committed.
    pub committed_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub experiment_id: String,
    pub mechanism: Mechanism,
    pub per_horizon: Vec<HorizonStat>,
    /// Log-log slope of mean regret against `T`; absent unless every mean is positive.
    pub slope: Option<f64>,
    pub negative_fraction: f64,
}

/// Per-horizon maximum of the two instance means of a lower-bound pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPoint {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub max_mean: f64,
    pub std_err: f64,
    /// `√T / 64`.
    pub floor: f64,
    /// Worst-case UCB regret ceiling for the pair's instances.
    pub ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub experiment_id: String,
    pub mechanism: Mechanism,
    pub points: Vec<PairPoint>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub groups: Vec<GroupSummary>,
    pub pairs: Vec<PairSummary>,
    #[serde(skip)]
    pub rows: Vec<RunRow>,
}

/// Least-squares slope of `ln y` on `ln T`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> crate::Result<f64> {
    if points.len() < 2 {
        return Err(crate::Error::Arity {
            min: 2,
            got: points.len(),
        });
    }
    if let Some((t, y)) = points.iter().find(|(t, y)| !(*y > 0.0) || !(*t > 0.0)) {
        return Err(crate::Error::Domain(format!(
            "log-log fit needs positive coordinates, got ({t}, {y})"
        )));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(crate::Error::Domain("T must be strictly increasing".into()));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Groups rows by `(experiment_id, mechanism)` and `T`.
pub fn summarize_rows(rows: &[RunRow]) -> HarnessResult<SweepSummary> {
    let mut grouped: BTreeMap<(String, Mechanism), BTreeMap<usize, Vec<&RunRow>>> = BTreeMap::new();
    for row in rows {
        grouped
            .entry((row.experiment_id.clone(), row.mechanism))
            .or_default()
            .entry(row.horizon)
            .or_default()
            .push(row);
    }
    let mut groups = Vec::new();
    for ((experiment_id, mechanism), by_t) in grouped {
        let mut per_horizon = Vec::new();
        let (mut negatives, mut total) = (0, 0);
        for (horizon, rows) in by_t {
            let regrets: Vec<f64> = rows.iter().map(|r| r.total_regret).collect();
            let neg = regrets.iter().filter(|&&r| r < 0.0).count();
            negatives += neg;
            total += rows.len();
            let k = rows.len() as f64;
            let committed_fraction = (mechanism == Mechanism::Etc).then(|| {
                let horizon_reached = rows
                    .iter()
                    .filter(|r| r.exploration_rounds.is_some_and(|e| e < r.horizon) || r.clear_winner.is_some())
                    .count();
                fraction(horizon_reached, rows.len())
            });
            per_horizon.push(HorizonStat {
                horizon,
                regret: MeanStat::from_samples(&regrets)?,
                mean_revenue: rows.iter().map(|r| r.total_revenue).sum::<f64>() / k,
                mean_opt: rows.iter().map(|r| r.total_opt).sum::<f64>() / k,
                negative_fraction: fraction(neg, rows.len()),
                committed_fraction,
            });
        }
        let points: Vec<(f64, f64)> = per_horizon
            .iter()
            .map(|h| (h.horizon as f64, h.regret.mean))
            .collect();
        let slope = (points.len() >= 2 && points.iter().all(|p| p.1 > 0.0))
            .then(|| fit_loglog_slope(&points))
            .transpose()?;
        groups.push(GroupSummary {
            experiment_id,
            mechanism,
            per_horizon,
            slope,
            negative_fraction: fraction(negatives, total),
        });
    }
    let pairs = pair_summaries(&groups)?;
    Ok(SweepSummary {
        groups,
        pairs,
        rows: rows.to_vec(),
    })
}

fn pair_summaries(groups: &[GroupSummary]) -> HarnessResult<Vec<PairSummary>> {
    let mut out = Vec::new();
    for g1 in groups {
        let Some(base) = g1.experiment_id.strip_suffix("/env_1") else {
            continue;
        };
        let Some(g2) = groups.iter().find(|g| {
            g.mechanism == g1.mechanism && g.experiment_id == format!("{base}/env_2")
        }) else {
            continue;
        };
        let mut points = Vec::new();
        for h1 in &g1.per_horizon {
            let Some(h2) = g2.per_horizon.iter().find(|h| h.horizon == h1.horizon) else {
                continue;
            };
            let top = if h1.regret.mean >= h2.regret.mean { h1 } else { h2 };
            let pair = make_lb_pair(h1.horizon, 0)?;
            points.push(PairPoint {
                horizon: h1.horizon,
                max_mean: top.regret.mean,
                std_err: top.regret.std_err,
                floor: (h1.horizon as f64).sqrt() / 64.0,
                ceiling: ucb_regret_ceiling(&pair.env_1)?,
            });
        }
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.horizon as f64, p.max_mean)).collect();
        let slope = (xy.len() >= 2 && xy.iter().all(|p| p.1 > 0.0))
            .then(|| fit_loglog_slope(&xy))
            .transpose()?;
        out.push(PairSummary {
            experiment_id: base.to_string(),
            mechanism: g1.mechanism,
            points,
            slope,
        });
    }
    Ok(out)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> HarnessResult<T> {
    match threads {
        Some(k) => Ok(rayon::ThreadPoolBuilder::new().num_threads(k).build()?.install(f)),
        None => Ok(f()),
    }
}

/// Simulates every `(T, instance, seed)` item and returns rows in item order.
pub fn simulate_rows(config: &ExperimentConfig) -> HarnessResult<Vec<RunRow>> {
    let mut items = Vec::new();
    for &horizon in &config.horizons {
        for (id, env) in config.instances(horizon)? {
            for seed in 0..config.seeds {
                items.push((id.clone(), env.clone(), seed));
            }
        }
    }
    let mech = config.mechanism;
    let mcfg = config.mechanism_config;
    let timing = config.timing;
    with_pool(config.threads, || {
        items
            .par_iter()
            .map(|(id, env, seed)| {
                let start = Instant::now();
                let run = mech.run_truthful(env, &mcfg, *seed)?;
                let wall_ms = if timing { start.elapsed().as_millis() as u64 } else { 0 };
                Ok(RunRow {
                    experiment_id: id.clone(),
                    mechanism: mech,
                    horizon: env.horizon(),
                    seed: *seed,
                    total_opt: run.total_opt,
                    total_revenue: run.total_revenue,
                    total_regret: run.total_regret,
                    exploration_rounds: run.exploration_rounds,
                    clear_winner: run.clear_winner,
                    wall_ms,
                })
            })
            .collect::<HarnessResult<Vec<_>>>()
    })?
}

pub fn write_csv(path: &Path, rows: &[RunRow]) -> HarnessResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(format!("writing {}", path.display())))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> HarnessResult<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(invalid(
            path.display().to_string(),
            format!("unexpected CSV header {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(format!("writing {}", path.display())))
}

/// Results of the incentive certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSummary {
    pub states: usize,
    pub stage_max_gain: f64,
    pub myerson_max_residual: f64,
    pub allocation_monotone: bool,
    pub global: Vec<GlobalIcFamily>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalIcFamily {
    pub ad: usize,
    pub family: String,
    pub max_delta: f64,
    pub seeds: u64,
}

/// A frozen-score single round: scores, every bid, the tested ad and its
/// value and true CTR.
#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    pub scores: Vec<f64>,
    pub bids: Vec<f64>,
    pub ad: usize,
    pub value: f64,
    pub ctr: f64,
}

/// Random state; every fourth one puts the tested bid exactly on its threshold.
pub fn random_stage_state(rng: &mut impl Rng, index: usize) -> StageState {
    let n = rng.gen_range(2..=6);
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..2.0)).collect();
    let mut bids: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let ad = rng.gen_range(0..n);
    let value = rng.gen_range(0.01..2.0);
    let ctr = rng.gen_range(0.01..0.99);
    if index % 4 == 3 {
        let rival = (0..n)
            .filter(|&j| j != ad)
            .map(|j| scores[j] * bids[j])
            .fold(0.0, f64::max);
        bids[ad] = rival / scores[ad];
    } else {
        bids[ad] = value;
    }
    StageState {
        scores,
        bids,
        ad,
        value,
        ctr,
    }
}

pub fn run_ic_check(config: &ExperimentConfig) -> HarnessResult<IcSummary> {
    let settings = config.ic;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, &[0x1c]));
    let states: Vec<StageState> = (0..settings.states)
        .map(|k| random_stage_state(&mut rng, k))
        .collect();
    let mut stage_max_gain = f64::NEG_INFINITY;
    let mut myerson_max_residual: f64 = 0.0;
    let mut allocation_monotone = true;
    for s in &states {
        let grid = bid_grid(s.value, settings.grid_points);
        let report = stage_ic_check(&s.scores, &s.bids, s.ad, s.value, s.ctr, &grid)?;
        stage_max_gain = stage_max_gain.max(report.max_gain);
        let residual = myerson_identity_residual(&s.scores, &s.bids, s.ad, s.ctr)?;
        myerson_max_residual = myerson_max_residual.max(residual.abs());
        let wins = allocation_profile(&s.scores, &s.bids, s.ad, &grid)?;
        allocation_monotone &= wins.windows(2).all(|w| w[0] <= w[1]);
    }

    let env = config
        .instances(config.horizons.first().copied().unwrap_or(2000))?
        .remove(0)
        .1;
    let mech = config.mechanism;
    let mcfg = config.mechanism_config;
    let families = deviation_families(&env);
    let mut work = Vec::new();
    for ad in 0..env.n() {
        for (name, policy) in &families {
            work.push((ad, name.clone(), *policy));
        }
    }
    let global = with_pool(config.threads, || {
        work.par_iter()
            .map(|(ad, name, policy)| {
                let deltas = (0..settings.seeds)
                    .map(|seed| global_ic_check(mech, &env, *ad, *policy, &mcfg, seed))
                    .collect::<crate::Result<Vec<f64>>>()?;
                Ok(GlobalIcFamily {
                    ad: *ad,
                    family: name.clone(),
                    max_delta: deltas.into_iter().fold(f64::NEG_INFINITY, f64::max),
                    seeds: settings.seeds,
                })
            })
            .collect::<HarnessResult<Vec<_>>>()
    })??;
    let tol = DEFAULT_TOLERANCE;
    let passed = stage_max_gain <= tol
        && myerson_max_residual <= tol
        && allocation_monotone
        && (mech != Mechanism::Etc || global.iter().all(|g| g.max_delta <= tol));
    Ok(IcSummary {
        states: settings.states,
        stage_max_gain,
        myerson_max_residual,
        allocation_monotone,
        global,
        tolerance: tol,
        passed,
    })
}

/// What an experiment produced.
#[derive(Debug, Clone)]
pub enum ExperimentOutput {
    Sweep(SweepSummary),
    Ic(IcSummary),
}

/// Validates, runs and (when `output` is set) persists an experiment:
/// `results.csv` and `summary.json` for simulations, `ic_summary.json` for
/// incentive checks.
pub fn run_experiment(config: &ExperimentConfig) -> HarnessResult<ExperimentOutput> {
    config.validate()?;
    if config.kind()? == ExperimentKind::IcCheck {
        let summary = run_ic_check(config)?;
        if let Some(dir) = &config.output {
            write_json(&dir.join("ic_summary.json"), &summary)?;
        }
        return Ok(ExperimentOutput::Ic(summary));
    }
    let rows = simulate_rows(config)?;
    let summary = summarize_rows(&rows)?;
    if let Some(dir) = &config.output {
        write_csv(&dir.join("results.csv"), &rows)?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(ExperimentOutput::Sweep(summary))
}

/// Thresholds checked by `report --assert`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReportAssertions {
    /// Allowed range for every available slope (pair slopes when present).
    pub slope_range: Option<(f64, f64)>,
    /// Upper bound on mean regret divided by `T`, for every group and horizon.
    pub max_regret_per_round: Option<f64>,
    /// Require pair max-means within two standard errors of `√T/64` or above.
    pub lower_bound_floor: bool,
    /// Require pair max-means at or below the worst-case ceiling.
    pub upper_ceiling: bool,
}

/// Returns one message per failed assertion.
pub fn check_assertions(summary: &SweepSummary, a: &ReportAssertions) -> Vec<String> {
    let mut failures = Vec::new();
    if let Some((lo, hi)) = a.slope_range {
        let slopes: Vec<(String, Option<f64>)> = if summary.pairs.is_empty() {
            summary
                .groups
                .iter()
                .map(|g| (g.experiment_id.clone(), g.slope))
                .collect()
        } else {
            summary
                .pairs
                .iter()
                .map(|p| (p.experiment_id.clone(), p.slope))
                .collect()
        };
        for (id, slope) in slopes {
            match slope {
                Some(s) if (lo..=hi).contains(&s) => {}
                Some(s) => failures.push(format!("{id}: slope {s:.4} outside [{lo}, {hi}]")),
                None => failures.push(format!("{id}: slope undefined")),
            }
        }
    }
    if let Some(max) = a.max_regret_per_round {
        for g in &summary.groups {
            for h in &g.per_horizon {
                let per = h.regret.mean / h.horizon.max(1) as f64;
                if per > max {
                    failures.push(format!(
                        "{} T={}: mean regret per round {per:.6} > {max}",
                        g.experiment_id, h.horizon
                    ));
                }
            }
        }
    }
    for p in &summary.pairs {
        for pt in &p.points {
            if a.lower_bound_floor && pt.max_mean < pt.floor - 2.0 * pt.std_err {
                failures.push(format!(
                    "{} T={}: max mean regret {:.4} below floor {:.4} (se {:.4})",
                    p.experiment_id, pt.horizon, pt.max_mean, pt.floor, pt.std_err
                ));
            }
            if a.upper_ceiling && pt.max_mean > pt.ceiling {
                failures.push(format!(
                    "{} T={}: max mean regret {:.4} above ceiling {:.4}",
                    p.experiment_id, pt.horizon, pt.max_mean, pt.ceiling
                ));
            }
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let sqrt: Vec<(f64, f64)> = [10.0f64, 100.0, 1000.0].iter().map(|&t| (t, 3.0 * t.sqrt())).collect();
        assert!((fit_loglog_slope(&sqrt).unwrap() - 0.5).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&t| (t, 2.0)).collect();
        assert!(fit_loglog_slope(&flat).unwrap().abs() < 1e-12);
        let lin: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&t| (t, 0.1 * t)).collect();
        assert!((fit_loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn slope_domain_errors() {
        assert!(matches!(
            fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]),
            Err(crate::Error::Domain(_))
        ));
        assert!(matches!(fit_loglog_slope(&[(1.0, 1.0)]), Err(crate::Error::Arity { .. })));
        assert!(fit_loglog_slope(&[(2.0, 1.0), (1.0, 2.0)]).is_err());
    }

    fn sweep_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(ExperimentKind::Sweep);
        c.env = Some(EnvSpec::Fixed {
            ctrs: vec![0.9, 0.8],
            values: vec![1.0, 0.5],
        });
        c.horizons = vec![10, 20];
        c.seeds = 3;
        c
    }

    #[test]
    fn validation_paths() {
        let mut c = sweep_config();
        c.seeds = 0;
        assert!(matches!(c.validate(), Err(HarnessError::Config { path, .. }) if path == "seeds"));

        let mut c = sweep_config();
        c.horizons = vec![10, 10];
        assert!(matches!(c.validate(), Err(HarnessError::Config { path, .. }) if path == "horizons[1]"));

        let mut c = sweep_config();
        c.env = Some(EnvSpec::Fixed {
            ctrs: vec![0.9, 1.2],
            values: vec![1.0, 0.5],
        });
        assert!(matches!(c.validate(), Err(HarnessError::Config { path, .. }) if path == "env.fixed.ctrs[1]"));

        let err = ExperimentConfig::from_json(r#"{"seeds": "many"}"#).unwrap_err();
        assert!(matches!(err, HarnessError::Config { path, .. } if path == "seeds"));

        let err = ExperimentConfig::from_json(r#"{"env": {"fixed": {"ctrs": [0.5, "x"], "values": []}}}"#)
            .unwrap_err();
        assert!(matches!(err, HarnessError::Config { path, .. } if path == "env.fixed.ctrs[1]"));
    }

    #[test]
    fn rows_in_item_order() {
        let rows = simulate_rows(&sweep_config()).unwrap();
        assert_eq!(rows.len(), 6);
        let keys: Vec<(usize, u64)> = rows.iter().map(|r| (r.horizon, r.seed)).collect();
        assert_eq!(keys, vec![(10, 0), (10, 1), (10, 2), (20, 0), (20, 1), (20, 2)]);
    }

    #[test]
    fn oracle_summary_is_zero() {
        let mut c = sweep_config();
        c.mechanism = Mechanism::Oracle;
        let ExperimentOutput::Sweep(s) = run_experiment(&c).unwrap() else {
            panic!("expected sweep output");
        };
        for h in &s.groups[0].per_horizon {
            assert!(h.regret.mean.abs() < 1e-12);
        }
        assert_eq!(s.groups[0].slope, None);
    }
}
