//! Experiment CLI.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 a checked threshold
//! failed (`report --assert`, or a failed `ic-check` certificate), 1 anything
//! else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ppc_auction::harness::{
    check_assertions, read_csv, run_experiment, summarize_rows, write_json, EnvSpec,
    ExperimentConfig, ExperimentKind, ExperimentOutput, HarnessError, ReportAssertions,
};
use ppc_auction::mechanisms::{Accounting, EtcTermination, Mechanism};
use ppc_auction::stats::BonusVariant;

#[derive(Parser)]
#[command(name = "ppc-auction", version, about = "Online pay-per-click auction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mechanism for `seeds` runs at each horizon.
    Simulate(ExperimentArgs),
    /// Like simulate, with strictly increasing horizons and a log-log slope fit.
    Sweep(ExperimentArgs),
    /// Stage-IC, payment-identity and coupled global-IC certificates.
    IcCheck(ExperimentArgs),
    /// Sweep over the four-ad lower-bound instance pair.
    LowerBound(ExperimentArgs),
    /// Summarize result CSVs and optionally assert thresholds.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Oracle,
    Ucb,
    Etc,
}

#[derive(Clone, Copy, ValueEnum)]
enum AccountingArg {
    Expected,
    Realized,
}

#[derive(Clone, Copy, ValueEnum)]
enum BonusArg {
    /// sqrt(3 ln(2nT) / 2N)
    Log2nt,
    /// sqrt(3 ln(T) / 2N)
    LogT,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment_id: Option<String>,
    /// Comma-separated true CTRs.
    #[arg(long, value_delimiter = ',')]
    ctrs: Option<Vec<f64>>,
    /// Comma-separated fixed values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Headerless CSV of per-round values (adversarial schedule).
    #[arg(long, conflicts_with = "values")]
    table_csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long, value_enum)]
    accounting: Option<AccountingArg>,
    #[arg(long, value_enum)]
    bonus: Option<BonusArg>,
    /// Count warm-start impressions in OPT.
    #[arg(long)]
    include_warmstart: bool,
    /// Explore-then-commit: fixed number of exploration cycles instead of the clear-winner test.
    #[arg(long)]
    etc_budget: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Output directory for results.csv / summary.json.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock milliseconds per run.
    #[arg(long)]
    timing: bool,
    /// ic-check: number of randomized single-round states.
    #[arg(long)]
    ic_states: Option<usize>,
    /// ic-check: coupled seeds per deviation family.
    #[arg(long)]
    ic_seeds: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result CSVs written by simulate/sweep/lower-bound.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Exit with code 3 if any threshold below fails.
    #[arg(long)]
    assert: bool,
    #[arg(long, requires = "slope_max")]
    slope_min: Option<f64>,
    #[arg(long, requires = "slope_min")]
    slope_max: Option<f64>,
    #[arg(long)]
    max_regret_per_round: Option<f64>,
    #[arg(long)]
    lower_bound_floor: bool,
    #[arg(long)]
    upper_ceiling: bool,
}

fn build_config(kind: ExperimentKind, args: ExperimentArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(kind),
    };
    match c.experiment {
        Some(k) if k != kind => {
            return Err(HarnessError::Config {
                path: "experiment".into(),
                message: format!("config declares {k:?} but the {kind:?} subcommand was used"),
            })
        }
        _ => c.experiment = Some(kind),
    }
    if let Some(id) = args.experiment_id {
        c.experiment_id = id;
    }
    if args.ctrs.is_some() || args.values.is_some() || args.table_csv.is_some() {
        let (old_ctrs, old_values) = match c.env.take() {
            Some(EnvSpec::Fixed { ctrs, values }) => (Some(ctrs), Some(values)),
            Some(EnvSpec::Adversarial { ctrs, .. }) => (Some(ctrs), None),
            _ => (None, None),
        };
        let ctrs = args.ctrs.or(old_ctrs).unwrap_or_default();
        c.env = Some(match args.table_csv {
            Some(path) => EnvSpec::Adversarial {
                ctrs,
                table: None,
                table_csv: Some(path),
            },
            None => EnvSpec::Fixed {
                ctrs,
                values: args.values.or(old_values).unwrap_or_default(),
            },
        });
    }
    if let Some(m) = args.mechanism {
        c.mechanism = match m {
            MechanismArg::Oracle => Mechanism::Oracle,
            MechanismArg::Ucb => Mechanism::Ucb,
            MechanismArg::Etc => Mechanism::Etc,
        };
    }
    if let Some(a) = args.accounting {
        c.mechanism_config.accounting = match a {
            AccountingArg::Expected => Accounting::Expected,
            AccountingArg::Realized => Accounting::Realized,
        };
    }
    if let Some(b) = args.bonus {
        c.mechanism_config.bonus_variant = match b {
            BonusArg::Log2nt => BonusVariant::AnalysisLog2nT,
            BonusArg::LogT => BonusVariant::PaperLiteralLogT,
        };
    }
    if args.include_warmstart {
        c.mechanism_config.include_warmstart_in_regret = true;
    }
    if let Some(cycles) = args.etc_budget {
        c.mechanism_config.etc_termination = EtcTermination::FixedBudget { cycles };
    }
    if let Some(h) = args.horizons {
        c.horizons = h;
    }
    if let Some(s) = args.seeds {
        c.seeds = s;
    }
    if let Some(s) = args.master_seed {
        c.master_seed = s;
    }
    if args.output.is_some() {
        c.output = args.output;
    }
    if args.threads.is_some() {
        c.threads = args.threads;
    }
    if args.timing {
        c.timing = true;
    }
    if let Some(k) = args.ic_states {
        c.ic.states = k;
    }
    if let Some(k) = args.ic_seeds {
        c.ic.seeds = k;
    }
    Ok(c)
}

fn print_sweep(summary: &ppc_auction::harness::SweepSummary) {
    for g in &summary.groups {
        for h in &g.per_horizon {
            println!(
                "{} {} T={} regret={:.6} se={:.6} regret/T={:.6} negative={:.3}",
                g.experiment_id,
                g.mechanism,
                h.horizon,
                h.regret.mean,
                h.regret.std_err,
                h.regret.mean / h.horizon.max(1) as f64,
                h.negative_fraction
            );
        }
        if let Some(s) = g.slope {
            println!("{} slope={s:.4}", g.experiment_id);
        }
    }
    for p in &summary.pairs {
        for pt in &p.points {
            println!(
                "{} pair T={} max_mean={:.4} se={:.4} floor={:.4} ceiling={:.1}",
                p.experiment_id, pt.horizon, pt.max_mean, pt.std_err, pt.floor, pt.ceiling
            );
        }
        if let Some(s) = p.slope {
            println!("{} pair slope={s:.4}", p.experiment_id);
        }
    }
}

enum Outcome {
    Ok,
    ThresholdFailed,
}

fn run(cli: Cli) -> Result<Outcome, HarnessError> {
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::IcCheck(a) => (ExperimentKind::IcCheck, a),
        Command::LowerBound(a) => (ExperimentKind::LowerBound, a),
        Command::Report(r) => return report(r),
    };
    let config = build_config(kind, args)?;
    match run_experiment(&config)? {
        ExperimentOutput::Sweep(summary) => {
            print_sweep(&summary);
            Ok(Outcome::Ok)
        }
        ExperimentOutput::Ic(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.passed {
                Outcome::Ok
            } else {
                Outcome::ThresholdFailed
            })
        }
    }
}

fn report(args: ReportArgs) -> Result<Outcome, HarnessError> {
    let mut rows = Vec::new();
    for path in &args.csv {
        rows.extend(read_csv(path)?);
    }
    let summary = summarize_rows(&rows)?;
    match &args.output {
        Some(path) => write_json(path, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    if !args.assert {
        return Ok(Outcome::Ok);
    }
    let assertions = ReportAssertions {
        slope_range: args.slope_min.zip(args.slope_max),
        max_regret_per_round: args.max_regret_per_round,
        lower_bound_floor: args.lower_bound_floor,
        upper_ceiling: args.upper_ceiling,
    };
    let failures = check_assertions(&summary, &assertions);
    for f in &failures {
        eprintln!("FAIL {f}");
    }
    Ok(if failures.is_empty() {
        Outcome::Ok
    } else {
        Outcome::ThresholdFailed
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdFailed) => ExitCode::from(3),
        Err(
            e @ (HarnessError::Config { .. }
            | HarnessError::Sim(ppc_auction::Error::InvalidEnv(_))
            | HarnessError::Sim(ppc_auction::Error::InvalidPolicy(_))),
        ) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            let e = anyhow::Error::new(e).context("experiment failed");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
