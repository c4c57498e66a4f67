//! `aoi`: exact ages, best-response searches, equilibrium audits, and Monte
//! Carlo bound checks for update-age scheduling against a jamming adversary.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 assertion or audit
//! failure, 3 resource cap exceeded. All numeric file output is lossless
//! (JSON uses shortest round-trip floats, CSV prints 17 significant digits),
//! and every subcommand is deterministic given its input files, `--seed`,
//! and flags, independent of `--threads`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use aoi_core::adversary::{
    brute_force_best_adversary, cbs_scan_best_adversary, make_cbs, Placement,
    DEFAULT_BRUTE_FORCE_CAP,
};
use aoi_core::age::exact_age;
use aoi_core::equilibrium::{
    best_response_dynamics, stackelberg_point, verify_nash_diversity, DynamicsOutcome,
    AUDIT_TOL,
};
use aoi_core::policy::{
    numeric_best_policy, optimal_policy_general_k, optimal_policy_vs_cbs,
};
use aoi_core::sim::{
    check_alpha_sq_optimality, check_diversity_bound, check_lower_bounds,
    check_upper_bound_no_diversity, simulate_with_rep_stats, BoundReport,
};
use aoi_core::{BlockEntry, BlockingMatrix, Error as CoreError, SchedulingPolicy, SystemConfig, Variant};

#[derive(Parser)]
#[command(
    name = "aoi",
    version,
    about = "Update-age scheduling against a jamming adversary: exact analysis, strategy search, equilibria, simulation",
    term_width = 100
)]
struct Cli {
    /// Worker thread cap (default: all cores). Results never depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Directory for result files (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Exact expected ages for a policy against a blocking matrix.
    ///
    /// Writes age.csv (slot,user,expected_age) and summary.json.
    ExactAge {
        /// Game configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Scheduling policy JSON.
        #[arg(long)]
        policy: PathBuf,
        /// Blocking matrix JSON (default: no jamming).
        #[arg(long)]
        blocking: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Search the adversary's best response to a policy.
    ///
    /// Writes blocking.json (the maximizer) and summary.json.
    Adversary {
        /// Game configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Scheduling policy JSON.
        #[arg(long)]
        policy: PathBuf,
        /// brute: exhaustive search (small instances); cbs-scan: centered
        /// full-budget run per target (any horizon).
        #[arg(long, value_enum)]
        mode: AdversaryMode,
        /// Evaluation cap for brute mode (default 100000000).
        #[arg(long)]
        cap: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Station policies: closed form, numeric, or both side by side.
    ///
    /// Writes policy.json and summary.json.
    Policy {
        /// Game configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// closed-form: optimal pmf against a centered run on --blocked-user;
        /// numeric: simplex descent on the exact objective (also reports the
        /// closed form when --blocked-user identifies one).
        #[arg(long, value_enum)]
        mode: PolicyMode,
        /// Jammed user (1-based) for the closed form and the default run.
        #[arg(long)]
        blocked_user: Option<usize>,
        /// Blocking matrix JSON for numeric mode (default: centered
        /// full-budget run on --blocked-user, or no jamming).
        #[arg(long)]
        blocking: Option<PathBuf>,
        /// Convergence tolerance on successive objective change.
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Equilibrium analysis.
    ///
    /// Writes equilibrium.json with the strategy profile, value, and
    /// evidence (deviation audit or best-response trace).
    Equilibrium {
        /// Game configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// nash: cycle detection (no diversity) or deviation audit
        /// (diversity); stackelberg: uniform leader with deviation audit;
        /// dynamics: best-response trace.
        #[arg(long, value_enum)]
        mode: EquilibriumMode,
        /// Round cap for nash/dynamics cycle detection.
        #[arg(long, default_value_t = 20)]
        max_rounds: usize,
        /// Deviations audited per side.
        #[arg(long, default_value_t = 200)]
        deviations: usize,
        /// Seed for the sampled deviations.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Monte Carlo simulation of the slot process.
    ///
    /// Writes sim.csv (rep,user,mean_age) and summary.json.
    Simulate {
        /// Game configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Scheduling policy JSON.
        #[arg(long)]
        policy: PathBuf,
        /// Blocking matrix JSON (default: no jamming).
        #[arg(long)]
        blocking: Option<PathBuf>,
        /// Base seed; replication r draws from substream (seed, r).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Independent replications.
        #[arg(long)]
        reps: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run the documented bound grid and emit a pass/fail matrix.
    ///
    /// Writes bounds.json; exits 2 if any bound fails.
    Bounds {
        /// Base seed for the simulated checks.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AdversaryMode {
    Brute,
    CbsScan,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyMode {
    ClosedForm,
    Numeric,
}

#[derive(Clone, Copy, ValueEnum)]
enum EquilibriumMode {
    Nash,
    Stackelberg,
    Dynamics,
}

enum CliError {
    Core(CoreError),
    Io(PathBuf, std::io::Error),
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(String),
    /// An assertion or audit failed; results were still written.
    CheckFailed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{}", e),
            CliError::Io(path, e) => write!(f, "{}: {}", path.display(), e),
            CliError::Json {
                path,
                line,
                column,
                message,
            } => write!(f, "{}:{}:{}: {}", path.display(), line, column, message),
            CliError::Invalid(msg) => write!(f, "{}", msg),
            CliError::CheckFailed(msg) => write!(f, "{}", msg),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(CoreError::SearchSpaceTooLarge { .. }) => 3,
            CliError::Core(CoreError::AuditFailure { .. }) => 2,
            CliError::CheckFailed(_) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn load_config(path: &Path) -> CliResult<SystemConfig> {
    let config: SystemConfig = load_json(path)?;
    let outcome = config.validate();
    if !outcome.is_ok() {
        return Err(CliError::Invalid(format!(
            "{}: {}",
            path.display(),
            outcome.violations().join("; ")
        )));
    }
    Ok(config)
}

fn load_policy(path: &Path, config: &SystemConfig) -> CliResult<SchedulingPolicy> {
    let policy: SchedulingPolicy = load_json(path)?;
    let outcome = policy.validate(config);
    if !outcome.is_ok() {
        return Err(CliError::Invalid(format!(
            "{}: {}",
            path.display(),
            outcome.violations().join("; ")
        )));
    }
    Ok(policy)
}

fn load_blocking(path: Option<&Path>, config: &SystemConfig) -> CliResult<BlockingMatrix> {
    let sigma = match path {
        None => BlockingMatrix::empty(config.horizon),
        Some(p) => {
            let entries: Vec<BlockEntry> = load_json(p)?;
            BlockingMatrix::from_entries(&entries, config.horizon)?
        }
    };
    let outcome = sigma.validate(config);
    if !outcome.is_ok() {
        return Err(CliError::Invalid(format!(
            "blocking matrix: {}",
            outcome.violations().join("; ")
        )));
    }
    Ok(sigma)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

fn blocked_user_arg(blocked_user: Option<usize>, config: &SystemConfig) -> CliResult<usize> {
    let user = blocked_user
        .ok_or_else(|| CliError::Invalid("--blocked-user is required for this mode".into()))?;
    if user == 0 || user > config.n_users {
        return Err(CliError::Invalid(format!(
            "--blocked-user {} outside 1..={}",
            user, config.n_users
        )));
    }
    Ok(user - 1)
}

fn run_exact_age(
    config: &Path,
    policy: &Path,
    blocking: Option<&Path>,
    out: &Path,
) -> CliResult<u8> {
    let config = load_config(config)?;
    let policy = load_policy(policy, &config)?;
    let sigma = load_blocking(blocking, &config)?;
    let report = exact_age(&config, &policy, &sigma)?;
    ensure_dir(out)?;
    let csv_path = out.join("age.csv");
    let mut buf = Vec::new();
    report
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(csv_path.clone(), e))?;
    fs::write(&csv_path, buf).map_err(|e| CliError::Io(csv_path, e))?;
    write_json(out, "summary.json", &report.summary_json())?;
    println!("system_average {:.16e}", report.system_average);
    Ok(0)
}

fn run_adversary(
    config: &Path,
    policy: &Path,
    mode: AdversaryMode,
    cap: Option<u64>,
    out: &Path,
) -> CliResult<u8> {
    let config = load_config(config)?;
    let policy = load_policy(policy, &config)?;
    ensure_dir(out)?;
    match mode {
        AdversaryMode::Brute => {
            let outcome = brute_force_best_adversary(&config, &policy, cap)?;
            write_json(
                out,
                "blocking.json",
                &serde_json::to_value(outcome.best.to_entries()).unwrap(),
            )?;
            write_json(
                out,
                "summary.json",
                &json!({
                    "mode": "brute",
                    "value": outcome.value,
                    "evaluated": outcome.evaluated,
                    "maximizers": outcome.argmax.len(),
                    "maximizers_truncated": outcome.truncated,
                    "cap": cap.unwrap_or(DEFAULT_BRUTE_FORCE_CAP),
                }),
            )?;
            println!("value {:.16e} over {} matrices", outcome.value, outcome.evaluated);
        }
        AdversaryMode::CbsScan => {
            let (cbs, value) = cbs_scan_best_adversary(&config, &policy)?;
            let sigma = cbs.to_blocking(config.horizon)?;
            write_json(
                out,
                "blocking.json",
                &serde_json::to_value(sigma.to_entries()).unwrap(),
            )?;
            write_json(
                out,
                "summary.json",
                &json!({ "mode": "cbs-scan", "value": value, "cbs": cbs }),
            )?;
            println!("value {:.16e}", value);
        }
    }
    Ok(0)
}

fn closed_form_policy(config: &SystemConfig, blocked_user: usize) -> CliResult<SchedulingPolicy> {
    match config.variant {
        Variant::NoDiversity => {
            Ok(optimal_policy_vs_cbs(config.n_users, config.alpha, blocked_user)?)
        }
        Variant::GeneralK { k, .. } => Ok(optimal_policy_general_k(
            config.n_users,
            k,
            config.alpha,
            blocked_user,
        )?),
        Variant::Diversity { .. } => Err(CliError::Invalid(
            "closed-form policies cover the user-targeted variants; use --mode numeric".into(),
        )),
    }
}

fn run_policy(
    config: &Path,
    mode: PolicyMode,
    blocked_user: Option<usize>,
    blocking: Option<&Path>,
    tolerance: Option<f64>,
    out: &Path,
) -> CliResult<u8> {
    let config = load_config(config)?;
    ensure_dir(out)?;
    match mode {
        PolicyMode::ClosedForm => {
            let user = blocked_user_arg(blocked_user, &config)?;
            let policy = closed_form_policy(&config, user)?;
            write_json(out, "policy.json", &serde_json::to_value(&policy).unwrap())?;
            write_json(
                out,
                "summary.json",
                &json!({ "mode": "closed-form", "blocked_user": user + 1, "policy": policy }),
            )?;
            Ok(0)
        }
        PolicyMode::Numeric => {
            let sigma = match (blocking, blocked_user) {
                (Some(path), _) => load_blocking(Some(path), &config)?,
                (None, Some(_)) => {
                    let user = blocked_user_arg(blocked_user, &config)?;
                    make_cbs(&config, user, config.budget.min(config.horizon), Placement::Centered)?
                }
                (None, None) => BlockingMatrix::empty(config.horizon),
            };
            let numeric = numeric_best_policy(&config, &sigma, tolerance)?;
            // Side-by-side closed form when a jammed user identifies one.
            let closed = match blocked_user {
                Some(_) if !matches!(config.variant, Variant::Diversity { .. }) => {
                    let user = blocked_user_arg(blocked_user, &config)?;
                    Some(closed_form_policy(&config, user)?)
                }
                _ => None,
            };
            let max_gap = closed.as_ref().map(|c| {
                c.user_pmf
                    .iter()
                    .zip(&numeric.user_pmf)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            });
            write_json(out, "policy.json", &serde_json::to_value(&numeric).unwrap())?;
            write_json(
                out,
                "summary.json",
                &json!({
                    "mode": "numeric",
                    "numeric": numeric,
                    "closed_form": closed,
                    "max_abs_gap": max_gap,
                }),
            )?;
            if let (Some(c), Some(gap)) = (&closed, max_gap) {
                println!("numeric {:?}", numeric.user_pmf);
                println!("closed  {:?} (max gap {:.3e})", c.user_pmf, gap);
            }
            Ok(0)
        }
    }
}

fn run_equilibrium(
    config: &Path,
    mode: EquilibriumMode,
    max_rounds: usize,
    deviations: usize,
    seed: u64,
    out: &Path,
) -> CliResult<u8> {
    let config = load_config(config)?;
    ensure_dir(out)?;
    match mode {
        EquilibriumMode::Dynamics => {
            let start = SchedulingPolicy::uniform(&config);
            let trace = best_response_dynamics(&config, &start, max_rounds)?;
            write_json(out, "equilibrium.json", &serde_json::to_value(&trace).unwrap())?;
            println!("outcome {:?} after {} rounds", trace.outcome, trace.rounds.len());
            Ok(0)
        }
        EquilibriumMode::Nash => match config.variant {
            Variant::NoDiversity => {
                let start = SchedulingPolicy::uniform(&config);
                let trace = best_response_dynamics(&config, &start, max_rounds)?;
                let kind = match trace.outcome {
                    DynamicsOutcome::Cycle { .. } => "nash_absent",
                    DynamicsOutcome::FixedPoint { .. } => "nash_verified",
                    DynamicsOutcome::MaxRounds => "inconclusive",
                };
                write_json(
                    out,
                    "equilibrium.json",
                    &json!({ "kind": kind, "trace": trace }),
                )?;
                println!("kind {}", kind);
                if kind == "inconclusive" {
                    return Err(CliError::CheckFailed(format!(
                        "no revisit within {} rounds",
                        max_rounds
                    )));
                }
                Ok(0)
            }
            Variant::Diversity { .. } => {
                let result = verify_nash_diversity(&config, deviations, seed)?;
                write_json(out, "equilibrium.json", &serde_json::to_value(&result).unwrap())?;
                println!("kind nash_verified, value {:.16e}", result.value);
                Ok(0)
            }
            Variant::GeneralK { .. } => Err(CliError::Invalid(
                "nash mode covers the no-diversity and diversity variants".into(),
            )),
        },
        EquilibriumMode::Stackelberg => {
            let result = stackelberg_point(&config, deviations, seed)?;
            write_json(out, "equilibrium.json", &serde_json::to_value(&result).unwrap())?;
            let worst = result.worst_improvement();
            println!("value {:.16e}, worst deviation improvement {:.3e}", result.value, worst);
            if worst > AUDIT_TOL {
                return Err(CliError::CheckFailed(format!(
                    "a leader deviation improved the cost by {}",
                    worst
                )));
            }
            Ok(0)
        }
    }
}

fn run_simulate(
    config: &Path,
    policy: &Path,
    blocking: Option<&Path>,
    seed: u64,
    reps: u64,
    out: &Path,
) -> CliResult<u8> {
    let config = load_config(config)?;
    let policy = load_policy(policy, &config)?;
    let sigma = load_blocking(blocking, &config)?;
    let (result, rep_stats) =
        simulate_with_rep_stats(&config, &policy, &sigma, seed, reps, true)?;
    ensure_dir(out)?;
    let csv_path = out.join("sim.csv");
    let mut csv = String::from("rep,user,mean_age\n");
    for (rep, users) in rep_stats.iter().enumerate() {
        for (user, mean) in users.iter().enumerate() {
            csv.push_str(&format!("{},{},{:.16e}\n", rep + 1, user + 1, mean));
        }
    }
    fs::write(&csv_path, csv).map_err(|e| CliError::Io(csv_path, e))?;
    write_json(out, "summary.json", &serde_json::to_value(&result).unwrap())?;
    println!(
        "mean {:.16e} stderr {:.16e} over {} reps",
        result.mean_system_age, result.stderr, result.reps
    );
    Ok(0)
}

fn run_bounds(seed: u64, out: &Path) -> CliResult<u8> {
    let mut reports: Vec<BoundReport> = Vec::new();
    reports.push(check_upper_bound_no_diversity(5, 999, 0.2, seed, 2000)?);
    reports.extend(check_lower_bounds(5, 999, 0.2)?);
    reports.extend(check_lower_bounds(2, 100, 0.2)?);
    reports.push(check_diversity_bound(4, 3, 10_000, 0.9, seed.wrapping_add(1), 200)?);
    reports.push(check_diversity_bound(4, 2, 10_000, 0.9, seed.wrapping_add(2), 200)?);
    reports.push(check_alpha_sq_optimality(4, 400_000, 0.5, seed, 0)?);
    reports.push(check_alpha_sq_optimality(4, 130_000, 0.9, seed, 0)?);
    ensure_dir(out)?;
    let all_pass = reports.iter().all(|r| r.pass);
    write_json(
        out,
        "bounds.json",
        &json!({ "pass": all_pass, "checks": reports }),
    )?;
    for r in &reports {
        println!(
            "{} {}: measured {:.6} vs bound {:.6} (margin {:.3e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.measured,
            r.bound,
            r.margin
        );
    }
    if all_pass {
        Ok(0)
    } else {
        Err(CliError::CheckFailed("at least one bound check failed".into()))
    }
}

fn dispatch(command: Command) -> CliResult<u8> {
    match command {
        Command::ExactAge {
            config,
            policy,
            blocking,
            out,
        } => run_exact_age(&config, &policy, blocking.as_deref(), &out.out),
        Command::Adversary {
            config,
            policy,
            mode,
            cap,
            out,
        } => run_adversary(&config, &policy, mode, cap, &out.out),
        Command::Policy {
            config,
            mode,
            blocked_user,
            blocking,
            tolerance,
            out,
        } => run_policy(
            &config,
            mode,
            blocked_user,
            blocking.as_deref(),
            tolerance,
            &out.out,
        ),
        Command::Equilibrium {
            config,
            mode,
            max_rounds,
            deviations,
            seed,
            out,
        } => run_equilibrium(&config, mode, max_rounds, deviations, seed, &out.out),
        Command::Simulate {
            config,
            policy,
            blocking,
            seed,
            reps,
            out,
        } => run_simulate(&config, &policy, blocking.as_deref(), seed, reps, &out.out),
        Command::Bounds { seed, out } => run_bounds(seed, &out.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: --threads: {}", e);
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
