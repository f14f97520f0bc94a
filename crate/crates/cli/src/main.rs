mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ris_offload::exact::{brute_force, BRUTE_FORCE_LIMIT};
use ris_offload::harness::{run_sweep, sdr_pipeline};
use ris_offload::lift::{build_stage1, Lift};
use ris_offload::model::mb_to_bits;
use ris_offload::round::RoundingPolicy;
use ris_offload::verify::{run_verify, Fault};
use ris_offload::Error;

use crate::config::{CliConfig, ConfigError};

#[derive(Debug, Parser)]
#[command(name = "ris-offload", version, about = "Min-max offloading delay with semidefinite relaxation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (report for `solve`, CSV for `sweep`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// `KEY=VALUE`, applied after the config file. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario with the relaxation pipeline and the oracle.
    Solve {
        /// Also write the stage-1 matrices as plain text.
        #[arg(long)]
        dump_lift: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep and write the summary CSV.
    Sweep {
        /// Also write one CSV row per trial.
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Run the cross-module property suite.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::TooManyUsers { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn solve(config: &CliConfig, output: Option<&PathBuf>, dump: Option<&PathBuf>) -> Result<(), Failure> {
    let experiment = config.experiment()?;
    let (with, without, rounding_seed) = experiment.draw(0)?;
    let scenario = if config.task_sizes_mb.is_empty() {
        if config.ris { with } else { without }
    } else {
        if config.task_sizes_mb.len() != config.users {
            return Err(Failure::Config(format!(
                "task_sizes_mb has {} entries for {} users",
                config.task_sizes_mb.len(),
                config.users
            )));
        }
        let bits: Vec<f64> = config.task_sizes_mb.iter().map(|&mb| mb_to_bits(mb)).collect();
        config.scenario().scenario_from_sizes(&bits)?
    };
    if let Some(path) = dump {
        build_stage1(&scenario).write_dump(&mut create(path)?)?;
    }
    let rounding = RoundingPolicy {
        num_samples: experiment.num_samples,
        rng_seed: rounding_seed,
        probability_rule: experiment.probability_rule,
    };

    let mut report = String::new();
    let m = scenario.num_users();
    report += &format!(
        "users {m} ({} good link, {} shadowed), ris {}\n",
        scenario.num_good(),
        m - scenario.num_good(),
        scenario.ris_enabled()
    );
    for (i, u) in scenario.users().iter().enumerate() {
        report += &format!(
            "  user {i}: task {:.4} MB, spectral efficiency {}, local {:.6} s\n",
            u.data_size_bits / 8e6,
            u.spectral_eff,
            scenario.local_delay(i)
        );
    }
    let out = sdr_pipeline(&scenario, &experiment.settings, &rounding)?;
    let offload: Vec<String> = out.decisions.offload_bits().iter().map(|b| b.to_string()).collect();
    report += &format!("sdr offload decisions: [{}]\n", offload.join(", "));
    report += &format!("sdr bandwidth shares: {}\n", fmt_vec(&out.allocation.beta));
    report += &format!("sdr worst delay: {:.9} s\n", out.allocation.worst_delay);
    report += &format!("sdr lower bound: {:.9} s\n", out.lower_bound);
    report += &format!(
        "rank-one ratio: {:.3}{}\n",
        out.fractional.rank1_ratio,
        if out.fractional.loose { " (loose relaxation)" } else { "" }
    );
    report += &format!("fractional offload: {}\n", fmt_vec(&out.fractional.y));
    if m <= BRUTE_FORCE_LIMIT {
        let (d, a) = brute_force(&scenario, &experiment.settings.bisection)?;
        let bits: Vec<String> = d.offload_bits().iter().map(|b| b.to_string()).collect();
        report += &format!("oracle offload decisions: [{}]\n", bits.join(", "));
        report += &format!("oracle worst delay: {:.9} s\n", a.worst_delay);
    } else {
        report += &format!("oracle skipped: more than {BRUTE_FORCE_LIMIT} users\n");
    }
    print!("{report}");
    if let Some(path) = output {
        create(path)?.write_all(report.as_bytes())?;
    }
    Ok(())
}

fn sweep(config: &CliConfig, output: Option<&PathBuf>, raw: Option<&PathBuf>) -> Result<(), Failure> {
    let experiment = config.experiment()?;
    let result = run_sweep(&experiment)?;
    match output {
        Some(path) => result.write_csv(create(path)?)?,
        None => result.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = raw {
        result.write_raw_csv(create(path)?)?;
    }
    let failures: usize = result.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        log::warn!("{failures} trials failed and were excluded from the means");
    }
    Ok(())
}

fn verify(config: &CliConfig, inject_fault: bool) -> Result<bool, Failure> {
    let mut cfg = config.verify()?;
    if inject_fault {
        cfg.fault = Some(Fault::FlipStage1Sign);
    }
    let reports = run_verify(&cfg)?;
    for r in &reports {
        println!("{}: {} ({})", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let mut config = CliConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    println!("# effective configuration");
    print!("{}", config.to_toml());
    println!("# shadowed-user spectral efficiency: {}", config.scenario().shadow_eta(config.ris));
    println!();
    match cli.command {
        Command::Solve { dump_lift } => solve(&config, cli.output.as_ref(), dump_lift.as_ref()).map(|_| true),
        Command::Sweep { raw } => sweep(&config, cli.output.as_ref(), raw.as_ref()).map(|_| true),
        Command::Verify { inject_fault } => verify(&config, inject_fault),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
