//! Monte Carlo sweeps over bandwidth or edge CPU.
//!
//! Run `r` draws its task sizes from stream `2r` of the experiment seed and
//! its rounding seed from stream `2r + 1`. Neither depends on the grid point
//! or the strategy, so every comparison in a sweep is paired.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{allocate_bandwidth, brute_force, BisectionConfig};
use crate::lift::{build_stage1, Stage1Point};
use crate::model::{sample_task_sizes, Allocation, DecisionVector, Scenario, ScenarioConfig};
use crate::round::{local_probabilities, sample_decisions, select_best, ProbabilityRule, RoundingPolicy};
use crate::sdp::{self, SdpTolerances};

pub const CSV_HEADER: [&str; 7] = [
    "sweep_param",
    "sweep_value",
    "strategy",
    "mean_worst_delay_s",
    "std_error_s",
    "runs",
    "failures",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LocalOnly,
    StandaloneEdge,
    SdrNoRis,
    SdrWithRis,
    OracleNoRis,
    OracleWithRis,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::LocalOnly,
        Strategy::StandaloneEdge,
        Strategy::SdrNoRis,
        Strategy::SdrWithRis,
        Strategy::OracleNoRis,
        Strategy::OracleWithRis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LocalOnly => "local_only",
            Strategy::StandaloneEdge => "standalone_edge",
            Strategy::SdrNoRis => "sdr_no_ris",
            Strategy::SdrWithRis => "sdr_with_ris",
            Strategy::OracleNoRis => "oracle_no_ris",
            Strategy::OracleWithRis => "oracle_with_ris",
        }
    }

    /// Required RIS state of the scenario, if any.
    pub fn ris(self) -> Option<bool> {
        match self {
            Strategy::LocalOnly | Strategy::StandaloneEdge => None,
            Strategy::SdrNoRis | Strategy::OracleNoRis => Some(false),
            Strategy::SdrWithRis | Strategy::OracleWithRis => Some(true),
        }
    }

    /// Variant a sweep evaluates this strategy on. The RIS-agnostic
    /// baselines use the RIS-assisted draw.
    fn uses_ris(self) -> bool {
        self.ris().unwrap_or(true)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Numerical settings shared by every solve in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverSettings {
    pub sdp: SdpTolerances,
    pub bisection: BisectionConfig,
}

/// Everything the two-stage relaxation pipeline produced for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SdrOutcome {
    pub decisions: DecisionVector,
    pub allocation: Allocation,
    /// Optimal value of the stage-1 relaxation.
    pub lower_bound: f64,
    pub fractional: Stage1Point,
    pub sample_index: usize,
}

/// Relax, extract, round and allocate.
pub fn sdr_pipeline(
    scenario: &Scenario,
    settings: &SolverSettings,
    rounding: &RoundingPolicy,
) -> Result<SdrOutcome> {
    rounding.validate()?;
    let lift = build_stage1(scenario);
    let solution = sdp::solve(&lift.relaxation(), &settings.sdp)?;
    let fractional = lift.extract(&solution)?;
    let p_local = local_probabilities(&fractional.x, &fractional.y, rounding.probability_rule);
    let samples = sample_decisions(&p_local, rounding);
    let (sample_index, decisions, allocation) = select_best(scenario, &samples, &settings.bisection)?;
    Ok(SdrOutcome {
        decisions,
        allocation,
        lower_bound: solution.objective_value,
        fractional,
        sample_index,
    })
}

/// Worst-case delay of one strategy on one scenario.
pub fn run_trial(
    scenario: &Scenario,
    strategy: Strategy,
    settings: &SolverSettings,
    rounding: &RoundingPolicy,
) -> Result<f64> {
    if let Some(ris) = strategy.ris() {
        if ris != scenario.ris_enabled() {
            return Err(Error::Config(format!(
                "strategy {strategy} needs ris={ris}, scenario has ris={}",
                scenario.ris_enabled()
            )));
        }
    }
    let m = scenario.num_users();
    match strategy {
        Strategy::LocalOnly => Ok((0..m).map(|i| scenario.local_delay(i)).fold(0.0, f64::max)),
        Strategy::StandaloneEdge => {
            Ok(allocate_bandwidth(scenario, &DecisionVector::all_offload(m), &settings.bisection)?.worst_delay)
        }
        Strategy::SdrNoRis | Strategy::SdrWithRis => {
            Ok(sdr_pipeline(scenario, settings, rounding)?.allocation.worst_delay)
        }
        Strategy::OracleNoRis | Strategy::OracleWithRis => {
            Ok(brute_force(scenario, &settings.bisection)?.1.worst_delay)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Total uplink bandwidth in Hz.
    Bandwidth,
    /// Total edge CPU in Hz.
    EdgeCpu,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Bandwidth => "bandwidth",
            SweepParam::EdgeCpu => "edge_cpu",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Bandwidth => (0..9).map(|i| 5e6 + 2.5e6 * i as f64).collect(),
            SweepParam::EdgeCpu => (1..=10).map(|i| 1e9 * i as f64).collect(),
        }
    }

    fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario> {
        match self {
            SweepParam::Bandwidth => scenario.with_bandwidth(value),
            SweepParam::EdgeCpu => scenario.with_edge_cpu(value),
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandwidth" => Ok(SweepParam::Bandwidth),
            "edge_cpu" => Ok(SweepParam::EdgeCpu),
            _ => Err(Error::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// The swept parameter's value in here is ignored.
    pub scenario: ScenarioConfig,
    pub sweep: SweepParam,
    pub grid: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub runs: usize,
    pub seed: u64,
    pub num_samples: usize,
    pub probability_rule: ProbabilityRule,
    pub settings: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            sweep: SweepParam::Bandwidth,
            grid: SweepParam::Bandwidth.default_grid(),
            strategies: Strategy::ALL.to_vec(),
            runs: 1000,
            seed: 0,
            num_samples: 10,
            probability_rule: ProbabilityRule::JointConditional,
            settings: SolverSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.grid.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("grid values must be positive".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid values must be strictly ascending".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        let oracle = self.strategies.iter().any(|s| matches!(s, Strategy::OracleNoRis | Strategy::OracleWithRis));
        if oracle && self.scenario.users > crate::exact::BRUTE_FORCE_LIMIT {
            return Err(Error::TooManyUsers { users: self.scenario.users, limit: crate::exact::BRUTE_FORCE_LIMIT });
        }
        Ok(())
    }

    /// The RIS-assisted and unassisted scenario of run `run`, before the sweep
    /// value is applied, and the run's rounding seed.
    pub fn draw(&self, run: usize) -> Result<(Scenario, Scenario, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * run as u64);
        let sizes = sample_task_sizes(&mut rng, &self.scenario);
        let base = self.scenario.scenario_from_sizes(&sizes)?;
        let with = base.with_shadow_eta(self.scenario.eta_shadow_ris, true)?;
        let without = base.with_shadow_eta(self.scenario.eta_shadow_no_ris, false)?;
        let mut seeder = ChaCha8Rng::seed_from_u64(self.seed);
        seeder.set_stream(2 * run as u64 + 1);
        Ok((with, without, seeder.next_u64()))
    }
}

/// One strategy evaluated on one run at one grid point. `worst_delay` is
/// `None` for a failed solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub run: usize,
    pub strategy: Strategy,
    pub worst_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub strategy: Strategy,
    pub mean_worst_delay: f64,
    pub std_error: f64,
    /// Successful trials.
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub sweep: SweepParam,
    pub grid: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub runs: usize,
    pub rows: Vec<SweepRow>,
    /// Ordered by grid point, then run, then strategy.
    pub trials: Vec<TrialRecord>,
}

impl SweepResult {
    pub fn row(&self, grid_index: usize, strategy: Strategy) -> Option<&SweepRow> {
        let value = *self.grid.get(grid_index)?;
        self.rows.iter().find(|r| r.sweep_value == value && r.strategy == strategy)
    }

    /// Worst delay of one trial; `None` if it failed or was not run.
    pub fn trial(&self, grid_index: usize, run: usize, strategy: Strategy) -> Option<f64> {
        let s = self.strategies.iter().position(|&x| x == strategy)?;
        if grid_index >= self.grid.len() || run >= self.runs {
            return None;
        }
        self.trials[(grid_index * self.runs + run) * self.strategies.len() + s].worst_delay
    }

    /// Mean of `strategy` over grid points, in grid order.
    pub fn means(&self, strategy: Strategy) -> Vec<f64> {
        (0..self.grid.len()).filter_map(|g| self.row(g, strategy)).map(|r| r.mean_worst_delay).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                self.sweep.name().to_string(),
                r.sweep_value.to_string(),
                r.strategy.name().to_string(),
                r.mean_worst_delay.to_string(),
                r.std_error.to_string(),
                r.runs.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-trial values; failed trials have an empty `worst_delay_s`.
    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep_param", "sweep_value", "run", "strategy", "worst_delay_s"])?;
        for t in &self.trials {
            w.write_record([
                self.sweep.name().to_string(),
                self.grid[t.grid_index].to_string(),
                t.run.to_string(),
                t.strategy.name().to_string(),
                t.worst_delay.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let draws = (0..config.runs).map(|r| config.draw(r)).collect::<Result<Vec<_>>>()?;
    let items: Vec<(usize, usize)> =
        (0..config.grid.len()).flat_map(|g| (0..config.runs).map(move |r| (g, r))).collect();

    let trials: Vec<Vec<TrialRecord>> = items
        .par_iter()
        .map(|&(g, r)| {
            let (with, without, rounding_seed) = &draws[r];
            let value = config.grid[g];
            let with = config.sweep.apply(with, value)?;
            let without = config.sweep.apply(without, value)?;
            let rounding = RoundingPolicy {
                num_samples: config.num_samples,
                rng_seed: *rounding_seed,
                probability_rule: config.probability_rule,
            };
            Ok(config
                .strategies
                .iter()
                .map(|&strategy| {
                    let scenario = if strategy.uses_ris() { &with } else { &without };
                    let worst_delay = match run_trial(scenario, strategy, &config.settings, &rounding) {
                        Ok(v) => Some(v),
                        Err(e) => {
                            log::warn!("{} = {value}, run {r}, {strategy}: {e}", config.sweep.name());
                            None
                        }
                    };
                    TrialRecord { grid_index: g, run: r, strategy, worst_delay }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let trials: Vec<TrialRecord> = trials.into_iter().flatten().collect();

    let mut rows = Vec::with_capacity(config.grid.len() * config.strategies.len());
    for (g, &value) in config.grid.iter().enumerate() {
        for &strategy in &config.strategies {
            let values: Vec<f64> = trials
                .iter()
                .filter(|t| t.grid_index == g && t.strategy == strategy)
                .filter_map(|t| t.worst_delay)
                .collect();
            let (mean, se) = mean_and_std_error(&values);
            rows.push(SweepRow {
                sweep_value: value,
                strategy,
                mean_worst_delay: mean,
                std_error: se,
                runs: values.len(),
                failures: config.runs - values.len(),
            });
        }
        log::info!("{} = {value}: done", config.sweep.name());
    }
    Ok(SweepResult {
        sweep: config.sweep,
        grid: config.grid.clone(),
        strategies: config.strategies.clone(),
        runs: config.runs,
        rows,
        trials,
    })
}
