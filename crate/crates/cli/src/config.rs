//! Flat TOML configuration shared by every subcommand.

use std::path::Path;

use ris_offload::exact::BisectionConfig;
use ris_offload::harness::{ExperimentConfig, SolverSettings, Strategy, SweepParam};
use ris_offload::model::ScenarioConfig;
use ris_offload::round::ProbabilityRule;
use ris_offload::sdp::SdpTolerances;
use ris_offload::verify::VerifyConfig;
use serde::{Deserialize, Serialize};

/// Configuration problems; the CLI exits with status 2 on these.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub users: usize,
    pub good_users: usize,
    pub local_cpu_hz: f64,
    pub edge_total_cpu_hz: f64,
    pub cycles_per_byte: f64,
    pub bandwidth_hz: f64,
    pub eta_good: f64,
    pub eta_shadow_no_ris: f64,
    pub eta_shadow_ris: f64,
    pub ris: bool,
    pub task_min_mb: f64,
    pub task_max_mb: f64,
    /// Fixed task sizes for `solve`; sampled from the range when empty.
    pub task_sizes_mb: Vec<f64>,

    pub sweep: String,
    /// Default grid of the sweep parameter when empty.
    pub grid: Vec<f64>,
    pub strategies: Vec<String>,
    pub runs: usize,
    pub seed: u64,
    pub num_samples: usize,
    pub probability_rule: String,

    pub sdp_feas_tol: f64,
    pub sdp_gap_tol: f64,
    pub sdp_psd_tol: f64,
    pub sdp_max_iters: usize,
    pub bisection_abs_tol: f64,
    pub bisection_max_iters: usize,

    pub verify_instances: usize,
    pub verify_points: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        let e = ExperimentConfig::default();
        let v = VerifyConfig::default();
        let tol = SdpTolerances::default();
        let bis = BisectionConfig::default();
        Self {
            users: s.users,
            good_users: s.good_users,
            local_cpu_hz: s.local_cpu_hz,
            edge_total_cpu_hz: s.edge_total_cpu_hz,
            cycles_per_byte: s.cycles_per_byte,
            bandwidth_hz: s.bandwidth_hz,
            eta_good: s.eta_good,
            eta_shadow_no_ris: s.eta_shadow_no_ris,
            eta_shadow_ris: s.eta_shadow_ris,
            ris: s.ris,
            task_min_mb: s.task_min_mb,
            task_max_mb: s.task_max_mb,
            task_sizes_mb: Vec::new(),
            sweep: e.sweep.name().into(),
            grid: Vec::new(),
            strategies: e.strategies.iter().map(|s| s.name().to_string()).collect(),
            runs: e.runs,
            seed: e.seed,
            num_samples: e.num_samples,
            probability_rule: "joint_conditional".into(),
            sdp_feas_tol: tol.feas,
            sdp_gap_tol: tol.gap,
            sdp_psd_tol: tol.psd,
            sdp_max_iters: tol.max_iters,
            bisection_abs_tol: bis.abs_tol,
            bisection_max_iters: bis.max_iters,
            verify_instances: v.instances,
            verify_points: v.points,
        }
    }
}

/// Parses `VALUE` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl CliConfig {
    /// Reads `path` (defaults when `None`), then applies `KEY=VALUE` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| err(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| err(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| err(format!("override `{o}` is not KEY=VALUE")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let config: CliConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| err(e.message().to_string()))?;
        config.scenario().validate().map_err(|e| err(e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            users: self.users,
            good_users: self.good_users,
            local_cpu_hz: self.local_cpu_hz,
            edge_total_cpu_hz: self.edge_total_cpu_hz,
            cycles_per_byte: self.cycles_per_byte,
            bandwidth_hz: self.bandwidth_hz,
            eta_good: self.eta_good,
            eta_shadow_no_ris: self.eta_shadow_no_ris,
            eta_shadow_ris: self.eta_shadow_ris,
            ris: self.ris,
            task_min_mb: self.task_min_mb,
            task_max_mb: self.task_max_mb,
        }
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            sdp: SdpTolerances {
                feas: self.sdp_feas_tol,
                gap: self.sdp_gap_tol,
                psd: self.sdp_psd_tol,
                max_iters: self.sdp_max_iters,
            },
            bisection: BisectionConfig { abs_tol: self.bisection_abs_tol, max_iters: self.bisection_max_iters },
        }
    }

    fn check_settings(&self) -> Result<(), ConfigError> {
        let positive = [
            ("sdp_feas_tol", self.sdp_feas_tol),
            ("sdp_gap_tol", self.sdp_gap_tol),
            ("sdp_psd_tol", self.sdp_psd_tol),
            ("bisection_abs_tol", self.bisection_abs_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(format!("{key} must be positive, got {v}")));
            }
        }
        if self.sdp_max_iters == 0 || self.bisection_max_iters == 0 {
            return Err(err("iteration limits must be at least 1"));
        }
        Ok(())
    }

    pub fn probability_rule(&self) -> Result<ProbabilityRule, ConfigError> {
        match self.probability_rule.as_str() {
            "joint_conditional" => Ok(ProbabilityRule::JointConditional),
            "paper_literal" => Ok(ProbabilityRule::PaperLiteral),
            other => Err(err(format!("probability_rule: unknown rule `{other}`"))),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        self.check_settings()?;
        let sweep: SweepParam = self.sweep.parse().map_err(|e| err(format!("sweep: {e}")))?;
        let strategies = self
            .strategies
            .iter()
            .map(|s| s.parse::<Strategy>().map_err(|e| err(format!("strategies: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let config = ExperimentConfig {
            scenario: self.scenario(),
            sweep,
            grid: if self.grid.is_empty() { sweep.default_grid() } else { self.grid.clone() },
            strategies,
            runs: self.runs,
            seed: self.seed,
            num_samples: self.num_samples,
            probability_rule: self.probability_rule()?,
            settings: self.settings(),
        };
        config.validate().map_err(|e| err(e.to_string()))?;
        Ok(config)
    }

    pub fn verify(&self) -> Result<VerifyConfig, ConfigError> {
        self.check_settings()?;
        if self.verify_instances == 0 || self.verify_points == 0 {
            return Err(err("verify_instances and verify_points must be at least 1"));
        }
        Ok(VerifyConfig {
            scenario: self.scenario(),
            instances: self.verify_instances,
            points: self.verify_points,
            seed: self.seed,
            settings: self.settings(),
            fault: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values_are_typed() {
        assert_eq!(parse_value("false"), toml::Value::Boolean(false));
        assert_eq!(parse_value("2.5e6"), toml::Value::Float(2.5e6));
        assert_eq!(parse_value("[1, 2]"), toml::Value::Array(vec![1.into(), 2.into()]));
        assert_eq!(parse_value("edge_cpu"), toml::Value::String("edge_cpu".into()));
    }

    #[test]
    fn ris_override_selects_shadow_eta() {
        let c = CliConfig::load(None, &["ris=false".into()]).unwrap();
        assert!(!c.ris);
        assert_eq!(c.scenario().shadow_eta(c.ris), 0.1);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = CliConfig::load(None, &["userz=3".into()]).unwrap_err();
        assert!(e.0.contains("userz"), "{e}");
    }

    #[test]
    fn unknown_strategy_is_named() {
        let c = CliConfig::load(None, &["strategies=[\"sdr\"]".into()]).unwrap();
        let e = c.experiment().unwrap_err();
        assert!(e.0.contains("strategies") && e.0.contains("sdr"), "{e}");
    }

    #[test]
    fn echo_round_trips() {
        let c = CliConfig::load(None, &["users=3".into(), "good_users=2".into()]).unwrap();
        let back: CliConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_scenario_is_rejected_on_load() {
        assert!(CliConfig::load(None, &["good_users=0".into()]).is_err());
        assert!(CliConfig::load(None, &["noequals".into()]).is_err());
    }
}
