//! Randomized rounding of fractional offloading decisions.
//!
//! Sample `n` is drawn from its own ChaCha stream of `rng_seed`, so the
//! first `N` samples do not depend on how many more are requested and the
//! result does not depend on evaluation order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{allocate_bandwidth, BisectionConfig};
use crate::model::{Allocation, DecisionVector, Scenario};

/// How fractional `(p_local, p_edge)` pairs become sampling probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityRule {
    /// `p_l / Z` and `p_e / Z`, clamped to `[0, 1]`.
    PaperLiteral,
    /// Conditional on exactly one of the two sites being chosen.
    #[default]
    JointConditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundingPolicy {
    pub num_samples: usize,
    pub rng_seed: u64,
    pub probability_rule: ProbabilityRule,
}

impl Default for RoundingPolicy {
    fn default() -> Self {
        Self { num_samples: 10, rng_seed: 0, probability_rule: ProbabilityRule::JointConditional }
    }
}

impl RoundingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(P_local, P_edge)` for one user. Inputs are expected in `[0, 1]`.
///
/// With `Z = p_l (1 - p_e) + (1 - p_l) p_e`, the degenerate `Z = 0` case falls
/// back to `(p_l, 1 - p_l)` under both rules.
pub fn posterior_probabilities(p_local: f64, p_edge: f64, rule: ProbabilityRule) -> (f64, f64) {
    let z = p_local * (1.0 - p_edge) + (1.0 - p_local) * p_edge;
    if z <= 0.0 {
        return (p_local, 1.0 - p_local);
    }
    match rule {
        ProbabilityRule::JointConditional => {
            let pl = p_local * (1.0 - p_edge) / z;
            (pl, 1.0 - pl)
        }
        ProbabilityRule::PaperLiteral => {
            ((p_local / z).clamp(0.0, 1.0), (p_edge / z).clamp(0.0, 1.0))
        }
    }
}

/// Per-user local probabilities from clamped fractional `x` and `y`.
pub fn local_probabilities(x: &[f64], y: &[f64], rule: ProbabilityRule) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(&pl, &pe)| posterior_probabilities(pl.clamp(0.0, 1.0), pe.clamp(0.0, 1.0), rule).0)
        .collect()
}

/// One decision: user `m` stays local with probability `p_local[m]`.
pub fn sample_decision<R: Rng + ?Sized>(p_local: &[f64], rng: &mut R) -> DecisionVector {
    DecisionVector::from_offload(p_local.iter().map(|&p| rng.gen::<f64>() >= p).collect())
}

/// `policy.num_samples` independent decisions.
pub fn sample_decisions(p_local: &[f64], policy: &RoundingPolicy) -> Vec<DecisionVector> {
    (0..policy.num_samples)
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
            rng.set_stream(n as u64);
            sample_decision(p_local, &mut rng)
        })
        .collect()
}

/// The best sample under exact bandwidth allocation, with its index.
/// Ties keep the lowest index.
pub fn select_best(
    scenario: &Scenario,
    samples: &[DecisionVector],
    config: &BisectionConfig,
) -> Result<(usize, DecisionVector, Allocation)> {
    let mut best: Option<(usize, Allocation)> = None;
    for (i, d) in samples.iter().enumerate() {
        let a = allocate_bandwidth(scenario, d, config)?;
        if best.as_ref().is_none_or(|(_, b)| a.worst_delay < b.worst_delay) {
            best = Some((i, a));
        }
    }
    let (i, a) = best.ok_or_else(|| Error::Config("no samples to select from".into()))?;
    Ok((i, samples[i].clone(), a))
}
