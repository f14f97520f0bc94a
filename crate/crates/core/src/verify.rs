//! Cross-module property checks on freshly sampled instances.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exact::{allocate_bandwidth, brute_force, BRUTE_FORCE_LIMIT};
use crate::harness::{sdr_pipeline, SolverSettings};
use crate::lift::{build_stage1, build_stage2, eval_quadratic, Stage1Lift, Stage2Lift};
use crate::model::{sample_scenario, DecisionVector, Scenario, ScenarioConfig};
use crate::round::RoundingPolicy;
use crate::sdp;

/// Deliberate corruption used to check that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the first per-user stage-1 delay constraint.
    FlipStage1Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub scenario: ScenarioConfig,
    pub instances: usize,
    /// Random points per instance for the scalar-matrix check.
    pub points: usize,
    pub seed: u64,
    pub settings: SolverSettings,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            instances: 20,
            points: 50,
            seed: 0,
            settings: SolverSettings::default(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const REL_TOL: f64 = 1e-12;

fn close(a: f64, e: f64) -> bool {
    (a - e).abs() <= REL_TOL * e.abs().max(1.0)
}

fn stage1_matches(lift: &Stage1Lift, rng: &mut ChaCha8Rng) -> Result<bool> {
    let n = lift.coefficients.len();
    let draw = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect::<Vec<f64>>();
    let (x, y, b) = (draw(rng), draw(rng), draw(rng));
    let t = rng.gen_range(0.0..30.0);
    let r = eval_quadratic(lift, &lift.layout.pack(&x, &y, &b, t))?;
    let mut ok = close(r.objective, t) && close(r.inequalities[0], b.iter().sum::<f64>() - 1.0);
    for (m, k) in lift.coefficients.iter().enumerate() {
        ok &= close(r.equalities[m], x[m] * (1.0 - x[m]));
        ok &= close(r.equalities[n + m], y[m] * (1.0 - y[m]));
        ok &= close(r.equalities[2 * n + m], x[m] + y[m] - 1.0);
        let delay = k.k_local * x[m] * b[m] + k.k_edge * y[m] * b[m] + k.k_upload * y[m] - b[m] * t;
        ok &= close(r.inequalities[1 + m], delay);
    }
    Ok(ok)
}

fn stage2_matches(lift: &Stage2Lift, rng: &mut ChaCha8Rng) -> Result<bool> {
    let n = lift.coefficients.len();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let theta = rng.gen_range(0.0..30.0);
    let s: DVector<f64> = lift.layout.pack(&b, theta);
    let r = eval_quadratic(lift, &s)?;
    let used: f64 = (0..n).map(|m| lift.decisions.y(m) * b[m]).sum();
    let mut ok = close(r.objective, theta) && close(r.inequalities[0], used - 1.0);
    for (m, &(kf, keta)) in lift.coefficients.iter().enumerate() {
        ok &= close(r.inequalities[1 + m], kf * b[m] + keta - b[m] * theta);
    }
    Ok(ok)
}

fn scenarios(config: &VerifyConfig) -> Result<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.instances).map(|_| sample_scenario(&mut rng, &config.scenario)).collect()
}

fn random_decision(rng: &mut ChaCha8Rng, users: usize) -> DecisionVector {
    DecisionVector::from_offload((0..users).map(|_| rng.gen::<bool>()).collect())
}

/// Runs every property and reports each one; errors only on invalid input.
pub fn run_verify(config: &VerifyConfig) -> Result<Vec<PropertyReport>> {
    config.scenario.validate()?;
    let instances = scenarios(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let users = config.scenario.users;

    let mut mismatched = 0;
    let mut checked = 0;
    for s in &instances {
        let mut l1 = build_stage1(s);
        if config.fault == Some(Fault::FlipStage1Sign) {
            l1.ineq_constraints[1].matrix *= -1.0;
        }
        let l2 = build_stage2(s, &random_decision(&mut rng, users))?;
        for _ in 0..config.points {
            checked += 1;
            if !(stage1_matches(&l1, &mut rng)? && stage2_matches(&l2, &mut rng)?) {
                mismatched += 1;
            }
        }
    }
    let mut reports = vec![PropertyReport {
        name: "scalar-matrix equivalence",
        passed: mismatched == 0,
        detail: format!("{mismatched} of {checked} random points mismatched"),
    }];

    let mut worst = 0.0f64;
    let mut failed = 0;
    for s in &instances {
        let d = random_decision(&mut rng, users);
        let theta = allocate_bandwidth(s, &d, &config.settings.bisection)?.worst_delay;
        match sdp::solve(&build_stage2(s, &d)?.relaxation(), &config.settings.sdp) {
            Ok(sol) => worst = worst.max((sol.objective_value - theta).abs() / theta),
            Err(_) => failed += 1,
        }
    }
    reports.push(PropertyReport {
        name: "bisection/SDP agreement",
        passed: failed == 0 && worst <= 1e-3,
        detail: format!("max relative difference {worst:.2e}, {failed} failed solves"),
    });

    if users > BRUTE_FORCE_LIMIT {
        reports.push(PropertyReport {
            name: "oracle dominance",
            passed: true,
            detail: format!("skipped: {users} users exceeds the enumeration limit"),
        });
        return Ok(reports);
    }
    let slack = 10.0 * config.settings.bisection.abs_tol;
    let mut violations = 0;
    let mut failed = 0;
    for (i, s) in instances.iter().enumerate() {
        let (_, opt) = brute_force(s, &config.settings.bisection)?;
        let rounding = RoundingPolicy { rng_seed: config.seed.wrapping_add(i as u64), ..Default::default() };
        match sdr_pipeline(s, &config.settings, &rounding) {
            Ok(out) => {
                if out.allocation.worst_delay < opt.worst_delay - slack || out.lower_bound > opt.worst_delay + 1e-6 {
                    violations += 1;
                }
            }
            Err(_) => failed += 1,
        }
    }
    reports.push(PropertyReport {
        name: "oracle dominance",
        passed: violations == 0 && failed == 0,
        detail: format!("{violations} violations, {failed} failed solves over {} instances", instances.len()),
    });
    Ok(reports)
}
