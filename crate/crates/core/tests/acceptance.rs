//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_offload::exact::{allocate_bandwidth, brute_force, BisectionConfig};
use ris_offload::harness::{
    run_sweep, sdr_pipeline, ExperimentConfig, SolverSettings, Strategy, SweepParam, SweepResult,
};
use ris_offload::lift::{build_stage1, build_stage2, eval_quadratic};
use ris_offload::model::{sample_scenario, DecisionVector, ScenarioConfig};
use ris_offload::round::{posterior_probabilities, sample_decisions, ProbabilityRule, RoundingPolicy};
use ris_offload::sdp;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn bandwidth_sweep() -> SweepResult {
    run_sweep(&ExperimentConfig { runs: 500, seed: 2024, ..Default::default() }).expect("bandwidth sweep")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn trend(sweep: &SweepResult) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for s in [Strategy::SdrWithRis, Strategy::SdrNoRis, Strategy::StandaloneEdge] {
        let means = sweep.means(s);
        let ok = means.len() == sweep.grid.len() && strictly_decreasing(&means);
        pass &= ok;
        detail.push(format!("{s} {:.4}->{:.4}{}", means[0], means[means.len() - 1], if ok { "" } else { " NOT decreasing" }));
    }
    let first = sweep.row(0, Strategy::LocalOnly).unwrap();
    let drift = (0..sweep.grid.len())
        .map(|g| (sweep.row(g, Strategy::LocalOnly).unwrap().mean_worst_delay - first.mean_worst_delay).abs())
        .fold(0.0, f64::max);
    let flat = drift <= first.std_error;
    pass &= flat;
    detail.push(format!("local_only drift {drift:.2e} (se {:.2e})", first.std_error));
    let failures: usize = sweep.rows.iter().map(|r| r.failures).sum();
    detail.push(format!("{failures} failed solves"));
    outcome(pass, detail.join("; "))
}

fn ris_ordering(sweep: &SweepResult) -> Outcome {
    let mut pass = true;
    let mut worst_mean = f64::NEG_INFINITY;
    for g in 0..sweep.grid.len() {
        let diff = sweep.row(g, Strategy::SdrWithRis).unwrap().mean_worst_delay
            - sweep.row(g, Strategy::SdrNoRis).unwrap().mean_worst_delay;
        worst_mean = worst_mean.max(diff);
        pass &= diff <= 0.0;
    }
    let mut pairs = 0;
    let mut worst_pair = f64::NEG_INFINITY;
    for g in 0..sweep.grid.len() {
        for r in 0..sweep.runs {
            let (w, n) = (sweep.trial(g, r, Strategy::OracleWithRis), sweep.trial(g, r, Strategy::OracleNoRis));
            let (Some(w), Some(n)) = (w, n) else {
                pass = false;
                continue;
            };
            pairs += 1;
            worst_pair = worst_pair.max(w - n);
            pass &= w <= n + 1e-8;
        }
    }
    outcome(
        pass,
        format!(
            "max mean(sdr_with_ris - sdr_no_ris) {worst_mean:.4} s; {pairs} oracle pairs, max(with - without) {worst_pair:.2e} s"
        ),
    )
}

fn edge_cpu_convergence() -> Outcome {
    let cfg = ExperimentConfig {
        sweep: SweepParam::EdgeCpu,
        grid: SweepParam::EdgeCpu.default_grid(),
        strategies: vec![Strategy::StandaloneEdge, Strategy::SdrWithRis],
        runs: 500,
        seed: 77,
        ..Default::default()
    };
    let sweep = run_sweep(&cfg).expect("edge-cpu sweep");
    let top = sweep.grid.len() - 1;
    let edge = sweep.row(top, Strategy::StandaloneEdge).unwrap().mean_worst_delay;
    let sdr = sweep.row(top, Strategy::SdrWithRis).unwrap().mean_worst_delay;
    let gap = (edge - sdr).abs() / sdr;
    let bottom = {
        let e = sweep.row(0, Strategy::StandaloneEdge).unwrap().mean_worst_delay;
        let s = sweep.row(0, Strategy::SdrWithRis).unwrap().mean_worst_delay;
        (e - s).abs() / s
    };
    outcome(gap <= 0.05, format!("relative gap {:.2}% at 10 GHz ({:.1}% at 1 GHz)", 100.0 * gap, 100.0 * bottom))
}

fn sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = SolverSettings::default();
    let mut ratios = Vec::new();
    let mut violations = 0;
    let mut failures = 0;
    for i in 0..200u64 {
        let users = rng.gen_range(2..=6);
        let good_users = rng.gen_range(1..=users);
        let cfg = ScenarioConfig { users, good_users, ..Default::default() };
        let s = sample_scenario(&mut rng, &cfg).unwrap();
        let (_, opt) = brute_force(&s, &settings.bisection).unwrap();
        let rounding = RoundingPolicy { rng_seed: i, ..Default::default() };
        match sdr_pipeline(&s, &settings, &rounding) {
            Ok(out) => {
                let rounded = out.allocation.worst_delay;
                if out.lower_bound > opt.worst_delay + 1e-6 || opt.worst_delay > rounded + 1e-6 {
                    violations += 1;
                }
                ratios.push(rounded / opt.worst_delay);
            }
            Err(_) => failures += 1,
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.is_empty() { f64::NAN } else { ratios[ratios.len() / 2] };
    let max = ratios.last().copied().unwrap_or(f64::NAN);
    outcome(
        violations == 0 && failures == 0 && median <= 1.05,
        format!("{violations} ordering violations, {failures} failed solves; rounded/oracle median {median:.4}, max {max:.4}"),
    )
}

fn stage2_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ScenarioConfig::default();
    let bis = BisectionConfig::default();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..100 {
        let s = sample_scenario(&mut rng, &cfg).unwrap();
        let d = DecisionVector::from_mask(rng.gen_range(0..256), 8);
        let theta = allocate_bandwidth(&s, &d, &bis).unwrap().worst_delay;
        match sdp::solve(&build_stage2(&s, &d).unwrap().relaxation(), &Default::default()) {
            Ok(sol) => worst = worst.max((sol.objective_value - theta).abs() / theta),
            Err(_) => failures += 1,
        }
    }
    outcome(worst <= 1e-3 && failures == 0, format!("max relative difference {worst:.2e}, {failures} failed solves"))
}

fn close(a: f64, e: f64) -> bool {
    (a - e).abs() <= 1e-12 * e.abs().max(1.0)
}

fn goldens() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ScenarioConfig::default();
    let s = sample_scenario(&mut rng, &cfg).unwrap();
    let l1 = build_stage1(&s);
    let mut bad = 0;
    for _ in 0..1000 {
        let d = DecisionVector::from_mask(rng.gen_range(0..256), 8);
        let l2 = build_stage2(&s, &d).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = rng.gen_range(0.0..30.0);
        let r1 = eval_quadratic(&l1, &l1.layout.pack(&x, &y, &b, t)).unwrap();
        let mut ok = close(r1.objective, t) && close(r1.inequalities[0], b.iter().sum::<f64>() - 1.0);
        for m in 0..8 {
            let k = l1.coefficients[m];
            ok &= close(r1.equalities[m], x[m] - x[m] * x[m]);
            ok &= close(r1.equalities[8 + m], y[m] - y[m] * y[m]);
            ok &= close(r1.equalities[16 + m], x[m] + y[m] - 1.0);
            ok &= close(
                r1.inequalities[1 + m],
                k.k_local * x[m] * b[m] + k.k_edge * y[m] * b[m] + k.k_upload * y[m] - b[m] * t,
            );
        }
        let theta = rng.gen_range(0.0..30.0);
        let sv: DVector<f64> = l2.layout.pack(&b, theta);
        let r2 = eval_quadratic(&l2, &sv).unwrap();
        ok &= close(r2.objective, theta);
        ok &= close(r2.inequalities[0], (0..8).map(|m| d.y(m) * b[m]).sum::<f64>() - 1.0);
        for (m, &(kf, keta)) in l2.coefficients.iter().enumerate() {
            ok &= close(r2.inequalities[1 + m], kf * b[m] + keta - b[m] * theta);
        }
        if !ok {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 1000 points mismatched in either stage"))
}

fn randomization() -> Outcome {
    let mut worst_sum = 0.0f64;
    for i in 0..100 {
        for j in 0..100 {
            let (pl, pe) = (i as f64 / 99.0, j as f64 / 99.0);
            let (a, b) = posterior_probabilities(pl, pe, ProbabilityRule::JointConditional);
            worst_sum = worst_sum.max((a + b - 1.0).abs());
        }
    }
    let mut worst_freq = 0.0f64;
    for (k, (pl, pe)) in [(0.7, 0.3), (0.5, 0.5), (0.2, 0.9), (0.95, 0.4)].into_iter().enumerate() {
        let p = posterior_probabilities(pl, pe, ProbabilityRule::JointConditional).0;
        let policy = RoundingPolicy { num_samples: 10_000, rng_seed: 100 + k as u64, ..Default::default() };
        let local = sample_decisions(&[p], &policy).iter().filter(|d| !d.offloads(0)).count();
        worst_freq = worst_freq.max((local as f64 / 1e4 - p).abs());
    }
    outcome(
        worst_sum <= 1e-12 && worst_freq <= 0.02,
        format!("max |P_l + P_e - 1| {worst_sum:.1e}; max frequency error {worst_freq:.4}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let started = Instant::now();
    let sweep = bandwidth_sweep();
    let criteria: Vec<Criterion<'_>> = vec![
        ("1 bandwidth trend", Box::new(|| trend(&sweep))),
        ("2 RIS ordering", Box::new(|| ris_ordering(&sweep))),
        ("3 edge-CPU convergence", Box::new(edge_cpu_convergence)),
        ("4 relaxation sandwich", Box::new(sandwich)),
        ("5 stage-2 agreement", Box::new(stage2_agreement)),
        ("6 matrix goldens", Box::new(goldens)),
        ("7 randomization", Box::new(randomization)),
    ];
    let mut all = true;
    for (name, check) in criteria {
        let o = check();
        all &= o.pass;
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance finished in {:.1} s", started.elapsed().as_secs_f64());
    if all { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
