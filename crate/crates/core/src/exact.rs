//! Exact solvers: the min-max bandwidth split for a fixed decision, and
//! enumeration of every decision vector.
//!
//! For a fixed decision each user's delay is `k_f + k_eta / beta`. The
//! min-max split equalizes the offloaders at a common level `theta`, where
//! `g(theta) = sum k_eta / (theta - k_f) = 1`. `g` is strictly decreasing
//! above the largest offloader `k_f`, so bisection finds the unique root.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Allocation, DecisionVector, Scenario};

/// Largest user count `brute_force` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionConfig {
    /// Absolute tolerance on `theta` in seconds.
    pub abs_tol: f64,
    pub max_iters: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-9, max_iters: 200 }
    }
}

/// Per-user `(k_f, k_eta)`: the fixed part of the delay and the upload time
/// at full band. `k_eta` is zero for local users.
pub fn delay_coefficients(scenario: &Scenario, decisions: &DecisionVector) -> Vec<(f64, f64)> {
    (0..scenario.num_users())
        .map(|m| {
            let (x, y) = (decisions.x(m), decisions.y(m));
            let kf = x * scenario.local_delay(m) + y * scenario.edge_compute_delay(m);
            let keta = y * scenario.full_band_upload_delay(m);
            (kf, keta)
        })
        .collect()
}

pub fn allocate_bandwidth(
    scenario: &Scenario,
    decisions: &DecisionVector,
    config: &BisectionConfig,
) -> Result<Allocation> {
    let m = scenario.num_users();
    if decisions.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: decisions.len() });
    }
    let coeffs = delay_coefficients(scenario, decisions);
    let offloaders: Vec<(f64, f64)> =
        (0..m).filter(|&i| decisions.offloads(i)).map(|i| coeffs[i]).collect();
    if offloaders.is_empty() {
        let worst = coeffs.iter().map(|c| c.0).fold(0.0, f64::max);
        return Ok(Allocation { beta: vec![0.0; m], worst_delay: worst });
    }

    let g = |theta: f64| offloaders.iter().map(|&(kf, keta)| keta / (theta - kf)).sum::<f64>();
    let pole = offloaders.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mut lo = pole + config.abs_tol;
    let mut hi = pole + offloaders.iter().map(|c| c.1).sum::<f64>();
    let mut iters = 0;
    let theta = if g(lo) <= 1.0 {
        lo
    } else {
        while g(hi) > 1.0 {
            hi = lo + 2.0 * (hi - lo);
            iters += 1;
            if iters > config.max_iters {
                return Err(Error::BisectionNotConverged { iterations: iters, lo, hi });
            }
        }
        while hi - lo > config.abs_tol {
            if iters >= config.max_iters {
                return Err(Error::BisectionNotConverged { iterations: iters, lo, hi });
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            iters += 1;
        }
        hi
    };

    let beta: Vec<f64> = (0..m)
        .map(|i| if decisions.offloads(i) { coeffs[i].1 / (theta - coeffs[i].0) } else { 0.0 })
        .collect();
    let worst_delay = scenario.worst_delay(decisions, &beta)?;
    Ok(Allocation { beta, worst_delay })
}

/// Orders candidates by worst delay, then fewer offloaders, then the
/// offload bit vector lexicographically.
fn candidate_order(a: &(DecisionVector, Allocation), b: &(DecisionVector, Allocation)) -> Ordering {
    a.1.worst_delay
        .total_cmp(&b.1.worst_delay)
        .then_with(|| a.0.num_offloading().cmp(&b.0.num_offloading()))
        .then_with(|| a.0.offload_bits().cmp(&b.0.offload_bits()))
}

/// Global min-max optimum over all `2^M` decision vectors.
pub fn brute_force(
    scenario: &Scenario,
    config: &BisectionConfig,
) -> Result<(DecisionVector, Allocation)> {
    let m = scenario.num_users();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyUsers { users: m, limit: BRUTE_FORCE_LIMIT });
    }
    (0..1u64 << m)
        .into_par_iter()
        .map(|mask| {
            let d = DecisionVector::from_mask(mask, m);
            allocate_bandwidth(scenario, &d, config).map(|a| (d, a))
        })
        .try_reduce_with(|a, b| Ok(if candidate_order(&b, &a) == Ordering::Less { b } else { a }))
        .expect("at least one decision vector")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScenarioConfig, UserParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scenario whose users have prescribed `(k_f if offloading, k_eta)`.
    /// With `D = 1` bit and `L = 1`: `k_f = 1 / f^e`, `k_eta = 1 / (eta C)`.
    fn with_coefficients(kf_edge: &[f64], keta: &[f64], local: f64) -> Scenario {
        let m = kf_edge.len();
        let share = 1.0 / kf_edge[0];
        assert!(kf_edge.iter().all(|&k| k == kf_edge[0]));
        let users = keta
            .iter()
            .map(|&k| UserParams {
                data_size_bits: 1.0,
                local_cpu: 1.0 / local,
                edge_cpu_share: share,
                spectral_eff: 1.0 / k,
                good_link: true,
            })
            .collect();
        Scenario::new(users, 1.0, 1.0, true, share * m as f64).unwrap()
    }

    #[test]
    fn symmetric_pair_closed_form() {
        let s = with_coefficients(&[1.0, 1.0], &[0.5, 0.5], 10.0);
        let a = allocate_bandwidth(&s, &DecisionVector::all_offload(2), &BisectionConfig::default())
            .unwrap();
        assert!((a.worst_delay - 2.0).abs() < 1e-8);
        assert!((a.beta[0] - 0.5).abs() < 1e-8);
        assert!((a.beta[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn single_offloader_gets_the_whole_band() {
        let s = with_coefficients(&[1.0, 1.0], &[0.7, 0.3], 0.2);
        let d = DecisionVector::from_offload(vec![true, false]);
        let a = allocate_bandwidth(&s, &d, &BisectionConfig::default()).unwrap();
        assert!((a.beta[0] - 1.0).abs() < 1e-8);
        assert_eq!(a.beta[1], 0.0);
        assert!((a.worst_delay - 1.7).abs() < 1e-8);
    }

    #[test]
    fn all_local_needs_no_bandwidth() {
        let cfg = ScenarioConfig::default();
        let s = crate::model::sample_scenario(&mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let a = allocate_bandwidth(&s, &DecisionVector::all_local(8), &BisectionConfig::default())
            .unwrap();
        assert!(a.beta.iter().all(|&b| b == 0.0));
        let expected = (0..8).map(|m| s.local_delay(m)).fold(0.0, f64::max);
        assert_eq!(a.worst_delay, expected);
    }

    fn one_user(local_cpu: f64) -> Scenario {
        let cfg = ScenarioConfig {
            users: 1,
            good_users: 1,
            local_cpu_hz: local_cpu,
            edge_total_cpu_hz: 6.25e8,
            ..Default::default()
        };
        cfg.scenario_from_sizes(&[4e6]).unwrap()
    }

    #[test]
    fn brute_force_single_user_uses_full_band() {
        let s = one_user(5e8);
        let (d, a) = brute_force(&s, &BisectionConfig::default()).unwrap();
        // Local takes 1.9 s; offloading with the whole band takes 1.596 s.
        let offload = 4e6 / (3.5 * 1.5e7) + 1.52;
        assert!(offload < 1.9);
        assert!(d.offloads(0));
        assert!((a.worst_delay - offload).abs() < 1e-8);
    }

    #[test]
    fn brute_force_single_user_local_when_uplink_is_slow() {
        // Shadowed-like uplink: eta = 0.5 gives an offload delay of 2.053 s > 1.9 s.
        let cfg = ScenarioConfig {
            users: 1,
            good_users: 1,
            eta_good: 0.5,
            edge_total_cpu_hz: 6.25e8,
            ..Default::default()
        };
        let s = cfg.scenario_from_sizes(&[4e6]).unwrap();
        let (d, a) = brute_force(&s, &BisectionConfig::default()).unwrap();
        assert!(!d.offloads(0));
        assert!((a.worst_delay - 1.9).abs() < 1e-12);
    }

    #[test]
    fn brute_force_offloads_when_local_cpu_is_tiny() {
        let (d, _) = brute_force(&one_user(1e3), &BisectionConfig::default()).unwrap();
        assert!(d.offloads(0));
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let cfg = ScenarioConfig { users: 21, good_users: 18, ..Default::default() };
        let s = cfg.scenario_from_sizes(&[1e6; 21]).unwrap();
        assert!(matches!(
            brute_force(&s, &BisectionConfig::default()),
            Err(Error::TooManyUsers { users: 21, limit: 20 })
        ));
    }

    #[test]
    fn brute_force_tie_break_prefers_fewer_offloaders() {
        // Local and full-band offload delays coincide exactly: 2.0 s either way.
        let users = vec![UserParams {
            data_size_bits: 1.0,
            local_cpu: 0.5,
            edge_cpu_share: 1.0,
            spectral_eff: 1.0,
            good_link: true,
        }];
        let s = Scenario::new(users, 1.0, 1.0, true, 1.0).unwrap();
        let (d, a) = brute_force(&s, &BisectionConfig::default()).unwrap();
        assert!(!d.offloads(0));
        assert_eq!(a.worst_delay, 2.0);
    }

    #[test]
    fn bisection_iteration_limit_is_reported() {
        let s = with_coefficients(&[1.0, 1.0], &[0.5, 0.5], 10.0);
        let cfg = BisectionConfig { abs_tol: 1e-12, max_iters: 3 };
        assert!(matches!(
            allocate_bandwidth(&s, &DecisionVector::all_offload(2), &cfg),
            Err(Error::BisectionNotConverged { .. })
        ));
    }

    #[test]
    fn ris_never_hurts_the_optimum() {
        let cfg = ScenarioConfig::default();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let on = crate::model::sample_scenario(&mut rng, &cfg).unwrap();
            let off = on.with_shadow_eta(cfg.eta_shadow_no_ris, false).unwrap();
            let bc = BisectionConfig::default();
            let (_, a_on) = brute_force(&on, &bc).unwrap();
            let (_, a_off) = brute_force(&off, &bc).unwrap();
            assert!(a_off.worst_delay >= a_on.worst_delay - 1e-8);
        }
    }

    fn arb_instance() -> impl Strategy<Value = (Scenario, u64)> {
        (1usize..=6, any::<u64>(), any::<u64>()).prop_map(|(m, seed, mask)| {
            let cfg = ScenarioConfig {
                users: m,
                good_users: m.div_ceil(2),
                ..Default::default()
            };
            let s = crate::model::sample_scenario(&mut ChaCha8Rng::seed_from_u64(seed), &cfg)
                .unwrap();
            (s, mask & ((1 << m) - 1))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn offloaders_are_equalized((s, mask) in arb_instance()) {
            let bc = BisectionConfig::default();
            let d = DecisionVector::from_mask(mask, s.num_users());
            let a = allocate_bandwidth(&s, &d, &bc).unwrap();
            let coeffs = delay_coefficients(&s, &d);
            let max_local = (0..s.num_users())
                .filter(|&m| !d.offloads(m))
                .map(|m| coeffs[m].0)
                .fold(0.0, f64::max);
            if d.num_offloading() > 0 {
                let theta = (0..s.num_users())
                    .filter(|&m| d.offloads(m))
                    .map(|m| s.offload_delay(m, a.beta[m]).unwrap())
                    .fold(0.0, f64::max);
                for m in (0..s.num_users()).filter(|&m| d.offloads(m)) {
                    let delay = s.offload_delay(m, a.beta[m]).unwrap();
                    prop_assert!((delay - theta).abs() <= 10.0 * bc.abs_tol);
                }
                let used: f64 = a.beta.iter().sum();
                prop_assert!(used <= 1.0 + 1e-12);
                if theta > max_local {
                    prop_assert!(used >= 1.0 - 1e-6, "used {used}");
                }
            }
            let recomputed = s.worst_delay(&d, &a.beta).unwrap();
            prop_assert_eq!(recomputed, a.worst_delay);
        }

        #[test]
        fn optimum_improves_with_resources((s, _) in arb_instance(), bump in 1.05f64..3.0) {
            let bc = BisectionConfig::default();
            let base = brute_force(&s, &bc).unwrap().1.worst_delay;
            let more_c = brute_force(&s.with_bandwidth(s.total_bandwidth() * bump).unwrap(), &bc)
                .unwrap().1.worst_delay;
            let more_f = brute_force(&s.with_edge_cpu(s.edge_total_cpu() * bump).unwrap(), &bc)
                .unwrap().1.worst_delay;
            let eta = s.users().last().unwrap().spectral_eff * bump;
            let more_eta = if s.num_good() < s.num_users() {
                brute_force(&s.with_shadow_eta(eta, true).unwrap(), &bc).unwrap().1.worst_delay
            } else {
                base
            };
            let slack = 10.0 * bc.abs_tol;
            prop_assert!(more_c <= base + slack);
            prop_assert!(more_f <= base + slack);
            prop_assert!(more_eta <= base + slack);
        }

        #[test]
        fn brute_force_beats_every_decision((s, mask) in arb_instance()) {
            let bc = BisectionConfig::default();
            let best = brute_force(&s, &bc).unwrap().1.worst_delay;
            let d = DecisionVector::from_mask(mask, s.num_users());
            prop_assert!(allocate_bandwidth(&s, &d, &bc).unwrap().worst_delay >= best);
        }
    }
}
