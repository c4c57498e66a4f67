//! Slot-by-slot stochastic simulation and the bound checks built on it.
//!
//! PRNG contract (pinned; changing it is a breaking change): replication
//! `r` of a run with seed `s` draws from a ChaCha8 stream keyed by four
//! SplitMix64 outputs of the state `s + r * 0x9E3779B97F4A7C15`, so
//! replications form independent counter-derived substreams and results are
//! bit-identical for a given `(inputs, seed, reps)` on every platform and
//! thread count. Per-replication results are folded in replication order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::{centered_start, make_cbs};
use crate::age::exact_system_average;
use crate::config::{
    AgeIndexing, BlockingMatrix, SchedulingPolicy, SystemConfig, Variant,
};
use crate::error::{Error, Result};
use crate::policy::uniform_subcarrier;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Substream generator for one replication; see the module docs.
fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut state = seed.wrapping_add(rep.wrapping_mul(GOLDEN));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix_next(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Aggregated Monte Carlo outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub reps: u64,
    /// Mean over replications of the per-replication system average.
    pub mean_system_age: f64,
    /// Sample standard deviation of the replication means over sqrt(reps).
    pub stderr: f64,
    /// Mean over replications of each user's horizon-average age.
    pub per_user_means: Vec<f64>,
    pub seed: u64,
}

fn categorical(cum: &[f64], u: f64) -> usize {
    // cum holds partial sums of the pmf with cum[0] = first mass; the last
    // bucket absorbs rounding slack.
    match cum.iter().position(|&c| u < c) {
        Some(i) => i,
        None => cum.len() - 1,
    }
}

/// Integer per-user age sums for one replication.
fn run_replication(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
    rng: &mut ChaCha8Rng,
) -> Vec<u64> {
    let n = config.n_users;
    let horizon = config.horizon;
    let mut cum_user = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &p in &policy.user_pmf {
        acc += p;
        cum_user.push(acc);
    }
    let cum_sub: Vec<f64> = policy
        .subcarrier_pmf
        .as_ref()
        .map(|q| {
            let mut acc = 0.0;
            q.iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .unwrap_or_default();
    // Marginal cumulative over the circle of circumference k, for the
    // systematic draw of k users.
    let (k, cum_circle) = match config.variant {
        Variant::GeneralK { k, .. } => {
            let mut c = Vec::with_capacity(n + 1);
            c.push(0.0);
            let mut acc = 0.0;
            for &p in &policy.user_pmf {
                acc += p;
                c.push(acc);
            }
            // Pin the circumference to exactly k (see policy::decompose_marginals).
            c[n] = k as f64;
            for v in c.iter_mut() {
                *v = v.min(k as f64);
            }
            (k, c)
        }
        _ => (1, Vec::new()),
    };

    let mut ages: Vec<u64> = vec![1; n];
    let mut sums: Vec<u64> = vec![0; n];
    let record = |ages: &[u64], sums: &mut [u64]| {
        for (s, &a) in sums.iter_mut().zip(ages) {
            *s += a;
        }
    };
    for t in 0..horizon {
        if config.age_indexing == AgeIndexing::Standard {
            record(&ages, &mut sums);
        }
        match config.variant {
            Variant::NoDiversity => {
                let chosen = categorical(&cum_user, rng.gen::<f64>());
                let delivered = !sigma.is_blocked(t, chosen);
                for (i, age) in ages.iter_mut().enumerate() {
                    *age = if i == chosen && delivered { 1 } else { *age + 1 };
                }
            }
            Variant::Diversity { .. } => {
                let chosen = categorical(&cum_user, rng.gen::<f64>());
                let carrier = categorical(&cum_sub, rng.gen::<f64>());
                let delivered = !sigma.is_blocked(t, carrier);
                for (i, age) in ages.iter_mut().enumerate() {
                    *age = if i == chosen && delivered { 1 } else { *age + 1 };
                }
            }
            Variant::GeneralK { .. } => {
                let offset = rng.gen::<f64>();
                let points_below = |x: f64| -> isize {
                    ((x - offset).ceil() as isize).clamp(0, k as isize)
                };
                for (i, age) in ages.iter_mut().enumerate() {
                    let scheduled = points_below(cum_circle[i + 1]) > points_below(cum_circle[i]);
                    let delivered = scheduled && !sigma.is_blocked(t, i);
                    *age = if delivered { 1 } else { *age + 1 };
                }
            }
        }
        if config.age_indexing == AgeIndexing::Shifted {
            record(&ages, &mut sums);
        }
    }
    sums
}

fn validate_sim_inputs(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
    reps: u64,
) -> Result<()> {
    if config.horizon == 0 {
        return Err(Error::Invalid("horizon must be positive".into()));
    }
    policy.validate(config).into_result()?;
    sigma.validate(config).into_result()?;
    if reps == 0 {
        return Err(Error::Invalid("reps must be at least 1".into()));
    }
    Ok(())
}

/// Runs `reps` independent replications and aggregates them.
pub fn simulate(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
    seed: u64,
    reps: u64,
) -> Result<SimResult> {
    let (result, _) = simulate_with_rep_stats(config, policy, sigma, seed, reps, false)?;
    Ok(result)
}

/// As [`simulate`], optionally returning each replication's per-user mean
/// ages (row per replication) for file output.
pub fn simulate_with_rep_stats(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
    seed: u64,
    reps: u64,
    keep_reps: bool,
) -> Result<(SimResult, Vec<Vec<f64>>)> {
    validate_sim_inputs(config, policy, sigma, reps)?;
    let horizon = config.horizon as f64;
    let n = config.n_users;
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, rep);
            let sums = run_replication(config, policy, sigma, &mut rng);
            sums.into_iter().map(|s| s as f64 / horizon).collect()
        })
        .collect();

    // Deterministic aggregation in replication order.
    let mut per_user_totals = vec![0.0f64; n];
    let mut rep_means = Vec::with_capacity(per_rep.len());
    for user_means in &per_rep {
        let mut system = 0.0;
        for (total, &m) in per_user_totals.iter_mut().zip(user_means) {
            *total += m;
            system += m;
        }
        rep_means.push(system / n as f64);
    }
    let mean: f64 = rep_means.iter().sum::<f64>() / reps as f64;
    let stderr = if reps > 1 {
        let ss: f64 = rep_means.iter().map(|&x| (x - mean) * (x - mean)).sum();
        (ss / (reps as f64 - 1.0)).sqrt() / (reps as f64).sqrt()
    } else {
        0.0
    };
    let result = SimResult {
        reps,
        mean_system_age: mean,
        stderr,
        per_user_means: per_user_totals
            .into_iter()
            .map(|t| t / reps as f64)
            .collect(),
        seed,
    };
    Ok((result, if keep_reps { per_rep } else { Vec::new() }))
}

/// One bound verification: `pass` is the assertion outcome, `margin` the
/// slack in the passing direction.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub check: String,
    pub bound: f64,
    pub measured: f64,
    pub stderr: f64,
    pub margin: f64,
    pub pass: bool,
    pub details: serde_json::Value,
}

/// Simulated uniform-policy age under the worst-case centered run,
/// asserted against `(T + 1) / 2N + (N - 1)` with 3-stderr slack.
///
/// The renewal mean for an unblocked user under uniform scheduling is `N`;
/// the report carries the measured unblocked means next to it.
pub fn check_upper_bound_no_diversity(
    n_users: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
    reps: u64,
) -> Result<BoundReport> {
    let config = SystemConfig::new(n_users, horizon, alpha, Variant::NoDiversity);
    let policy = SchedulingPolicy::uniform(&config);
    let sigma = make_cbs(
        &config,
        0,
        config.budget.min(horizon),
        crate::adversary::Placement::Centered,
    )?;
    let sim = simulate(&config, &policy, &sigma, seed, reps)?;
    let bound = (horizon as f64 + 1.0) / (2.0 * n_users as f64) + (n_users as f64 - 1.0);
    let slack = bound + 3.0 * sim.stderr - sim.mean_system_age;
    let unblocked_mean = if n_users > 1 {
        sim.per_user_means[1..].iter().sum::<f64>() / (n_users as f64 - 1.0)
    } else {
        f64::NAN
    };
    Ok(BoundReport {
        check: "upper_bound_no_diversity".into(),
        bound,
        measured: sim.mean_system_age,
        stderr: sim.stderr,
        margin: slack,
        pass: slack >= 0.0,
        details: serde_json::json!({
            "n_users": n_users, "horizon": horizon, "alpha": alpha,
            "reps": reps, "seed": seed,
            "unblocked_user_mean": unblocked_mean,
            "unblocked_renewal_mean": n_users as f64,
        }),
    })
}

/// Exact deterministic path: round-robin scheduling with the adversary
/// jamming whichever user is scheduled throughout a centered window.
pub fn round_robin_blocked_value(
    n_users: usize,
    horizon: usize,
    window_start: usize,
    window_len: usize,
    indexing: AgeIndexing,
) -> f64 {
    let mut ages: Vec<u64> = vec![1; n_users];
    let mut sums: Vec<u64> = vec![0; n_users];
    for t in 0..horizon {
        if indexing == AgeIndexing::Standard {
            for (s, &a) in sums.iter_mut().zip(&ages) {
                *s += a;
            }
        }
        let scheduled = t % n_users;
        let jammed = t >= window_start && t < window_start + window_len;
        for (i, age) in ages.iter_mut().enumerate() {
            *age = if i == scheduled && !jammed { 1 } else { *age + 1 };
        }
        if indexing == AgeIndexing::Shifted {
            for (s, &a) in sums.iter_mut().zip(&ages) {
                *s += a;
            }
        }
    }
    let mut total = 0.0;
    for s in sums {
        total += s as f64 / horizon as f64;
    }
    total / n_users as f64
}

/// The three linear-in-T floors: randomized scheduling (`T a^2 / 2N`),
/// deterministic scheduling (`T a^2 / 2`), and the diversity floor
/// `(N + 1) / 2`, each checked against the exact value of the matching
/// worst-case instance.
pub fn check_lower_bounds(n_users: usize, horizon: usize, alpha: f64) -> Result<Vec<BoundReport>> {
    let mut reports = Vec::new();

    // Randomized: uniform policy under the centered full-budget run.
    let config = SystemConfig::new(n_users, horizon, alpha, Variant::NoDiversity);
    let policy = SchedulingPolicy::uniform(&config);
    let sigma = make_cbs(
        &config,
        0,
        config.budget.min(horizon),
        crate::adversary::Placement::Centered,
    )?;
    let value = exact_system_average(&config, &policy, &sigma)?;
    let bound = horizon as f64 * alpha * alpha / (2.0 * n_users as f64);
    reports.push(BoundReport {
        check: "lower_bound_randomized".into(),
        bound,
        measured: value,
        stderr: 0.0,
        margin: value - bound,
        pass: value >= bound,
        details: serde_json::json!({
            "n_users": n_users, "horizon": horizon, "alpha": alpha,
            "adversary": "centered full-budget run on user 1",
        }),
    });

    // Deterministic: round-robin with the scheduled user jammed in a
    // centered window.
    let budget = config.budget.min(horizon);
    let start = centered_start(horizon, budget);
    let det = round_robin_blocked_value(n_users, horizon, start, budget, AgeIndexing::Shifted);
    let det_bound = horizon as f64 * alpha * alpha / 2.0;
    reports.push(BoundReport {
        check: "lower_bound_deterministic".into(),
        bound: det_bound,
        measured: det,
        stderr: 0.0,
        margin: det - det_bound,
        pass: det >= det_bound,
        details: serde_json::json!({
            "n_users": n_users, "horizon": horizon, "alpha": alpha,
            "adversary": "jam the scheduled user across the centered window",
        }),
    });

    // Diversity floor (N + 1) / 2, checked on the two-sub-carrier instance.
    let div = SystemConfig::new(n_users, horizon, alpha, Variant::Diversity { n_subcarriers: 2 });
    let div_policy = SchedulingPolicy::with_subcarriers(
        vec![1.0 / n_users as f64; n_users],
        uniform_subcarrier(2),
    );
    let div_sigma = make_cbs(
        &div,
        0,
        div.budget.min(horizon),
        crate::adversary::Placement::Centered,
    )?;
    let div_value = exact_system_average(&div, &div_policy, &div_sigma)?;
    let div_bound = (n_users as f64 + 1.0) / 2.0;
    reports.push(BoundReport {
        check: "lower_bound_diversity".into(),
        bound: div_bound,
        measured: div_value,
        stderr: 0.0,
        margin: div_value - div_bound,
        pass: div_value >= div_bound,
        details: serde_json::json!({
            "n_users": n_users, "horizon": horizon, "alpha": alpha, "n_subcarriers": 2,
        }),
    });
    Ok(reports)
}

/// Simulated diversity age under the centered single-sub-carrier run,
/// asserted against `N * N_sub / (N_sub - 1)` with 3-stderr slack, plus the
/// optimality ratio against the `(N + 1) / 2` floor, asserted against
/// `2 N_sub / (N_sub - 1)`.
pub fn check_diversity_bound(
    n_users: usize,
    n_subcarriers: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
    reps: u64,
) -> Result<BoundReport> {
    let config = SystemConfig::new(
        n_users,
        horizon,
        alpha,
        Variant::Diversity { n_subcarriers },
    );
    let policy = SchedulingPolicy::with_subcarriers(
        vec![1.0 / n_users as f64; n_users],
        uniform_subcarrier(n_subcarriers),
    );
    let sigma = make_cbs(
        &config,
        0,
        config.budget.min(horizon),
        crate::adversary::Placement::Centered,
    )?;
    let sim = simulate(&config, &policy, &sigma, seed, reps)?;
    let bound = n_users as f64 * n_subcarriers as f64 / (n_subcarriers as f64 - 1.0);
    let slack = bound + 3.0 * sim.stderr - sim.mean_system_age;
    let floor = (n_users as f64 + 1.0) / 2.0;
    let ratio = sim.mean_system_age / floor;
    let ratio_bound = 2.0 * n_subcarriers as f64 / (n_subcarriers as f64 - 1.0);
    let ratio_pass = ratio <= ratio_bound + 3.0 * sim.stderr / floor;
    Ok(BoundReport {
        check: "diversity_upper_bound".into(),
        bound,
        measured: sim.mean_system_age,
        stderr: sim.stderr,
        margin: slack,
        pass: slack >= 0.0 && ratio_pass,
        details: serde_json::json!({
            "n_users": n_users, "n_subcarriers": n_subcarriers,
            "horizon": horizon, "alpha": alpha, "reps": reps, "seed": seed,
            "lower_bound": floor,
            "optimality_ratio": ratio,
            "optimality_ratio_bound": ratio_bound,
        }),
    })
}

/// Ratio of the uniform policy's age under the worst-case centered run to
/// the randomized floor `T a^2 / 2N`, asserted against `1.1 / a^2`.
/// Exact by default; set `reps > 0` to measure by simulation instead.
pub fn check_alpha_sq_optimality(
    n_users: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
    reps: u64,
) -> Result<BoundReport> {
    let config = SystemConfig::new(n_users, horizon, alpha, Variant::NoDiversity);
    let policy = SchedulingPolicy::uniform(&config);
    let sigma = make_cbs(
        &config,
        0,
        config.budget.min(horizon),
        crate::adversary::Placement::Centered,
    )?;
    let (measured, stderr) = if reps > 0 {
        let sim = simulate(&config, &policy, &sigma, seed, reps)?;
        (sim.mean_system_age, sim.stderr)
    } else {
        (exact_system_average(&config, &policy, &sigma)?, 0.0)
    };
    let floor = horizon as f64 * alpha * alpha / (2.0 * n_users as f64);
    let ratio = measured / floor;
    let bound = 1.1 / (alpha * alpha);
    Ok(BoundReport {
        check: "alpha_sq_optimality".into(),
        bound,
        measured: ratio,
        stderr,
        margin: bound - ratio,
        pass: ratio <= bound,
        details: serde_json::json!({
            "n_users": n_users, "horizon": horizon, "alpha": alpha,
            "floor": floor, "age": measured,
            "recommended_min_horizon": 1e5 / (alpha * alpha),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::age::exact_age;

    #[test]
    fn single_served_user_has_age_one() {
        let config = SystemConfig::new(1, 20, 0.2, Variant::NoDiversity)
            .with_indexing(AgeIndexing::Standard);
        let policy = SchedulingPolicy::new(vec![1.0]);
        let sim = simulate(&config, &policy, &BlockingMatrix::empty(20), 1, 50).unwrap();
        assert_eq!(sim.mean_system_age, 1.0);
        assert_eq!(sim.stderr, 0.0);
    }

    #[test]
    fn fully_blocked_user_ages_deterministically() {
        // Budget T is feasible (it is at most horizon x per-slot limit) even
        // though no alpha < 1 floors to it; built directly for the test.
        let mut config = SystemConfig::new(2, 10, 0.99, Variant::NoDiversity)
            .with_indexing(AgeIndexing::Standard);
        config.budget = 10;
        let policy = SchedulingPolicy::uniform(&config);
        let mut sigma = BlockingMatrix::empty(10);
        for t in 0..10 {
            sigma.block(t, 0);
        }
        let sim = simulate(&config, &policy, &sigma, 9, 200).unwrap();
        // Ages 1..=10 every replication: mean 5.5 exactly.
        assert_eq!(sim.per_user_means[0], 5.5);
    }

    #[test]
    fn matches_exact_engine_on_tiny_instance() {
        let config = SystemConfig::new(2, 3, 0.2, Variant::NoDiversity)
            .with_indexing(AgeIndexing::Standard);
        let policy = SchedulingPolicy::uniform(&config);
        let empty = BlockingMatrix::empty(3);
        let exact = exact_age(&config, &policy, &empty).unwrap().system_average;
        let sim = simulate(&config, &policy, &empty, 42, 200_000).unwrap();
        assert!(
            (sim.mean_system_age - exact).abs() <= 4.0 * sim.stderr,
            "mc {} exact {} stderr {}",
            sim.mean_system_age,
            exact,
            sim.stderr
        );
    }

    #[test]
    fn replications_are_reproducible_and_thread_independent() {
        let config = SystemConfig::new(3, 30, 0.4, Variant::Diversity { n_subcarriers: 2 });
        let policy = SchedulingPolicy::with_subcarriers(
            vec![0.5, 0.3, 0.2],
            vec![0.6, 0.4],
        );
        let sigma = make_cbs(&config, 0, config.budget, crate::adversary::Placement::Centered)
            .unwrap();
        let run = || {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            pool.install(|| simulate(&config, &policy, &sigma, 7, 500).unwrap())
        };
        let run4 = || {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
            pool.install(|| simulate(&config, &policy, &sigma, 7, 500).unwrap())
        };
        let a = run();
        let b = run4();
        assert_eq!(a, b);
        assert_eq!(a, run());
    }

    #[test]
    fn general_k_marginals_sampled_correctly() {
        // Two of three users per slot with skewed marginals: delivered-rate
        // check through the exact engine.
        let config = SystemConfig::new(3, 40, 0.3, Variant::GeneralK { k: 2, k_a: 1 })
            .with_indexing(AgeIndexing::Shifted);
        let policy = SchedulingPolicy::new(vec![0.9, 0.7, 0.4]);
        let sigma = BlockingMatrix::empty(40);
        let exact = exact_age(&config, &policy, &sigma).unwrap().system_average;
        let sim = simulate(&config, &policy, &sigma, 3, 200_000).unwrap();
        assert!(
            (sim.mean_system_age - exact).abs() <= 4.0 * sim.stderr,
            "mc {} exact {} stderr {}",
            sim.mean_system_age,
            exact,
            sim.stderr
        );
    }

    #[test]
    fn round_robin_window_value() {
        // Jamming the scheduled user for the whole (tiny) horizon: every age
        // ramps, shifted ages are 2..=T+1 per user.
        let v = round_robin_blocked_value(2, 4, 0, 4, AgeIndexing::Shifted);
        assert_eq!(v, (2.0 + 3.0 + 4.0 + 5.0) / 4.0);
    }

    #[test]
    fn lower_bound_reports_pass_on_example() {
        let reports = check_lower_bounds(2, 100, 0.2).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{:?}", reports);
        let det = reports.iter().find(|r| r.check == "lower_bound_deterministic").unwrap();
        assert_eq!(det.bound, 2.0);
    }

    #[test]
    fn upper_bound_smoke() {
        let r = check_upper_bound_no_diversity(5, 999, 0.2, 17, 200).unwrap();
        assert_eq!(r.bound, 104.0);
        assert!(r.pass, "{:?}", r);
    }

    #[test]
    fn unblocked_uniform_mean_approaches_renewal_value() {
        // With a vanishing budget the whole horizon is open and each user's
        // mean age settles at N, the renewal value of uniform scheduling.
        let config = SystemConfig::new(5, 5_000, 1e-5, Variant::NoDiversity);
        assert_eq!(config.budget, 0);
        let policy = SchedulingPolicy::uniform(&config);
        let sim = simulate(&config, &policy, &BlockingMatrix::empty(5_000), 23, 300).unwrap();
        let rel = (sim.mean_system_age - 5.0).abs() / 5.0;
        assert!(
            rel < 0.02,
            "mean {} not within 2% of renewal value 5",
            sim.mean_system_age
        );
    }

    #[test]
    fn zero_reps_rejected() {
        let config = SystemConfig::new(2, 10, 0.2, Variant::NoDiversity);
        let policy = SchedulingPolicy::uniform(&config);
        assert!(simulate(&config, &policy, &BlockingMatrix::empty(10), 1, 0).is_err());
    }
}
