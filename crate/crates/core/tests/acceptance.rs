//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured margins (visible with `--nocapture`).
//!
//! Tolerances are pinned in the assertions; seeds are fixed so every run
//! checks the same instances.

use aoi_core::adversary::{
    brute_force_best_adversary, cbs_scan_best_adversary, make_cbs, mirror_blocking, Placement,
};
use aoi_core::age::{exact_age, exact_system_average};
use aoi_core::equilibrium::{
    best_response_dynamics, stackelberg_point, verify_nash_diversity, DynamicsOutcome,
    EquilibriumKind,
};
use aoi_core::policy::{numeric_best_policy, optimal_policy_general_k, optimal_policy_vs_cbs};
use aoi_core::sim::{
    check_alpha_sq_optimality, check_diversity_bound, check_lower_bounds,
    check_upper_bound_no_diversity, simulate,
};
use aoi_core::{
    AgeIndexing, BlockingMatrix, CbsSpec, SchedulingPolicy, SystemConfig, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| (-(1.0 - rng.gen::<f64>()).ln()).max(1e-9))
        .collect();
    let s: f64 = x.iter().sum();
    for v in &mut x {
        *v /= s;
    }
    x
}

/// Strictly ordered pmf with adjacent gaps of at least `gap`.
fn random_strictly_ordered_pmf(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    loop {
        let mut x = random_pmf(rng, n);
        x.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if x.windows(2).all(|w| w[0] - w[1] >= gap) && x[n - 1] >= 0.08 {
            return x;
        }
    }
}

fn single_run_structure(m: &BlockingMatrix, n_targets: usize) -> Option<(usize, usize, usize)> {
    let horizon = m.horizon();
    let users: Vec<usize> = (0..n_targets)
        .filter(|&u| (0..horizon).any(|t| m.is_blocked(t, u)))
        .collect();
    if users.len() != 1 {
        return None;
    }
    let u = users[0];
    let slots: Vec<usize> = (0..horizon).filter(|&t| m.is_blocked(t, u)).collect();
    if slots.windows(2).all(|w| w[1] == w[0] + 1) {
        Some((u, slots[0], slots.len()))
    } else {
        None
    }
}

#[test]
fn c01_cbs_optimality_oracle_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut instances = 0u32;
    let mut worst_gap = 0.0f64;
    for n in [2usize, 3] {
        for horizon in 4..=9usize {
            for budget in 1..=3usize {
                let mut policies = vec![SchedulingPolicy::new(vec![1.0 / n as f64; n])];
                for _ in 0..10 {
                    policies.push(SchedulingPolicy::new(random_pmf(&mut rng, n)));
                }
                let mut config = SystemConfig::new(n, horizon, 0.5, Variant::NoDiversity);
                config.budget = budget;
                for policy in &policies {
                    let brute = brute_force_best_adversary(&config, policy, None).unwrap();
                    let (_, scan_value) = cbs_scan_best_adversary(&config, policy).unwrap();
                    let gap = (brute.value - scan_value).abs();
                    worst_gap = worst_gap.max(gap);
                    assert!(
                        gap <= 1e-12,
                        "value mismatch N={} T={} b={}: brute {} scan {}",
                        n,
                        horizon,
                        budget,
                        brute.value,
                        scan_value
                    );
                    assert!(!brute.truncated);
                    for m in &brute.argmax {
                        let (_, start, len) = single_run_structure(m, n).unwrap_or_else(|| {
                            panic!("non-single-run maximizer N={} T={} b={}", n, horizon, budget)
                        });
                        assert_eq!(len, budget, "partial-budget maximizer");
                        let l = start as i64;
                        let r = (horizon - start - len) as i64;
                        assert!(
                            (l - r).abs() <= 1,
                            "off-center maximizer N={} T={} b={} L={} R={}",
                            n,
                            horizon,
                            budget,
                            l,
                            r
                        );
                    }
                    instances += 1;
                }
            }
        }
    }
    println!(
        "criterion 01 PASS: {} brute-force instances, every maximizer a centered single-user run; max |brute - scan| = {:.2e}",
        instances, worst_gap
    );
}

#[test]
fn c02_mirror_equality() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..1000 {
        let n = 1 + (rng.gen::<u64>() as usize) % 4;
        let horizon = 2 + (rng.gen::<u64>() as usize) % 49;
        let length = 1 + (rng.gen::<u64>() as usize) % horizon;
        let start = (rng.gen::<u64>() as usize) % (horizon - length + 1);
        let target = (rng.gen::<u64>() as usize) % n;
        let policy = SchedulingPolicy::new(random_pmf(&mut rng, n));
        let config = SystemConfig::new(n, horizon, 0.99, Variant::NoDiversity);
        let cbs = CbsSpec {
            target,
            start,
            length,
        };
        let sigma = cbs.to_blocking(horizon).unwrap();
        let a = exact_age(&config, &policy, &sigma).unwrap();
        let b = exact_age(&config, &policy, &mirror_blocking(&sigma)).unwrap();
        assert_eq!(
            a.system_average.to_bits(),
            b.system_average.to_bits(),
            "case {}: N={} T={} run [{}, {}): {} vs {}",
            case,
            n,
            horizon,
            start,
            start + length,
            a.system_average,
            b.system_average
        );
    }
    println!("criterion 02 PASS: 1000 mirrored instances bit-identical");
}

#[test]
fn c03_centering_monotonicity() {
    let mut chains = 0u32;
    for n in [2usize, 3] {
        let policies = [
            SchedulingPolicy::new(vec![1.0 / n as f64; n]),
            SchedulingPolicy::new(if n == 2 {
                vec![0.7, 0.3]
            } else {
                vec![0.55, 0.3, 0.15]
            }),
        ];
        for horizon in 2..=20usize {
            for length in 1..=5usize.min(horizon) {
                for target in 0..n {
                    let config = SystemConfig::new(n, horizon, 0.99, Variant::NoDiversity);
                    for policy in &policies {
                        let mut values = Vec::new();
                        for start in 0..=horizon - length {
                            let cbs = CbsSpec {
                                target,
                                start,
                                length,
                            };
                            let sigma = cbs.to_blocking(horizon).unwrap();
                            values.push(exact_system_average(&config, policy, &sigma).unwrap());
                        }
                        for s in 0..values.len() - 1 {
                            let min_here = s.min(horizon - length - s);
                            let min_next = (s + 1).min(horizon - length - s - 1);
                            if min_next >= min_here {
                                assert!(
                                    values[s + 1] >= values[s],
                                    "centering violation N={} T={} len={} start {}->{}",
                                    n,
                                    horizon,
                                    length,
                                    s,
                                    s + 1
                                );
                            } else {
                                assert!(
                                    values[s + 1] <= values[s],
                                    "de-centering violation N={} T={} len={} start {}->{}",
                                    n,
                                    horizon,
                                    length,
                                    s,
                                    s + 1
                                );
                            }
                        }
                        chains += 1;
                    }
                }
            }
        }
    }
    println!(
        "criterion 03 PASS: zero violations across {} shift chains",
        chains
    );
}

#[test]
fn c04_closed_form_vs_numeric_policy() {
    let mut worst = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for n in [2usize, 3, 5] {
        for alpha in [0.1, 0.44, 0.8] {
            let config = SystemConfig::new(n, 10_000, alpha, Variant::NoDiversity);
            let sigma = make_cbs(&config, 0, config.budget, Placement::Centered).unwrap();
            let numeric = numeric_best_policy(&config, &sigma, None).unwrap();
            let closed = optimal_policy_vs_cbs(n, alpha, 0).unwrap();
            let reduced = optimal_policy_general_k(n, 1, alpha, 0).unwrap();
            for ((a, b), c) in numeric
                .user_pmf
                .iter()
                .zip(&closed.user_pmf)
                .zip(&reduced.user_pmf)
            {
                assert_eq!(b.to_bits(), c.to_bits(), "k=1 reduction drifted");
                let err = (a - b).abs();
                worst = worst.max(err);
                assert!(
                    err < 1e-3,
                    "numeric/closed gap {} at N={} alpha={}",
                    err,
                    n,
                    alpha
                );
            }
            let lambda = (1.0 + alpha) / (closed.user_pmf[0] * closed.user_pmf[0]);
            for &pj in &closed.user_pmf[1..] {
                let residual = ((lambda - 1.0 / (pj * pj)) / lambda).abs();
                worst_kkt = worst_kkt.max(residual);
                assert!(residual < 1e-9);
            }
        }
    }
    println!(
        "criterion 04 PASS: max |numeric - closed| = {:.2e} (tol 1e-3), max KKT residual = {:.2e} (tol 1e-9)",
        worst, worst_kkt
    );
}

#[test]
fn c05_adversary_targets_least_scheduled_user() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    // Large horizon: the scan must pick the least-scheduled user.
    for case in 0..50 {
        let n = if case % 2 == 0 { 2 } else { 3 };
        let pmf = random_strictly_ordered_pmf(&mut rng, n, 0.02);
        let config = SystemConfig::new(n, 1000, 0.3, Variant::NoDiversity);
        let policy = SchedulingPolicy::new(pmf.clone());
        let (cbs, _) = cbs_scan_best_adversary(&config, &policy).unwrap();
        assert_eq!(
            cbs.target,
            n - 1,
            "case {}: scan picked user {} for pmf {:?}",
            case,
            cbs.target + 1,
            pmf
        );
    }
    // Small horizons: the exhaustive oracle confirms that the scan's
    // centered-run family contains the true maximizer.
    let mut small = 0u32;
    for horizon in 6..=8usize {
        for _ in 0..4 {
            let n = 2 + (rng.gen::<u64>() as usize) % 2;
            let pmf = random_strictly_ordered_pmf(&mut rng, n, 0.05);
            let mut config = SystemConfig::new(n, horizon, 0.5, Variant::NoDiversity);
            config.budget = 2;
            let policy = SchedulingPolicy::new(pmf);
            let brute = brute_force_best_adversary(&config, &policy, None).unwrap();
            let (_, scan_value) = cbs_scan_best_adversary(&config, &policy).unwrap();
            assert!((brute.value - scan_value).abs() <= 1e-12);
            for m in &brute.argmax {
                assert!(single_run_structure(m, n).is_some());
            }
            small += 1;
        }
    }
    println!(
        "criterion 05 PASS: 50 ordered policies target the least-scheduled user; {} small instances confirmed by brute force",
        small
    );
}

#[test]
fn c06_nash_absence_without_diversity() {
    for n in [2usize, 3] {
        for alpha in [0.2, 0.5] {
            let config = SystemConfig::new(n, 10_000, alpha, Variant::NoDiversity);
            let start = SchedulingPolicy::uniform(&config);
            let trace = best_response_dynamics(&config, &start, 20).unwrap();
            match trace.outcome {
                DynamicsOutcome::Cycle { period, .. } => {
                    assert!(period >= 2, "N={} alpha={}", n, alpha)
                }
                other => panic!(
                    "expected a best-response cycle at N={} alpha={}, got {:?}",
                    n, alpha, other
                ),
            }
            assert!(trace.rounds.len() <= 20);
        }
    }
    println!("criterion 06 PASS: best-response dynamics cycle (no fixed point) for N in {{2,3}}, alpha in {{0.2,0.5}}");
}

#[test]
fn c07_stackelberg_verification() {
    let mut worst_margin = f64::INFINITY;
    for n in [2usize, 3, 4] {
        for alpha in [0.1, 0.3, 0.5] {
            let config = SystemConfig::new(n, 2_000, alpha, Variant::NoDiversity);
            let result = stackelberg_point(&config, 50, 707).unwrap();
            for d in match &result.evidence {
                aoi_core::equilibrium::Evidence::Audit { deviations } => deviations,
                _ => panic!("expected audit evidence"),
            } {
                let margin = d.value - result.value;
                worst_margin = worst_margin.min(margin);
                assert!(
                    margin >= 0.0,
                    "N={} alpha={}: deviation `{}` beat the uniform leader by {}",
                    n,
                    alpha,
                    d.description,
                    -margin
                );
            }
        }
    }
    // Multi-user analogue.
    for alpha in [0.1, 0.3, 0.5] {
        let config = SystemConfig::new(3, 2_000, alpha, Variant::GeneralK { k: 2, k_a: 1 });
        let result = stackelberg_point(&config, 50, 708).unwrap();
        assert_eq!(result.bs_policy.user_pmf, vec![2.0 / 3.0; 3]);
        for d in match &result.evidence {
            aoi_core::equilibrium::Evidence::Audit { deviations } => deviations,
            _ => panic!("expected audit evidence"),
        } {
            let margin = d.value - result.value;
            worst_margin = worst_margin.min(margin);
            assert!(margin >= 0.0, "general-k deviation won by {}", -margin);
        }
    }
    println!(
        "criterion 07 PASS: uniform leader optimal against every audited deviation; smallest margin = {:.3e}",
        worst_margin
    );
}

#[test]
fn c08_diversity_nash_audit() {
    for n in [2usize, 3] {
        for n_sub in [2usize, 3] {
            let config = SystemConfig::new(n, 500, 0.3, Variant::Diversity { n_subcarriers: n_sub });
            let result = verify_nash_diversity(&config, 200, 808).unwrap();
            assert_eq!(result.kind, EquilibriumKind::NashVerified);
            assert!(result.worst_improvement() <= 1e-9);
            let audited = match &result.evidence {
                aoi_core::equilibrium::Evidence::Audit { deviations } => deviations.len(),
                _ => panic!("expected audit evidence"),
            };
            assert!(audited >= 400, "only {} deviations audited", audited);
        }
    }
    println!("criterion 08 PASS: no profitable deviation in any diversity Nash audit (tolerance 1e-9)");
}

#[test]
fn c09_bounds() {
    // Simulated upper bound at N=5, T=999, alpha=0.2: (T+1)/2N + (N-1) = 104.
    let upper = check_upper_bound_no_diversity(5, 999, 0.2, 909, 2000).unwrap();
    assert_eq!(upper.bound, 104.0);
    assert!(upper.pass, "{:?}", upper);

    // Exact lower bound T alpha^2 / 2N at the same instance.
    let lowers = check_lower_bounds(5, 999, 0.2).unwrap();
    let randomized = lowers
        .iter()
        .find(|r| r.check == "lower_bound_randomized")
        .unwrap();
    assert!((randomized.bound - 3.996).abs() < 1e-12);
    assert!(randomized.pass, "{:?}", randomized);
    // Deterministic round-robin floor on the documented instance.
    let det = check_lower_bounds(2, 100, 0.2).unwrap();
    let det = det
        .iter()
        .find(|r| r.check == "lower_bound_deterministic")
        .unwrap();
    assert_eq!(det.bound, 2.0);
    assert!(det.pass, "{:?}", det);

    // Diversity: mean <= N n_sub / (n_sub - 1) = 6 at N=4, n_sub=3, T=1e4,
    // above the universal floor (N+1)/2 = 2.5, ratio within 2 n_sub / (n_sub - 1).
    let div = check_diversity_bound(4, 3, 10_000, 0.9, 910, 200).unwrap();
    assert_eq!(div.bound, 6.0);
    assert!(div.pass, "{:?}", div);
    assert!(div.measured >= 2.5);
    let div2 = check_diversity_bound(4, 2, 10_000, 0.9, 911, 200).unwrap();
    assert!(div2.pass, "{:?}", div2);
    let ratio2 = div2.details["optimality_ratio"].as_f64().unwrap();
    assert!(ratio2 <= 4.0, "ratio {} exceeds 4", ratio2);

    // 1/alpha^2 optimality with 10% slack, exact engine, T >= 1e5 / alpha^2.
    let opt_half = check_alpha_sq_optimality(4, 400_000, 0.5, 0, 0).unwrap();
    assert!((opt_half.bound - 4.4).abs() < 1e-12);
    assert!(opt_half.pass, "{:?}", opt_half);
    let opt_nine = check_alpha_sq_optimality(4, 130_000, 0.9, 0, 0).unwrap();
    assert!(opt_nine.pass, "{:?}", opt_nine);

    println!(
        "criterion 09 PASS: upper {:.3} <= 104, exact lower {:.3} >= 3.996, diversity mean {:.3} in [2.5, 6], ratios {:.3} <= 4.4 and {:.3} <= {:.3}",
        upper.measured, randomized.measured, div.measured, opt_half.measured, opt_nine.measured, opt_nine.bound
    );
}

#[test]
fn c10_exact_mc_agreement() {
    struct Cell {
        config: SystemConfig,
        policy: SchedulingPolicy,
        sigma: BlockingMatrix,
        seed: u64,
    }
    let mut cells = Vec::new();
    {
        let config = SystemConfig::new(2, 10, 0.3, Variant::NoDiversity);
        let policy = SchedulingPolicy::uniform(&config);
        let sigma = BlockingMatrix::empty(10);
        cells.push(Cell { config, policy, sigma, seed: 1 });
    }
    {
        let config = SystemConfig::new(2, 10, 0.3, Variant::NoDiversity);
        let sigma = make_cbs(&config, 1, 3, Placement::Centered).unwrap();
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::new(vec![0.7, 0.3]),
            sigma,
            seed: 2,
        });
    }
    {
        let config = SystemConfig::new(3, 25, 0.4, Variant::NoDiversity)
            .with_indexing(AgeIndexing::Standard);
        let mut sigma = BlockingMatrix::empty(25);
        for &(t, u) in &[(3usize, 0usize), (4, 1), (11, 2), (12, 2), (13, 2), (20, 0)] {
            sigma.block(t, u);
        }
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::new(vec![0.5, 0.3, 0.2]),
            sigma,
            seed: 3,
        });
    }
    {
        let config = SystemConfig::new(4, 50, 0.2, Variant::NoDiversity);
        let sigma = make_cbs(&config, 0, 10, Placement::Centered).unwrap();
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::new(vec![0.4, 0.3, 0.2, 0.1]),
            sigma,
            seed: 4,
        });
    }
    {
        let config = SystemConfig::new(2, 20, 0.3, Variant::Diversity { n_subcarriers: 2 });
        let sigma = make_cbs(&config, 0, 6, Placement::Centered).unwrap();
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::with_subcarriers(vec![0.5, 0.5], vec![0.5, 0.5]),
            sigma,
            seed: 5,
        });
    }
    {
        let config = SystemConfig::new(3, 30, 0.3, Variant::Diversity { n_subcarriers: 3 });
        let mut sigma = BlockingMatrix::empty(30);
        for &(t, c) in &[(5usize, 0usize), (6, 1), (14, 2), (15, 0), (16, 1), (22, 2)] {
            sigma.block(t, c);
        }
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::with_subcarriers(vec![0.5, 0.3, 0.2], vec![0.5, 0.3, 0.2]),
            sigma,
            seed: 6,
        });
    }
    {
        let config = SystemConfig::new(3, 20, 0.4, Variant::GeneralK { k: 2, k_a: 1 });
        let sigma = make_cbs(&config, 2, 5, Placement::Centered).unwrap();
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::new(vec![0.9, 0.7, 0.4]),
            sigma,
            seed: 7,
        });
    }
    {
        let config = SystemConfig::new(4, 40, 0.3, Variant::GeneralK { k: 2, k_a: 2 });
        let mut sigma = BlockingMatrix::empty(40);
        for &(t, u) in &[(9usize, 0usize), (9, 1), (10, 0), (10, 1), (25, 3), (30, 2)] {
            sigma.block(t, u);
        }
        cells.push(Cell {
            config,
            policy: SchedulingPolicy::new(vec![0.8, 0.5, 0.4, 0.3]),
            sigma,
            seed: 8,
        });
    }

    let reps = 1_000_000u64;
    let mut hits = 0usize;
    for (i, cell) in cells.iter().enumerate() {
        let exact = exact_system_average(&cell.config, &cell.policy, &cell.sigma).unwrap();
        let sim = simulate(&cell.config, &cell.policy, &cell.sigma, cell.seed, reps).unwrap();
        let gap = (sim.mean_system_age - exact).abs();
        let ok = gap <= 4.0 * sim.stderr;
        println!(
            "  cell {}: exact {:.6} mc {:.6} stderr {:.2e} -> {}",
            i + 1,
            exact,
            sim.mean_system_age,
            sim.stderr,
            if ok { "ok" } else { "MISS" }
        );
        if ok {
            hits += 1;
        }
    }
    assert_eq!(hits, cells.len(), "{}/{} cells within 4 stderr", hits, cells.len());

    // Thread-count independence, bit for bit.
    let cell = &cells[5];
    let mut outcomes = Vec::new();
    for threads in [1usize, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        outcomes.push(pool.install(|| {
            simulate(&cell.config, &cell.policy, &cell.sigma, cell.seed, 50_000).unwrap()
        }));
    }
    assert_eq!(outcomes[0], outcomes[1]);
    assert_eq!(outcomes[1], outcomes[2]);

    println!(
        "criterion 10 PASS: {}/{} cells within 4 stderr at 1e6 replications; results bit-identical across 1/2/8 threads",
        hits,
        cells.len()
    );
}
