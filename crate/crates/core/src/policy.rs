//! Station-side policies: closed-form optima against a centered blocking
//! run, marginalization between group and per-user probabilities in the
//! multi-user variant, and a numeric optimizer over the probability simplex
//! that serves as an independent oracle for the closed forms.

use crate::age::{survival_grid, value_from_survival};
use crate::config::{
    AgeIndexing, BlockingMatrix, SchedulingPolicy, SystemConfig, Variant, PMF_SUM_TOL,
};
use crate::error::{Error, Result};

/// Optimal stationary pmf when the adversary jams `blocked_user` with a
/// centered full-budget run: the jammed user is scheduled
/// `sqrt(1 + alpha)` times as often as everyone else.
///
/// The unblocked entries are `1 / (N - 1 + sqrt(1 + alpha))` and the jammed
/// entry is filled by subtraction so the vector sums to 1 exactly.
pub fn optimal_policy_vs_cbs(
    n_users: usize,
    alpha: f64,
    blocked_user: usize,
) -> Result<SchedulingPolicy> {
    boosted_policy(n_users, 1, alpha, blocked_user)
}

/// Multi-user generalization: marginals sum to `k`, the jammed user keeps
/// the same `sqrt(1 + alpha)` boost over the rest, and any marginal above 1
/// is reported as infeasible rather than clamped.
pub fn optimal_policy_general_k(
    n_users: usize,
    k: usize,
    alpha: f64,
    blocked_user: usize,
) -> Result<SchedulingPolicy> {
    if k < 1 || k > n_users {
        return Err(Error::Invalid(format!(
            "k = {} must satisfy 1 <= k <= N = {}",
            k, n_users
        )));
    }
    if k == n_users {
        // Sum k with every marginal capped at 1 forces the all-ones vector.
        return Ok(SchedulingPolicy::new(vec![1.0; n_users]));
    }
    boosted_policy(n_users, k, alpha, blocked_user)
}

fn boosted_policy(
    n_users: usize,
    k: usize,
    alpha: f64,
    blocked_user: usize,
) -> Result<SchedulingPolicy> {
    if n_users < 2 {
        return Err(Error::Invalid("need at least 2 users".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!(
            "alpha must lie in (0, 1), got {}",
            alpha
        )));
    }
    if blocked_user >= n_users {
        return Err(Error::OutOfRange(format!(
            "blocked user {} outside 1..={}",
            blocked_user + 1,
            n_users
        )));
    }
    let boost = (1.0 + alpha).sqrt();
    let others = k as f64 / (n_users as f64 - 1.0 + boost);
    let mut pmf = vec![others; n_users];
    let mut rest = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        if i != blocked_user {
            rest += p;
        }
    }
    pmf[blocked_user] = (k as f64 - rest).max(0.0);
    if pmf.iter().any(|&p| p > 1.0) {
        return Err(Error::InfeasibleMarginals(format!(
            "boosted marginal {} exceeds 1 (N = {}, k = {}, alpha = {})",
            pmf[blocked_user], n_users, k, alpha
        )));
    }
    Ok(SchedulingPolicy::new(pmf))
}

/// Uniform leader policy (marginals `k/N` in the multi-user variant).
pub fn stackelberg_leader_policy(config: &SystemConfig) -> SchedulingPolicy {
    SchedulingPolicy::uniform(config)
}

/// Uniform sub-carrier pmf.
pub fn uniform_subcarrier(n_subcarriers: usize) -> Vec<f64> {
    vec![1.0 / n_subcarriers as f64; n_subcarriers]
}

/// Binomial coefficient, saturating at f64 precision (inputs stay small).
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: usize = 1;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// All k-subsets of `0..n` in lexicographic order; the canonical group
/// enumeration used by every group-pmf interface.
pub fn lex_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut cur = Vec::with_capacity(k);
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, from: usize, n: usize, k: usize) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        let need = k - cur.len();
        for u in from..=n.saturating_sub(need) {
            cur.push(u);
            rec(out, cur, u + 1, n, k);
            cur.pop();
        }
    }
    if k <= n {
        rec(&mut out, &mut cur, 0, n, k);
    }
    out
}

/// Per-user marginals of a pmf over the lexicographic k-subsets:
/// `p_i` is the total probability of groups containing user `i`, and the
/// marginals always sum to `k`.
pub fn marginals_from_group_pmf(n_users: usize, k: usize, group_pmf: &[f64]) -> Result<Vec<f64>> {
    let groups = lex_subsets(n_users, k);
    if group_pmf.len() != groups.len() {
        return Err(Error::DimensionMismatch(format!(
            "group pmf has {} entries, expected C({}, {}) = {}",
            group_pmf.len(),
            n_users,
            k,
            groups.len()
        )));
    }
    let total: f64 = group_pmf.iter().sum();
    if (total - 1.0).abs() > PMF_SUM_TOL {
        return Err(Error::Invalid(format!(
            "group pmf sums to {}, expected 1",
            total
        )));
    }
    if let Some((g, &w)) = group_pmf.iter().enumerate().find(|(_, &w)| !(0.0..=1.0).contains(&w)) {
        return Err(Error::Invalid(format!(
            "group pmf entry {} = {} outside [0, 1]",
            g + 1,
            w
        )));
    }
    let mut marginals = vec![0.0; n_users];
    for (group, &w) in groups.iter().zip(group_pmf) {
        for &i in group {
            marginals[i] += w;
        }
    }
    Ok(marginals)
}

/// Selects the k-subset picked by systematic (round-robin) sampling at
/// offset `u` in [0, 1): users are laid around a circle of circumference k
/// with arc lengths `p_i`, and the points `u, u+1, ..., u+k-1` pick one user
/// each. `cum` is the cumulative marginal vector with `cum[0] = 0`.
pub(crate) fn systematic_subset(cum: &[f64], k: usize, u: f64) -> Vec<usize> {
    let points_below = |x: f64| -> isize {
        let c = (x - u).ceil() as isize;
        c.clamp(0, k as isize)
    };
    let mut out = Vec::with_capacity(k);
    for i in 0..cum.len() - 1 {
        if points_below(cum[i + 1]) > points_below(cum[i]) {
            out.push(i);
        }
    }
    out
}

/// Decomposes a marginal vector (entries in [0, 1], summing to k) into a
/// sparse pmf over k-subsets with exactly those marginals, via the
/// round-robin systematic-sampling construction: at most 2N + 1 distinct
/// groups, each an interval of offsets.
pub fn decompose_marginals(marginals: &[f64], k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = marginals.len();
    let total: f64 = marginals.iter().sum();
    if (total - k as f64).abs() > 1e-9 {
        return Err(Error::InfeasibleMarginals(format!(
            "marginals sum to {}, expected k = {}",
            total, k
        )));
    }
    if let Some((i, &p)) = marginals
        .iter()
        .enumerate()
        .find(|(_, &p)| !(-1e-12..=1.0 + 1e-12).contains(&p))
    {
        return Err(Error::InfeasibleMarginals(format!(
            "marginal {} = {} outside [0, 1]",
            i + 1,
            p
        )));
    }
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for &p in marginals {
        cum.push(cum.last().unwrap() + p);
    }
    // Pin the circle's circumference to exactly k so rounding drift cannot
    // leave a sliver past the last arc.
    cum[n] = k as f64;
    for c in cum.iter_mut() {
        *c = c.min(k as f64);
    }
    // Selection changes only where some cumulative crosses an integer offset.
    let mut cuts: Vec<f64> = cum.iter().map(|c| c.fract()).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let width = w[1] - w[0];
        if width <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let subset = systematic_subset(&cum, k, mid);
        if subset.len() != k {
            return Err(Error::InfeasibleMarginals(format!(
                "systematic decomposition picked {} users instead of k = {}",
                subset.len(),
                k
            )));
        }
        match out.last_mut() {
            Some((prev, weight)) if *prev == subset => *weight += width,
            _ => out.push((subset, width)),
        }
    }
    Ok(out)
}

/// Iteration cap for the numeric optimizer.
pub const OPTIMIZER_MAX_ITERS: usize = 100_000;

/// Default convergence tolerance on successive objective change.
pub const OPTIMIZER_DEFAULT_TOL: f64 = 1e-10;

struct SimplexObjective<'a> {
    config: &'a SystemConfig,
    sigma: &'a BlockingMatrix,
    /// Per-slot unblocked-subcarrier indicator (diversity only).
    open: Vec<Vec<bool>>,
}

impl<'a> SimplexObjective<'a> {
    fn new(config: &'a SystemConfig, sigma: &'a BlockingMatrix) -> Self {
        let open = match config.variant {
            Variant::Diversity { n_subcarriers } => (0..config.horizon)
                .map(|t| {
                    (0..n_subcarriers)
                        .map(|c| !sigma.is_blocked(t, c))
                        .collect()
                })
                .collect(),
            _ => Vec::new(),
        };
        SimplexObjective { config, sigma, open }
    }

    fn value(&self, policy: &SchedulingPolicy) -> f64 {
        let grid = survival_grid(self.config, policy, self.sigma);
        value_from_survival(&grid, self.config.age_indexing)
    }

    /// Gradient of the system average with respect to `user_pmf` (and
    /// `subcarrier_pmf` under diversity), by differentiating the recursion.
    fn gradient(&self, policy: &SchedulingPolicy) -> (Vec<f64>, Vec<f64>) {
        let n = self.config.n_users;
        let horizon = self.config.horizon;
        let scale = 1.0 / (horizon as f64 * n as f64);
        match self.config.variant {
            Variant::NoDiversity | Variant::GeneralK { .. } => {
                let last = match self.config.age_indexing {
                    AgeIndexing::Shifted => horizon,
                    AgeIndexing::Standard => horizon - 1,
                };
                let grad = policy
                    .user_pmf
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let alive = 1.0 - p;
                        let mut age = 1.0;
                        let mut dage = 0.0;
                        let mut dsum = 0.0;
                        for t in 0..last {
                            let blocked = self.sigma.is_blocked(t, i);
                            let s = if blocked { 1.0 } else { alive };
                            let ds = if blocked { 0.0 } else { -1.0 };
                            dage = dage * s + age * ds;
                            age = age * s + 1.0;
                            dsum += dage;
                        }
                        dsum * scale
                    })
                    .collect();
                (grad, Vec::new())
            }
            Variant::Diversity { n_subcarriers } => {
                let q = policy.subcarrier_pmf.as_ref().expect("validated");
                let q_total: f64 = q.iter().sum();
                let mass: Vec<f64> = (0..horizon)
                    .map(|t| {
                        let mut m = q_total;
                        for (c, &open) in self.open[t].iter().enumerate() {
                            if !open {
                                m -= q[c];
                            }
                        }
                        m
                    })
                    .collect();
                let mut grad_p = Vec::with_capacity(n);
                let mut grad_q = vec![0.0; n_subcarriers];
                let last = match self.config.age_indexing {
                    AgeIndexing::Shifted => horizon,
                    AgeIndexing::Standard => horizon - 1,
                };
                for &p in &policy.user_pmf {
                    let mut age = 1.0;
                    let mut dp = 0.0;
                    let mut dq = vec![0.0; n_subcarriers];
                    let mut dp_sum = 0.0;
                    let mut dq_sum = vec![0.0; n_subcarriers];
                    for (t, &m) in mass.iter().enumerate().take(last) {
                        let s = 1.0 - p * m;
                        dp = dp * s - age * m;
                        for (dqc, &open) in dq.iter_mut().zip(&self.open[t]) {
                            let ds = if open { -p } else { 0.0 };
                            *dqc = *dqc * s + age * ds;
                        }
                        age = age * s + 1.0;
                        dp_sum += dp;
                        for (acc, &d) in dq_sum.iter_mut().zip(&dq) {
                            *acc += d;
                        }
                    }
                    grad_p.push(dp_sum * scale);
                    for (acc, &d) in grad_q.iter_mut().zip(&dq_sum) {
                        *acc += d * scale;
                    }
                }
                (grad_p, grad_q)
            }
        }
    }
}

fn multiplicative_step(pmf: &[f64], grad: &[f64], step: f64, mass: f64) -> Vec<f64> {
    let mut out: Vec<f64> = pmf
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p * (-step * g).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v *= mass / sum;
    }
    out
}

/// Minimizes the exact system average over the probability simplex by
/// projected multiplicative descent (exponentiated-gradient steps with a
/// backtracking line search), starting from the uniform policy.
///
/// Deterministic for fixed inputs. Converged when the objective decreases by
/// less than `tolerance` (default 1e-10) over one accepted step while the
/// simplex constraint holds to 1e-12; hitting the iteration cap returns the
/// best iterate inside the error.
pub fn numeric_best_policy(
    config: &SystemConfig,
    sigma: &BlockingMatrix,
    tolerance: Option<f64>,
) -> Result<SchedulingPolicy> {
    match config.variant {
        Variant::NoDiversity | Variant::Diversity { .. } => {}
        Variant::GeneralK { .. } => {
            return Err(Error::Invalid(
                "numeric optimizer supports the no-diversity and diversity variants".into(),
            ))
        }
    }
    if config.horizon == 0 {
        return Err(Error::Invalid("horizon must be positive".into()));
    }
    if sigma.horizon() != config.horizon {
        return Err(Error::DimensionMismatch(format!(
            "blocking matrix covers {} slots, config horizon is {}",
            sigma.horizon(),
            config.horizon
        )));
    }
    let tol = tolerance.unwrap_or(OPTIMIZER_DEFAULT_TOL);
    if config.n_users == 1 {
        let mut p = SchedulingPolicy::new(vec![1.0]);
        if let Variant::Diversity { n_subcarriers } = config.variant {
            p = SchedulingPolicy::with_subcarriers(vec![1.0], uniform_subcarrier(n_subcarriers));
        }
        return Ok(p);
    }

    let objective = SimplexObjective::new(config, sigma);
    let mut policy = SchedulingPolicy::uniform(config);
    let mut value = objective.value(&policy);
    let mut step = 0.25;

    for _ in 0..OPTIMIZER_MAX_ITERS {
        let (gp, gq) = objective.gradient(&policy);
        let gmax = gp
            .iter()
            .chain(gq.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
            .max(1e-300);
        let mut accepted = None;
        let mut trial = step;
        while trial >= 1e-14 {
            let user_pmf = multiplicative_step(&policy.user_pmf, &gp, trial / gmax, 1.0);
            let candidate = match (&policy.subcarrier_pmf, gq.is_empty()) {
                (Some(q), false) => SchedulingPolicy::with_subcarriers(
                    user_pmf,
                    multiplicative_step(q, &gq, trial / gmax, 1.0),
                ),
                _ => SchedulingPolicy::new(user_pmf),
            };
            let v = objective.value(&candidate);
            if v <= value {
                accepted = Some((candidate, v, trial));
                break;
            }
            trial *= 0.5;
        }
        let Some((candidate, v, used)) = accepted else {
            // No descent direction at float resolution: converged.
            return Ok(policy);
        };
        let drop = value - v;
        policy = candidate;
        value = v;
        step = (used * 2.0).min(8.0);
        if drop < tol {
            return Ok(policy);
        }
    }
    Err(Error::NoConvergence {
        iterations: OPTIMIZER_MAX_ITERS,
        objective: value,
        best: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{make_cbs, Placement};

    #[test]
    fn closed_form_vs_cbs_examples() {
        let p = optimal_policy_vs_cbs(3, 0.44, 0).unwrap();
        assert!((p.user_pmf[0] - 0.375).abs() < 1e-12);
        assert!((p.user_pmf[1] - 0.3125).abs() < 1e-12);
        assert!((p.user_pmf[2] - 0.3125).abs() < 1e-12);
        assert!((p.user_pmf.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let p2 = optimal_policy_vs_cbs(2, 0.44, 0).unwrap();
        assert!((p2.user_pmf[0] - 1.2 / 2.2).abs() < 1e-12);

        let near_uniform = optimal_policy_vs_cbs(4, 1e-14, 1).unwrap();
        for &v in &near_uniform.user_pmf {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_orders_blocked_user_first() {
        let p = optimal_policy_vs_cbs(5, 0.3, 2).unwrap();
        for (i, &v) in p.user_pmf.iter().enumerate() {
            if i != 2 {
                assert!(p.user_pmf[2] > v);
            }
        }
    }

    #[test]
    fn closed_form_kkt_stationarity() {
        for &(n, alpha) in &[(2usize, 0.1), (3, 0.44), (5, 0.8)] {
            let p = optimal_policy_vs_cbs(n, alpha, 0).unwrap();
            let lambda = (1.0 + alpha) / (p.user_pmf[0] * p.user_pmf[0]);
            for &pj in &p.user_pmf[1..] {
                let lj = 1.0 / (pj * pj);
                assert!(((lambda - lj) / lambda).abs() < 1e-9, "N={} alpha={}", n, alpha);
            }
        }
    }

    #[test]
    fn general_k_reduces_to_single_user_form() {
        let a = optimal_policy_general_k(3, 1, 0.44, 0).unwrap();
        let b = optimal_policy_vs_cbs(3, 0.44, 0).unwrap();
        for (x, y) in a.user_pmf.iter().zip(&b.user_pmf) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn general_k_example_values() {
        let p = optimal_policy_general_k(3, 2, 0.44, 0).unwrap();
        assert!((p.user_pmf[0] - 0.75).abs() < 1e-12);
        assert!((p.user_pmf[1] - 0.625).abs() < 1e-12);
        assert!((p.user_pmf.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // Stationarity: (1 + alpha) / p_1^2 == 1 / p_j^2.
        let l1: f64 = 1.44 / (0.75 * 0.75);
        let lj: f64 = 1.0 / (0.625 * 0.625);
        assert!(((l1 - lj) / l1).abs() < 1e-12);
    }

    #[test]
    fn general_k_full_service_and_infeasibility() {
        let full = optimal_policy_general_k(3, 3, 0.44, 0).unwrap();
        assert_eq!(full.user_pmf, vec![1.0, 1.0, 1.0]);
        assert!(matches!(
            optimal_policy_general_k(5, 4, 0.8, 0),
            Err(Error::InfeasibleMarginals(_))
        ));
    }

    #[test]
    fn marginal_examples() {
        let uniform = marginals_from_group_pmf(3, 2, &[1.0 / 3.0; 3]).unwrap();
        for &m in &uniform {
            assert!((m - 2.0 / 3.0).abs() < 1e-12);
        }
        let point = marginals_from_group_pmf(3, 2, &[0.0, 1.0, 0.0]).unwrap();
        // Lexicographic pairs of {1,2,3}: {1,2}, {1,3}, {2,3}.
        assert_eq!(point, vec![1.0, 0.0, 1.0]);
        assert!(marginals_from_group_pmf(3, 2, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn decomposition_round_trips_marginals() {
        let marginals = vec![0.9, 0.7, 0.25, 0.15];
        let parts = decompose_marginals(&marginals, 2).unwrap();
        let total: f64 = parts.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut back = [0.0; 4];
        for (subset, w) in &parts {
            assert_eq!(subset.len(), 2);
            for &i in subset {
                back[i] += w;
            }
        }
        for (a, b) in back.iter().zip(&marginals) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn decomposition_rejects_bad_mass() {
        assert!(decompose_marginals(&[0.5, 0.4], 2).is_err());
        assert!(decompose_marginals(&[1.4, 0.6], 2).is_err());
    }

    #[test]
    fn numeric_unblocked_is_uniform() {
        let c = SystemConfig::new(3, 200, 0.2, Variant::NoDiversity);
        let p = numeric_best_policy(&c, &BlockingMatrix::empty(200), None).unwrap();
        for &v in &p.user_pmf {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn numeric_single_user_is_degenerate() {
        let c = SystemConfig::new(1, 50, 0.2, Variant::NoDiversity);
        let p = numeric_best_policy(&c, &BlockingMatrix::empty(50), None).unwrap();
        assert_eq!(p.user_pmf, vec![1.0]);
    }

    #[test]
    fn numeric_tracks_closed_form_on_small_instance() {
        let c = SystemConfig::new(2, 2000, 0.44, Variant::NoDiversity);
        let sigma = make_cbs(&c, 0, c.budget, Placement::Centered).unwrap();
        let numeric = numeric_best_policy(&c, &sigma, None).unwrap();
        let closed = optimal_policy_vs_cbs(2, 0.44, 0).unwrap();
        for (a, b) in numeric.user_pmf.iter().zip(&closed.user_pmf) {
            assert!((a - b).abs() < 5e-3, "numeric {:?} closed {:?}", numeric, closed);
        }
    }

    #[test]
    fn uniform_helpers() {
        let c = SystemConfig::new(4, 10, 0.2, Variant::NoDiversity);
        assert_eq!(stackelberg_leader_policy(&c).user_pmf, vec![0.25; 4]);
        let c1 = SystemConfig::new(1, 10, 0.2, Variant::NoDiversity);
        assert_eq!(stackelberg_leader_policy(&c1).user_pmf, vec![1.0]);
        assert_eq!(uniform_subcarrier(3), vec![1.0 / 3.0; 3]);
    }
}
