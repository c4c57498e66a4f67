//! Exact expected ages under a stationary policy and a fixed blocking
//! matrix, plus the closed-form large-horizon approximations.
//!
//! The engine walks one multiply-add per user per slot: the expected age
//! obeys `age' = age * survival + 1`, where the survival factor is the
//! probability that the user's age is not reset in that slot. Train values
//! (products of survival factors over an interval) exist only as a test
//! oracle for this recursion; materializing all O(T^2) of them would be far
//! too slow for horizons in the millions.
//!
//! Per-user recursions and sums run in double-double precision (see `dd`)
//! and are rounded once, so reorderings that are identities in exact
//! arithmetic (mirrored blocking sequences, permuted sub-carrier
//! assignments) stay identities in the reported values.

use std::io::{self, Write};

use serde::Serialize;

use crate::config::{
    AgeIndexing, BlockingMatrix, CbsSpec, SchedulingPolicy, SystemConfig, Variant,
};
use crate::dd::Dd;
use crate::error::{Error, Result};

/// Expected ages for one (policy, blocking) pair.
#[derive(Clone, Debug, Serialize)]
pub struct AgeReport {
    /// `per_slot[user][slot]`, N x T, indexed per the configured convention.
    pub per_slot: Vec<Vec<f64>>,
    /// Horizon average per user.
    pub per_user: Vec<f64>,
    /// Mean of the per-user averages, summed in user order.
    pub system_average: f64,
}

impl AgeReport {
    /// CSV with columns `slot,user,expected_age`, 1-based, slot-major.
    /// Ages print with 17 significant digits so parsing them back is
    /// lossless.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "slot,user,expected_age")?;
        let horizon = self.per_slot.first().map_or(0, Vec::len);
        for t in 0..horizon {
            for (i, row) in self.per_slot.iter().enumerate() {
                writeln!(w, "{},{},{:.16e}", t + 1, i + 1, row[t])?;
            }
        }
        Ok(())
    }

    /// Summary object `{per_user, system_average}`.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "per_user": self.per_user,
            "system_average": self.system_average,
        })
    }
}

/// One step of the age recursion: `delta * survival + 1`.
pub fn step_age(delta: f64, survival: f64) -> f64 {
    delta * survival + 1.0
}

/// Walks one user's recursion, returning the horizon average and optionally
/// the per-slot values. The arithmetic is identical whether or not slots are
/// recorded, so value-only searches agree bit-for-bit with full reports.
fn walk_user(survival: &[f64], indexing: AgeIndexing, mut per_slot: Option<&mut Vec<f64>>) -> f64 {
    let horizon = survival.len();
    let mut age = Dd::ONE;
    let mut sum = Dd::ZERO;
    match indexing {
        AgeIndexing::Standard => {
            // Slot 1 holds the initial age; the final slot's action never
            // lands inside the report.
            sum = sum.add(age);
            if let Some(out) = per_slot.as_deref_mut() {
                out.push(1.0);
            }
            for &s in &survival[..horizon - 1] {
                age = age.mul_f64(s).add_f64(1.0);
                sum = sum.add(age);
                if let Some(out) = per_slot.as_deref_mut() {
                    out.push(age.to_f64());
                }
            }
        }
        AgeIndexing::Shifted => {
            // Every value moves one slot earlier: reported slot t is what the
            // standard recursion assigns to slot t + 1, so all T actions
            // count and the initial age of 1 falls out of the report.
            for &s in survival {
                age = age.mul_f64(s).add_f64(1.0);
                sum = sum.add(age);
                if let Some(out) = per_slot.as_deref_mut() {
                    out.push(age.to_f64());
                }
            }
        }
    }
    sum.to_f64() / horizon as f64
}

/// Mean of per-user averages, summed in user order.
fn mean_over_users(per_user: &[f64]) -> f64 {
    let mut total = 0.0;
    for &v in per_user {
        total += v;
    }
    total / per_user.len() as f64
}

/// Full report from an explicit survival grid (`survival[user][slot]`).
pub(crate) fn report_from_survival(survival: &[Vec<f64>], indexing: AgeIndexing) -> AgeReport {
    let horizon = survival.first().map_or(0, Vec::len);
    let mut per_slot = Vec::with_capacity(survival.len());
    let mut per_user = Vec::with_capacity(survival.len());
    for row in survival {
        let mut slots = Vec::with_capacity(horizon);
        per_user.push(walk_user(row, indexing, Some(&mut slots)));
        per_slot.push(slots);
    }
    let system_average = mean_over_users(&per_user);
    AgeReport {
        per_slot,
        per_user,
        system_average,
    }
}

/// System average only; shares every rounding with `report_from_survival`.
pub(crate) fn value_from_survival(survival: &[Vec<f64>], indexing: AgeIndexing) -> f64 {
    let mut per_user = Vec::with_capacity(survival.len());
    for row in survival {
        per_user.push(walk_user(row, indexing, None));
    }
    mean_over_users(&per_user)
}

fn check_dimensions(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
) -> Result<()> {
    if config.horizon == 0 {
        return Err(Error::Invalid("horizon must be positive".into()));
    }
    if policy.user_pmf.len() != config.n_users {
        return Err(Error::DimensionMismatch(format!(
            "policy has {} users, config has {}",
            policy.user_pmf.len(),
            config.n_users
        )));
    }
    if let Variant::Diversity { n_subcarriers } = config.variant {
        match &policy.subcarrier_pmf {
            Some(q) if q.len() == n_subcarriers => {}
            Some(q) => {
                return Err(Error::DimensionMismatch(format!(
                    "policy has {} sub-carriers, config has {}",
                    q.len(),
                    n_subcarriers
                )))
            }
            None => {
                return Err(Error::DimensionMismatch(
                    "diversity config needs a subcarrier_pmf".into(),
                ))
            }
        }
    }
    if sigma.horizon() != config.horizon {
        return Err(Error::DimensionMismatch(format!(
            "blocking matrix covers {} slots, config horizon is {}",
            sigma.horizon(),
            config.horizon
        )));
    }
    let n_targets = config.n_targets();
    for (t, u) in sigma.pairs() {
        if u >= n_targets {
            return Err(Error::OutOfRange(format!(
                "slot {} jams target {} but only {} targets exist",
                t + 1,
                u + 1,
                n_targets
            )));
        }
    }
    Ok(())
}

/// Per-slot mass of unblocked sub-carriers: total q minus the blocked q's.
/// Written as a subtraction from the precomputed total so incremental
/// searches reproduce the same floats.
pub(crate) fn unblocked_mass(q_total: f64, q: &[f64], blocked: &std::collections::BTreeSet<usize>) -> f64 {
    let mut mass = q_total;
    for &c in blocked {
        mass -= q[c];
    }
    mass
}

/// Builds the N x T survival grid for a (config, policy, blocking) triple.
pub(crate) fn survival_grid(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
) -> Vec<Vec<f64>> {
    let n = config.n_users;
    let horizon = config.horizon;
    match config.variant {
        Variant::NoDiversity | Variant::GeneralK { .. } => {
            let mut grid = Vec::with_capacity(n);
            for i in 0..n {
                let alive = 1.0 - policy.user_pmf[i];
                let mut row = vec![alive; horizon];
                for (t, cell) in row.iter_mut().enumerate() {
                    if sigma.is_blocked(t, i) {
                        *cell = 1.0;
                    }
                }
                grid.push(row);
            }
            grid
        }
        Variant::Diversity { .. } => {
            let q = policy.subcarrier_pmf.as_ref().expect("checked by caller");
            let q_total: f64 = q.iter().sum();
            let mut mass = Vec::with_capacity(horizon);
            for t in 0..horizon {
                mass.push(unblocked_mass(q_total, q, sigma.blocked_in_slot(t)));
            }
            (0..n)
                .map(|i| {
                    let p = policy.user_pmf[i];
                    mass.iter().map(|&m| 1.0 - p * m).collect()
                })
                .collect()
        }
    }
}

/// Exact expected ages for every user and slot.
///
/// Survival factors per slot: `1 - p_i` when user `i`'s channel is open,
/// `1` when it is jammed; under diversity, `1 - p_i * (unblocked q mass)`;
/// in the multi-user variant `p_i` is the marginal inclusion probability.
pub fn exact_age(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
) -> Result<AgeReport> {
    check_dimensions(config, policy, sigma)?;
    let grid = survival_grid(config, policy, sigma);
    Ok(report_from_survival(&grid, config.age_indexing))
}

/// System average without materializing the per-slot matrix.
pub fn exact_system_average(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    sigma: &BlockingMatrix,
) -> Result<f64> {
    check_dimensions(config, policy, sigma)?;
    let grid = survival_grid(config, policy, sigma);
    Ok(value_from_survival(&grid, config.age_indexing))
}

/// An interval of slots and the product of its survival factors.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrainValue {
    /// First slot of the interval, 0-based inclusive.
    pub start: usize,
    /// Last slot of the interval, 0-based inclusive.
    pub end: usize,
    pub value: f64,
}

/// Product of survival factors over `[start, end]` for one user.
///
/// Test oracle for the recursion: under standard indexing the age at slot
/// `t + 1` minus 1 equals the sum of `train_value(l, t)` over `l = 0..=t`.
pub fn train_value(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    user: usize,
    sigma: &BlockingMatrix,
    start: usize,
    end: usize,
) -> Result<TrainValue> {
    check_dimensions(config, policy, sigma)?;
    if user >= config.n_users {
        return Err(Error::OutOfRange(format!(
            "user {} outside 1..={}",
            user + 1,
            config.n_users
        )));
    }
    if start > end || end >= config.horizon {
        return Err(Error::OutOfRange(format!(
            "train [{}, {}] outside horizon {}",
            start + 1,
            end + 1,
            config.horizon
        )));
    }
    let grid = survival_grid(config, policy, sigma);
    let value = grid[user][start..=end].iter().product();
    Ok(TrainValue { start, end, value })
}

/// Closed-form large-horizon ages.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticAge {
    pub per_user: Vec<f64>,
    pub system_average: f64,
}

/// Large-horizon approximation under a centered full-budget run on one
/// target.
///
/// Without diversity, unblocked users settle at `1/p_j` and the blocked
/// user pays `(1 + a)(1 - p)/p + a(1 + aT)/2 + 1` with `a` the exact budget
/// fraction. Under diversity the horizon splits into three stretches (open,
/// jammed sub-carrier, open again), giving `(1 - a)/p_i + a / (p_i (1 - q_c))`
/// per user. Callers are responsible for `T` being large; nothing checks it.
pub fn asymptotic_age(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    cbs: &CbsSpec,
) -> Result<AsymptoticAge> {
    if policy.user_pmf.len() != config.n_users {
        return Err(Error::DimensionMismatch(format!(
            "policy has {} users, config has {}",
            policy.user_pmf.len(),
            config.n_users
        )));
    }
    if cbs.target >= config.n_targets() {
        return Err(Error::OutOfRange(format!(
            "target {} outside 1..={}",
            cbs.target + 1,
            config.n_targets()
        )));
    }
    if let Some((i, _)) = policy
        .user_pmf
        .iter()
        .enumerate()
        .find(|(_, &p)| p <= 0.0)
    {
        return Err(Error::Invalid(format!(
            "user {} has zero scheduling probability",
            i + 1
        )));
    }
    let alpha = config.alpha;
    let horizon = config.horizon as f64;
    let per_user: Vec<f64> = match config.variant {
        Variant::NoDiversity | Variant::GeneralK { .. } => policy
            .user_pmf
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                if j == cbs.target {
                    (1.0 + alpha) * (1.0 - p) / p + alpha * (1.0 + alpha * horizon) / 2.0 + 1.0
                } else {
                    1.0 / p
                }
            })
            .collect(),
        Variant::Diversity { .. } => {
            let q = policy
                .subcarrier_pmf
                .as_ref()
                .ok_or_else(|| Error::DimensionMismatch("diversity config needs a subcarrier_pmf".into()))?;
            let q_blocked = q[cbs.target];
            if q_blocked >= 1.0 {
                return Err(Error::Invalid(
                    "blocked sub-carrier carries the entire sub-carrier mass".into(),
                ));
            }
            policy
                .user_pmf
                .iter()
                .map(|&p| (1.0 - alpha) / p + alpha / (p * (1.0 - q_blocked)))
                .collect()
        }
    };
    let system_average = mean_over_users(&per_user);
    Ok(AsymptoticAge {
        per_user,
        system_average,
    })
}
