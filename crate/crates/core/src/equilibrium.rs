//! Best-response machinery: cycling dynamics that demonstrate the absence
//! of a Nash point without diversity, the uniform-leader Stackelberg point
//! with its deviation audit, and the diversity-model Nash audit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::adversary::{centered_start, cbs_scan_best_adversary};
use crate::age::{exact_system_average, value_from_survival};
use crate::config::{BlockingMatrix, CbsSpec, SchedulingPolicy, SystemConfig, Variant};
use crate::error::{Error, Result};
use crate::policy::{numeric_best_policy, optimal_policy_vs_cbs, uniform_subcarrier};

/// Tolerance for revisit detection in the best-response dynamics.
pub const STATE_MATCH_TOL: f64 = 1e-6;

/// Tolerance below which a deviation does not count as an improvement.
pub const AUDIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    NashVerified,
    NashAbsent,
    Stackelberg,
}

fn serialize_matrix<S: Serializer>(m: &BlockingMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.to_entries().serialize(s)
}

/// The adversary side of an equilibrium candidate.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    /// A single deterministic run.
    Cbs { cbs: CbsSpec },
    /// An arbitrary deterministic matrix.
    Matrix {
        #[serde(serialize_with = "serialize_matrix")]
        matrix: BlockingMatrix,
    },
    /// Jams one uniformly random sub-carrier in each window slot
    /// (diversity candidate; the value is assignment-independent).
    UniformWindow { start: usize, length: usize },
}

/// One audited deviation. `improvement` is how much the deviation helped
/// the deviator: positive means the audit would fail at zero tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct DeviationRecord {
    pub deviator: String,
    pub description: String,
    pub value: f64,
    pub improvement: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BestResponseRound {
    pub round: usize,
    /// Adversary best response to the previous policy.
    pub cbs: CbsSpec,
    /// System average under (previous policy, cbs).
    pub value: f64,
    /// Station best response to `cbs`.
    pub policy: SchedulingPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsOutcome {
    /// The station's response repeated the previous policy.
    FixedPoint { round: usize },
    /// The response revisited the policy of `first_round` after `period`
    /// further rounds (period >= 2: no fixed point exists on the orbit).
    Cycle { first_round: usize, period: usize },
    MaxRounds,
}

#[derive(Clone, Debug, Serialize)]
pub struct BestResponseTrace {
    pub start_policy: SchedulingPolicy,
    pub rounds: Vec<BestResponseRound>,
    pub outcome: DynamicsOutcome,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "evidence", rename_all = "snake_case")]
pub enum Evidence {
    Audit { deviations: Vec<DeviationRecord> },
    Trace { trace: BestResponseTrace },
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumResult {
    pub kind: EquilibriumKind,
    pub bs_policy: SchedulingPolicy,
    pub adversary: AdversaryStrategy,
    pub value: f64,
    pub evidence: Evidence,
}

impl EquilibriumResult {
    /// Largest improvement any audited deviation achieved (0 for traces).
    pub fn worst_improvement(&self) -> f64 {
        match &self.evidence {
            Evidence::Audit { deviations } => deviations
                .iter()
                .fold(0.0f64, |m, d| m.max(d.improvement)),
            Evidence::Trace { .. } => 0.0,
        }
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Alternates the adversary's centered-run scan with the station's best
/// response (closed form against a single centered run, numeric when the
/// budget is zero), recording each round until the policy revisits an
/// earlier state or `max_rounds` elapses.
pub fn best_response_dynamics(
    config: &SystemConfig,
    start_policy: &SchedulingPolicy,
    max_rounds: usize,
) -> Result<BestResponseTrace> {
    if config.variant != Variant::NoDiversity {
        return Err(Error::Invalid(
            "best-response dynamics runs on the no-diversity variant".into(),
        ));
    }
    start_policy.validate(config).into_result()?;
    let mut policy = start_policy.clone();
    let mut history = vec![policy.user_pmf.clone()];
    let mut rounds = Vec::new();
    for round in 1..=max_rounds {
        let (cbs, value) = cbs_scan_best_adversary(config, &policy)?;
        let response = if config.n_users == 1 {
            SchedulingPolicy::new(vec![1.0])
        } else if config.budget == 0 {
            numeric_best_policy(config, &BlockingMatrix::empty(config.horizon), None)?
        } else {
            optimal_policy_vs_cbs(config.n_users, config.alpha, cbs.target)?
        };
        rounds.push(BestResponseRound {
            round,
            cbs,
            value,
            policy: response.clone(),
        });
        let revisit = history
            .iter()
            .position(|h| linf(h, &response.user_pmf) <= STATE_MATCH_TOL);
        history.push(response.user_pmf.clone());
        policy = response;
        if let Some(j) = revisit {
            let period = round - j;
            let outcome = if period == 1 {
                DynamicsOutcome::FixedPoint { round }
            } else {
                DynamicsOutcome::Cycle {
                    first_round: j,
                    period,
                }
            };
            return Ok(BestResponseTrace {
                start_policy: start_policy.clone(),
                rounds,
                outcome,
            });
        }
    }
    Ok(BestResponseTrace {
        start_policy: start_policy.clone(),
        rounds,
        outcome: DynamicsOutcome::MaxRounds,
    })
}

/// Runs the best-response dynamics from the uniform policy and wraps the
/// outcome as an equilibrium verdict: a revisited orbit of period >= 2 is
/// constructive evidence that no Nash point exists, a fixed point is one.
pub fn nash_no_diversity(config: &SystemConfig, max_rounds: usize) -> Result<EquilibriumResult> {
    let start = SchedulingPolicy::uniform(config);
    let trace = best_response_dynamics(config, &start, max_rounds)?;
    let last = trace
        .rounds
        .last()
        .ok_or_else(|| Error::Invalid("max_rounds must be at least 1".into()))?;
    let (kind, policy, cbs, value) = match trace.outcome {
        DynamicsOutcome::Cycle { .. } => (
            EquilibriumKind::NashAbsent,
            last.policy.clone(),
            last.cbs,
            last.value,
        ),
        DynamicsOutcome::FixedPoint { .. } => (
            EquilibriumKind::NashVerified,
            last.policy.clone(),
            last.cbs,
            last.value,
        ),
        DynamicsOutcome::MaxRounds => {
            return Err(Error::Invalid(format!(
                "no revisit within {} rounds; raise max_rounds",
                max_rounds
            )))
        }
    };
    Ok(EquilibriumResult {
        kind,
        bs_policy: policy,
        adversary: AdversaryStrategy::Cbs { cbs },
        value,
        evidence: Evidence::Trace { trace },
    })
}

/// Exp(1)-normalized random point on the simplex, scaled to `mass`, sorted
/// descending, and waterfilled back under the cap of 1 when `mass > 1`.
fn random_ordered_pmf(rng: &mut ChaCha8Rng, n: usize, mass: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| (-(1.0 - rng.gen::<f64>()).ln()).max(1e-12))
        .collect();
    let sum: f64 = x.iter().sum();
    for v in &mut x {
        *v *= mass / sum;
    }
    // Cap entries at 1, redistributing the excess over the uncapped ones.
    loop {
        let over: f64 = x.iter().map(|&v| (v - 1.0).max(0.0)).sum();
        if over <= 0.0 {
            break;
        }
        let free: f64 = x.iter().filter(|&&v| v < 1.0).sum();
        for v in &mut x {
            if *v >= 1.0 {
                *v = 1.0;
            } else {
                *v *= (free + over) / free;
            }
        }
    }
    x.sort_by(|a, b| b.partial_cmp(a).unwrap());
    x
}

/// Deterministically tilted ordered pmf: uniform plus a linear slope of
/// strength `eps`, normalized to `mass` and capped at 1.
fn tilted_ordered_pmf(n: usize, mass: f64, eps: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + eps * (n - 1 - i) as f64)
        .collect();
    let sum: f64 = x.iter().sum();
    for v in &mut x {
        *v *= mass / sum;
    }
    loop {
        let over: f64 = x.iter().map(|&v| (v - 1.0).max(0.0)).sum();
        if over <= 0.0 {
            break;
        }
        let free: f64 = x.iter().filter(|&&v| v < 1.0).sum();
        for v in &mut x {
            if *v >= 1.0 {
                *v = 1.0;
            } else {
                *v *= (free + over) / free;
            }
        }
    }
    x
}

/// Uniform leader, centered full-budget follower run: the committed-leader
/// point for the user-targeted variants.
///
/// The follower's scan value is the same for all targets at the uniform
/// leader; the lowest index (user 1) is reported. Evidence is a leader
/// deviation audit: ordered non-uniform policies, each answered by the
/// follower's scan, must not beat the uniform leader's cost.
pub fn stackelberg_point(
    config: &SystemConfig,
    n_deviations: usize,
    seed: u64,
) -> Result<EquilibriumResult> {
    if matches!(config.variant, Variant::Diversity { .. }) {
        return Err(Error::Invalid(
            "the Stackelberg point covers the user-targeted variants".into(),
        ));
    }
    let leader = SchedulingPolicy::uniform(config);
    let (cbs, value) = cbs_scan_best_adversary(config, &leader)?;
    let mass = SchedulingPolicy::required_user_mass(config);
    let mut deviations = Vec::new();
    if config.n_users > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tilts = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
        for d in 0..n_deviations {
            let (pmf, description) = if d < tilts.len() {
                (
                    tilted_ordered_pmf(config.n_users, mass, tilts[d]),
                    format!("tilted deviation eps={}", tilts[d]),
                )
            } else {
                (
                    random_ordered_pmf(&mut rng, config.n_users, mass),
                    format!("random ordered deviation {}", d + 1),
                )
            };
            let policy = SchedulingPolicy::new(pmf);
            let (_, dev_value) = cbs_scan_best_adversary(config, &policy)?;
            deviations.push(DeviationRecord {
                deviator: "station".into(),
                description,
                value: dev_value,
                improvement: value - dev_value,
            });
        }
    }
    Ok(EquilibriumResult {
        kind: EquilibriumKind::Stackelberg,
        bs_policy: leader,
        adversary: AdversaryStrategy::Cbs { cbs },
        value,
        evidence: Evidence::Audit { deviations },
    })
}

/// Exact value against the randomized window adversary: in each window slot
/// one uniformly random sub-carrier is jammed, so per slot the expected
/// unblocked mass is `(1 - 1/N_sub) * sum(q)` whatever `q` is.
fn randomized_window_value(
    config: &SystemConfig,
    policy: &SchedulingPolicy,
    start: usize,
    length: usize,
) -> f64 {
    let n_sub = match config.variant {
        Variant::Diversity { n_subcarriers } => n_subcarriers,
        _ => unreachable!("diversity only"),
    };
    let q_total: f64 = policy
        .subcarrier_pmf
        .as_ref()
        .map_or(1.0, |q| q.iter().sum());
    let window_mass = q_total * (1.0 - 1.0 / n_sub as f64);
    let grid: Vec<Vec<f64>> = policy
        .user_pmf
        .iter()
        .map(|&p| {
            (0..config.horizon)
                .map(|t| {
                    let mass = if t >= start && t < start + length {
                        window_mass
                    } else {
                        q_total
                    };
                    1.0 - p * mass
                })
                .collect()
        })
        .collect();
    value_from_survival(&grid, config.age_indexing)
}

fn bump_pmf(base: &[f64], coord: usize, eps: f64) -> Vec<f64> {
    let mut x = base.to_vec();
    x[coord] = (x[coord] + eps).max(0.0);
    let sum: f64 = x.iter().sum();
    for v in &mut x {
        *v /= sum;
    }
    x
}

fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| (-(1.0 - rng.gen::<f64>()).ln()).max(1e-12))
        .collect();
    let sum: f64 = x.iter().sum();
    for v in &mut x {
        *v /= sum;
    }
    x
}

/// Audits the diversity Nash candidate: uniform user and sub-carrier pmfs
/// against the centered full-budget window with uniformly assigned
/// sub-carriers.
///
/// Station deviations (in `p` and in `q`, structured bumps plus seeded
/// random pmfs) are valued against the randomized window and must not lower
/// the value below candidate - 1e-9. Adversary deviations (every single-run
/// placement, seeded split runs, per-slot sub-carrier reassignments) are
/// valued exactly and must not raise it above candidate + 1e-9. The first
/// profitable deviation is returned as an error.
pub fn verify_nash_diversity(
    config: &SystemConfig,
    n_deviations: usize,
    seed: u64,
) -> Result<EquilibriumResult> {
    let n_sub = match config.variant {
        Variant::Diversity { n_subcarriers } => n_subcarriers,
        _ => {
            return Err(Error::Invalid(
                "the Nash audit covers the diversity variant".into(),
            ))
        }
    };
    let candidate = SchedulingPolicy::with_subcarriers(
        vec![1.0 / config.n_users as f64; config.n_users],
        uniform_subcarrier(n_sub),
    );
    let length = config.budget.min(config.horizon);
    let start = centered_start(config.horizon, length);
    // Representative deterministic assignment: the value only depends on the
    // per-slot jam count, so rotating through sub-carriers stands in for the
    // uniformly random assignment.
    let mut window = BlockingMatrix::empty(config.horizon);
    for t in start..start + length {
        window.block(t, (t - start) % n_sub);
    }
    let value = exact_system_average(config, &candidate, &window)?;

    let mut deviations = Vec::new();
    let tol = AUDIT_TOL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let audit_station = |policy: SchedulingPolicy,
                             description: String,
                             deviations: &mut Vec<DeviationRecord>|
     -> Result<()> {
        let v = randomized_window_value(config, &policy, start, length);
        let improvement = value - v;
        deviations.push(DeviationRecord {
            deviator: "station".into(),
            description: description.clone(),
            value: v,
            improvement,
        });
        if improvement > tol {
            return Err(Error::AuditFailure {
                deviator: "station".into(),
                description,
                candidate_value: value,
                deviation_value: v,
            });
        }
        Ok(())
    };

    // Structured station deviations: coordinate bumps in p and q.
    let bumps = [0.01, 0.05, 0.1, -0.01, -0.05, -0.1];
    for i in 0..config.n_users {
        for &eps in &bumps {
            let p = bump_pmf(&candidate.user_pmf, i, eps);
            let policy =
                SchedulingPolicy::with_subcarriers(p, uniform_subcarrier(n_sub));
            audit_station(
                policy,
                format!("bump p[{}] by {}", i + 1, eps),
                &mut deviations,
            )?;
        }
    }
    for c in 0..n_sub {
        for &eps in &bumps {
            let q = bump_pmf(candidate.subcarrier_pmf.as_ref().unwrap(), c, eps);
            let policy = SchedulingPolicy::with_subcarriers(candidate.user_pmf.clone(), q);
            audit_station(
                policy,
                format!("bump q[{}] by {}", c + 1, eps),
                &mut deviations,
            )?;
        }
    }
    // Seeded random station deviations in (p, q) jointly.
    let structured = deviations.len();
    for d in structured..n_deviations.max(structured) {
        let p = random_pmf(&mut rng, config.n_users);
        let q = random_pmf(&mut rng, n_sub);
        audit_station(
            SchedulingPolicy::with_subcarriers(p, q),
            format!("random station deviation {}", d + 1),
            &mut deviations,
        )?;
    }

    let audit_adversary = |sigma: &BlockingMatrix,
                               description: String,
                               deviations: &mut Vec<DeviationRecord>|
     -> Result<()> {
        let v = exact_system_average(config, &candidate, sigma)?;
        let improvement = v - value;
        deviations.push(DeviationRecord {
            deviator: "adversary".into(),
            description: description.clone(),
            value: v,
            improvement,
        });
        if improvement > tol {
            return Err(Error::AuditFailure {
                deviator: "adversary".into(),
                description,
                candidate_value: value,
                deviation_value: v,
            });
        }
        Ok(())
    };

    if length > 0 {
        // Every placement of the full single run.
        for s in 0..=config.horizon - length {
            let mut m = BlockingMatrix::empty(config.horizon);
            for t in s..s + length {
                m.block(t, 0);
            }
            audit_adversary(&m, format!("single run at slot {}", s + 1), &mut deviations)?;
        }
        // Seeded split runs (two blocks, budget preserved).
        if length >= 2 {
            for d in 0..n_deviations / 4 {
                let cut = 1 + (rng.gen::<u64>() as usize) % (length - 1);
                let rest = length - cut;
                let gap_room = config.horizon - length;
                let s1 = (rng.gen::<u64>() as usize) % (gap_room + 1);
                let max_s2 = config.horizon - rest;
                let min_s2 = s1 + cut;
                if min_s2 > max_s2 {
                    continue;
                }
                let s2 = min_s2 + (rng.gen::<u64>() as usize) % (max_s2 - min_s2 + 1);
                let mut m = BlockingMatrix::empty(config.horizon);
                for t in s1..s1 + cut {
                    m.block(t, 0);
                }
                for t in s2..s2 + rest {
                    m.block(t, 1 % n_sub);
                }
                audit_adversary(
                    &m,
                    format!("split runs {} at slots {} and {} ({})", d + 1, s1 + 1, s2 + 1, cut),
                    &mut deviations,
                )?;
            }
        }
        // Per-slot sub-carrier reassignments of the candidate window: the
        // value is unchanged exactly, and never better.
        for d in 0..4 {
            let mut m = BlockingMatrix::empty(config.horizon);
            for t in start..start + length {
                m.block(t, (rng.gen::<u64>() as usize) % n_sub);
            }
            audit_adversary(&m, format!("window reassignment {}", d + 1), &mut deviations)?;
        }
    }

    Ok(EquilibriumResult {
        kind: EquilibriumKind::NashVerified,
        bs_policy: candidate,
        adversary: AdversaryStrategy::UniformWindow { start, length },
        value,
        evidence: Evidence::Audit { deviations },
    })
}
