//! Game configuration, strategy containers, and feasibility validation.
//!
//! Conventions: users, sub-carriers, and slots are 0-based throughout the
//! Rust API and 1-based in every external file format and diagnostic
//! message. The adversary's per-slot jam limit is 1 except in the multi-user
//! variant, where it is `k_a`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which flavor of the scheduling game is being played.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Variant {
    /// One user scheduled per slot; the adversary jams one user's channel.
    NoDiversity,
    /// The update travels on one of `n_subcarriers` sub-carriers; the
    /// adversary jams sub-carriers instead of users.
    Diversity { n_subcarriers: usize },
    /// The station serves `k` users at once and the adversary may jam up to
    /// `k_a` channels per slot.
    GeneralK { k: usize, k_a: usize },
}

/// How reported slot ages line up with the underlying recursion.
///
/// `Standard` evaluates the literal recursion: slot 1 holds age 1 and slot
/// `t` holds the age produced by the first `t - 1` slot actions. `Shifted`
/// moves every value one slot earlier, so slot `t` holds the age the
/// standard recursion would assign to slot `t + 1`; the initial age of 1
/// drops out of the report and the action in the final slot counts. Under
/// `Shifted` the horizon average is a symmetric function of the blocking
/// positions, which is the convention the structural results are exact in;
/// the two objectives differ by O(max age / T).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeIndexing {
    #[default]
    Shifted,
    Standard,
}

/// Aggregated outcome of a feasibility check: empty means valid.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationOutcome {
    violations: Vec<String>,
}

impl ValidationOutcome {
    pub fn ok() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Convenience for callers that want a hard error instead of a report.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Invalid(self.violations.join("; ")))
        }
    }
}

fn file_default_indexing() -> AgeIndexing {
    AgeIndexing::default()
}

/// On-disk shape of [`SystemConfig`]; the jam budget is derived, not stored.
#[derive(Serialize, Deserialize)]
struct ConfigFile {
    n_users: usize,
    horizon: usize,
    alpha: f64,
    variant: Variant,
    #[serde(default = "file_default_indexing")]
    age_indexing: AgeIndexing,
}

/// Immutable description of one game instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConfigFile", from = "ConfigFile")]
pub struct SystemConfig {
    /// Number of users served by the station (N).
    pub n_users: usize,
    /// Number of slots in the horizon (T).
    pub horizon: usize,
    /// Fraction of the horizon the adversary may jam, in (0, 1).
    pub alpha: f64,
    /// Total jammable (target, slot) pairs: floor(alpha * horizon).
    /// Flooring keeps the budget feasible when alpha * horizon is not an
    /// integer; `alpha` itself is kept for closed-form expressions.
    pub budget: usize,
    pub variant: Variant,
    pub age_indexing: AgeIndexing,
}

impl From<ConfigFile> for SystemConfig {
    fn from(f: ConfigFile) -> Self {
        SystemConfig::new(f.n_users, f.horizon, f.alpha, f.variant).with_indexing(f.age_indexing)
    }
}

impl From<SystemConfig> for ConfigFile {
    fn from(c: SystemConfig) -> Self {
        ConfigFile {
            n_users: c.n_users,
            horizon: c.horizon,
            alpha: c.alpha,
            variant: c.variant,
            age_indexing: c.age_indexing,
        }
    }
}

impl SystemConfig {
    /// Builds a configuration with the jam budget derived from `alpha`.
    pub fn new(n_users: usize, horizon: usize, alpha: f64, variant: Variant) -> Self {
        let budget = if alpha > 0.0 {
            (alpha * horizon as f64).floor() as usize
        } else {
            0
        };
        SystemConfig {
            n_users,
            horizon,
            alpha,
            budget,
            variant,
            age_indexing: AgeIndexing::default(),
        }
    }

    pub fn with_indexing(mut self, indexing: AgeIndexing) -> Self {
        self.age_indexing = indexing;
        self
    }

    /// Maximum number of targets the adversary may jam in one slot.
    pub fn per_slot_jam_limit(&self) -> usize {
        match self.variant {
            Variant::NoDiversity | Variant::Diversity { .. } => 1,
            Variant::GeneralK { k_a, .. } => k_a,
        }
    }

    /// Number of distinct jammable targets: users, or sub-carriers under
    /// diversity.
    pub fn n_targets(&self) -> usize {
        match self.variant {
            Variant::NoDiversity | Variant::GeneralK { .. } => self.n_users,
            Variant::Diversity { n_subcarriers } => n_subcarriers,
        }
    }

    /// Number of users the station schedules per slot.
    pub fn users_per_slot(&self) -> usize {
        match self.variant {
            Variant::NoDiversity | Variant::Diversity { .. } => 1,
            Variant::GeneralK { k, .. } => k,
        }
    }

    /// Checks every configuration invariant; violations are the payload.
    pub fn validate(&self) -> ValidationOutcome {
        let mut out = ValidationOutcome::ok();
        if self.n_users == 0 {
            out.push("n_users must be positive");
        }
        if self.horizon == 0 {
            out.push("horizon must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            out.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let cap = self.horizon * self.per_slot_jam_limit();
        if self.budget < 1 {
            out.push("budget must be at least 1 (alpha * horizon floors to 0)");
        }
        if self.budget > cap {
            out.push(format!(
                "budget exceeds horizon x per-slot limit ({} > {})",
                self.budget, cap
            ));
        }
        match self.variant {
            Variant::NoDiversity => {}
            Variant::Diversity { n_subcarriers } => {
                if n_subcarriers < 2 {
                    out.push("diversity requires at least 2 sub-carriers");
                }
            }
            Variant::GeneralK { k, k_a } => {
                if k < 1 || k > self.n_users {
                    out.push(format!("k = {} must satisfy 1 <= k <= N = {}", k, self.n_users));
                }
                if k_a < 1 || k_a > self.n_users {
                    out.push(format!(
                        "k_a = {} must satisfy 1 <= k_a <= N = {}",
                        k_a, self.n_users
                    ));
                }
            }
        }
        out
    }
}

/// Stationary randomized strategy of the station.
///
/// `user_pmf` holds one probability per user; in the multi-user variant
/// these are marginal inclusion probabilities summing to `k` instead of 1.
/// `subcarrier_pmf` is present exactly in the diversity variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyFile", from = "PolicyFile")]
pub struct SchedulingPolicy {
    pub user_pmf: Vec<f64>,
    pub subcarrier_pmf: Option<Vec<f64>>,
}

/// Policies serialize as a bare probability array; the diversity variant
/// needs both distributions and uses the object form.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    WithSubcarriers {
        user_pmf: Vec<f64>,
        subcarrier_pmf: Vec<f64>,
    },
    Bare(Vec<f64>),
}

impl From<PolicyFile> for SchedulingPolicy {
    fn from(f: PolicyFile) -> Self {
        match f {
            PolicyFile::Bare(user_pmf) => SchedulingPolicy {
                user_pmf,
                subcarrier_pmf: None,
            },
            PolicyFile::WithSubcarriers {
                user_pmf,
                subcarrier_pmf,
            } => SchedulingPolicy {
                user_pmf,
                subcarrier_pmf: Some(subcarrier_pmf),
            },
        }
    }
}

impl From<SchedulingPolicy> for PolicyFile {
    fn from(p: SchedulingPolicy) -> Self {
        match p.subcarrier_pmf {
            None => PolicyFile::Bare(p.user_pmf),
            Some(q) => PolicyFile::WithSubcarriers {
                user_pmf: p.user_pmf,
                subcarrier_pmf: q,
            },
        }
    }
}

/// Absolute tolerance for probability-mass sums.
pub const PMF_SUM_TOL: f64 = 1e-12;

impl SchedulingPolicy {
    pub fn new(user_pmf: Vec<f64>) -> Self {
        SchedulingPolicy {
            user_pmf,
            subcarrier_pmf: None,
        }
    }

    pub fn with_subcarriers(user_pmf: Vec<f64>, subcarrier_pmf: Vec<f64>) -> Self {
        SchedulingPolicy {
            user_pmf,
            subcarrier_pmf: Some(subcarrier_pmf),
        }
    }

    /// Uniform user pmf, with a uniform sub-carrier pmf when the variant
    /// calls for one.
    pub fn uniform(config: &SystemConfig) -> Self {
        let n = config.n_users;
        match config.variant {
            Variant::NoDiversity => SchedulingPolicy::new(vec![1.0 / n as f64; n]),
            Variant::Diversity { n_subcarriers } => SchedulingPolicy::with_subcarriers(
                vec![1.0 / n as f64; n],
                vec![1.0 / n_subcarriers as f64; n_subcarriers],
            ),
            Variant::GeneralK { k, .. } => {
                SchedulingPolicy::new(vec![k as f64 / n as f64; n])
            }
        }
    }

    /// Required sum of `user_pmf` under `config`: 1, or `k` for the
    /// multi-user variant.
    pub fn required_user_mass(config: &SystemConfig) -> f64 {
        match config.variant {
            Variant::GeneralK { k, .. } => k as f64,
            _ => 1.0,
        }
    }

    pub fn validate(&self, config: &SystemConfig) -> ValidationOutcome {
        let mut out = ValidationOutcome::ok();
        if self.user_pmf.len() != config.n_users {
            out.push(format!(
                "user_pmf has {} entries, expected {}",
                self.user_pmf.len(),
                config.n_users
            ));
        }
        for (i, &p) in self.user_pmf.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("user_pmf[{}] = {} outside [0, 1]", i + 1, p));
            }
        }
        let mass: f64 = self.user_pmf.iter().sum();
        let want = Self::required_user_mass(config);
        if (mass - want).abs() > PMF_SUM_TOL {
            out.push(format!("user_pmf sums to {}, expected {}", mass, want));
        }
        match (config.variant, &self.subcarrier_pmf) {
            (Variant::Diversity { n_subcarriers }, Some(q)) => {
                if q.len() != n_subcarriers {
                    out.push(format!(
                        "subcarrier_pmf has {} entries, expected {}",
                        q.len(),
                        n_subcarriers
                    ));
                }
                for (j, &qj) in q.iter().enumerate() {
                    if !(0.0..=1.0).contains(&qj) {
                        out.push(format!("subcarrier_pmf[{}] = {} outside [0, 1]", j + 1, qj));
                    }
                }
                let qs: f64 = q.iter().sum();
                if (qs - 1.0).abs() > PMF_SUM_TOL {
                    out.push(format!("subcarrier_pmf sums to {}, expected 1", qs));
                }
            }
            (Variant::Diversity { .. }, None) => {
                out.push("diversity variant requires a subcarrier_pmf");
            }
            (_, Some(_)) => {
                out.push("subcarrier_pmf is only meaningful in the diversity variant");
            }
            (_, None) => {}
        }
        out
    }
}

/// One row of the blocking file: a slot and the targets jammed in it,
/// both 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockEntry {
    pub slot: usize,
    pub targets: Vec<usize>,
}

/// The adversary's schedule: for every slot, the set of jammed targets.
///
/// Targets index users (or sub-carriers under diversity). `Ord` compares the
/// per-slot target sets slot by slot, which is the canonical order used for
/// deterministic tie-breaking in searches.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BlockingMatrix {
    blocked: Vec<BTreeSet<usize>>,
}

impl BlockingMatrix {
    pub fn empty(horizon: usize) -> Self {
        BlockingMatrix {
            blocked: vec![BTreeSet::new(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.blocked.len()
    }

    /// Marks `target` as jammed in `slot` (0-based); idempotent.
    pub fn block(&mut self, slot: usize, target: usize) {
        self.blocked[slot].insert(target);
    }

    pub fn unblock(&mut self, slot: usize, target: usize) {
        self.blocked[slot].remove(&target);
    }

    pub fn is_blocked(&self, slot: usize, target: usize) -> bool {
        self.blocked[slot].contains(&target)
    }

    pub fn blocked_in_slot(&self, slot: usize) -> &BTreeSet<usize> {
        &self.blocked[slot]
    }

    pub fn total_blocked(&self) -> usize {
        self.blocked.iter().map(|s| s.len()).sum()
    }

    /// All jammed (slot, target) pairs in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .flat_map(|(t, set)| set.iter().map(move |&u| (t, u)))
    }

    pub fn validate(&self, config: &SystemConfig) -> ValidationOutcome {
        let mut out = ValidationOutcome::ok();
        if self.horizon() != config.horizon {
            out.push(format!(
                "blocking matrix covers {} slots, expected {}",
                self.horizon(),
                config.horizon
            ));
        }
        if self.total_blocked() > config.budget {
            out.push(format!(
                "budget exceeded: {} blocked pairs > budget {}",
                self.total_blocked(),
                config.budget
            ));
        }
        let limit = config.per_slot_jam_limit();
        let n_targets = config.n_targets();
        for (t, set) in self.blocked.iter().enumerate() {
            if set.len() > limit {
                out.push(format!(
                    "per-slot limit exceeded in slot {}: {} targets > {}",
                    t + 1,
                    set.len(),
                    limit
                ));
            }
            if let Some(&bad) = set.iter().find(|&&u| u >= n_targets) {
                out.push(format!(
                    "slot {} jams target {} but only {} targets exist",
                    t + 1,
                    bad + 1,
                    n_targets
                ));
            }
        }
        out
    }

    /// File-format rows, one per slot, 1-based.
    pub fn to_entries(&self) -> Vec<BlockEntry> {
        self.blocked
            .iter()
            .enumerate()
            .map(|(t, set)| BlockEntry {
                slot: t + 1,
                targets: set.iter().map(|&u| u + 1).collect(),
            })
            .collect()
    }

    /// Rebuilds a matrix over `horizon` slots from file rows. Slots absent
    /// from `entries` stay unblocked; slot/target indices are 1-based.
    pub fn from_entries(entries: &[BlockEntry], horizon: usize) -> Result<Self> {
        let mut m = BlockingMatrix::empty(horizon);
        for e in entries {
            if e.slot == 0 || e.slot > horizon {
                return Err(Error::OutOfRange(format!(
                    "slot {} outside 1..={}",
                    e.slot, horizon
                )));
            }
            for &u in &e.targets {
                if u == 0 {
                    return Err(Error::OutOfRange("target indices are 1-based".into()));
                }
                m.block(e.slot - 1, u - 1);
            }
        }
        Ok(m)
    }
}

/// On-disk shape of [`CbsSpec`], 1-based.
#[derive(Serialize, Deserialize)]
struct CbsFile {
    target: usize,
    start: usize,
    length: usize,
}

/// A single consecutive run of jammed slots on one target.
///
/// `start` is 0-based in the API; a `length` of 0 denotes the empty run
/// (used when the budget floors to zero) and fails validation for external
/// inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "CbsFile", from = "CbsFile")]
pub struct CbsSpec {
    pub target: usize,
    pub start: usize,
    pub length: usize,
}

impl From<CbsFile> for CbsSpec {
    fn from(f: CbsFile) -> Self {
        CbsSpec {
            target: f.target.saturating_sub(1),
            start: f.start.saturating_sub(1),
            length: f.length,
        }
    }
}

impl From<CbsSpec> for CbsFile {
    fn from(c: CbsSpec) -> Self {
        CbsFile {
            target: c.target + 1,
            start: c.start + 1,
            length: c.length,
        }
    }
}

impl CbsSpec {
    /// Free slots to the left of the run.
    pub fn left_free(&self) -> usize {
        self.start
    }

    /// Free slots to the right of the run.
    pub fn right_free(&self, horizon: usize) -> usize {
        horizon - self.start - self.length
    }

    pub fn to_blocking(&self, horizon: usize) -> Result<BlockingMatrix> {
        if self.start + self.length > horizon {
            return Err(Error::InfeasiblePlacement(format!(
                "run of {} slots starting at slot {} leaves horizon {}",
                self.length,
                self.start + 1,
                horizon
            )));
        }
        let mut m = BlockingMatrix::empty(horizon);
        for t in self.start..self.start + self.length {
            m.block(t, self.target);
        }
        Ok(m)
    }

    pub fn validate(&self, config: &SystemConfig) -> ValidationOutcome {
        let mut out = ValidationOutcome::ok();
        if self.length == 0 {
            out.push("run length must be positive");
        }
        if self.length > config.budget {
            out.push(format!(
                "run length {} exceeds budget {}",
                self.length, config.budget
            ));
        }
        if self.start + self.length > config.horizon {
            out.push(format!(
                "run [{}..{}] leaves horizon {}",
                self.start + 1,
                self.start + self.length,
                config.horizon
            ));
        }
        if self.target >= config.n_targets() {
            out.push(format!(
                "target {} outside 1..={}",
                self.target + 1,
                config.n_targets()
            ));
        }
        out
    }
}
