//! Optimal PRB assignment.
//!
//! Every user gets exactly one (base station, PRB) slot and no slot is
//! shared. A user on PRB `n` at base station `b` is interfered with by every
//! user holding PRB `n` at another base station:
//!
//! ```text
//! T_k = Q[k,n,b] / (sum_{m on (w,n), w != b} Q[m,n,b] + noise)
//! ```
//!
//! Two objectives are supported. WSRMax maximizes `sum_k UP_k * T_k`. PF
//! maximizes `sum_k ln T_k`; with prioritization on, outpatients leave the log
//! sum and contribute `UP_k * T_k` instead. The log can be replaced by the
//! lower envelope of tangent lines to mirror the linearized MILP.
//!
//! [`solve_exact`] runs a depth-first branch and bound over users in id order.
//! Interference only ever lowers a SINR, so a user's SINR given the users
//! already placed is an upper bound on its final value; when the remaining
//! users exactly fill the remaining slots every free co-channel slot will be
//! occupied, which tightens the bound by the weakest possible interferer.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::channel::{PowerMap, Scenario};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SolverError {
    #[error("user {0} has no slot")]
    Unassigned(usize),
    #[error("infeasible instance: {users} users but only {slots} slots")]
    Infeasible { users: usize, slots: usize },
    #[error("PF undefined at zero SINR")]
    PfUndefined,
    #[error("piecewise log mode needs a PwlSpec")]
    MissingPwl,
    #[error("invalid piecewise spec: {0}")]
    InvalidPwl(String),
    #[error("lambda {lambda} violates the big-M slack (largest SINR is {max_t})")]
    LambdaTooSmall { lambda: f64, max_t: f64 },
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl SolverError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolverError::Infeasible { .. } | SolverError::PfUndefined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    WsrMax,
    Pf,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wsrmax" => Ok(Objective::WsrMax),
            "pf" => Ok(Objective::Pf),
            other => Err(format!("unknown objective `{other}` (expected wsrmax or pf)")),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::WsrMax => "wsrmax",
            Objective::Pf => "pf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfLogMode {
    #[default]
    ExactLog,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Search {
    Exhaustive,
    #[default]
    BranchAndBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub slope: f64,
    pub intercept: f64,
}

/// Tangent-line envelope of `ln`. Each segment touches `ln` at its tangent
/// point `s0`: slope `1 / s0`, intercept `ln s0 - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlSpec {
    pub tangent_points: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl PwlSpec {
    pub fn from_tangents(points: &[f64]) -> Result<Self, SolverError> {
        if points.is_empty() {
            return Err(SolverError::InvalidPwl("no tangent points".into()));
        }
        let mut pts = points.to_vec();
        if let Some(bad) = pts.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(SolverError::InvalidPwl(format!("tangent point {bad} is not positive")));
        }
        pts.sort_by(f64::total_cmp);
        if pts.windows(2).any(|w| w[0] == w[1]) {
            return Err(SolverError::InvalidPwl("duplicate tangent points".into()));
        }
        let segments = pts
            .iter()
            .map(|&s0| Segment {
                slope: 1.0 / s0,
                intercept: s0.ln() - 1.0,
            })
            .collect();
        Ok(Self {
            tangent_points: pts,
            segments,
        })
    }

    /// `count` tangent points spaced geometrically over `[lo, hi]`.
    pub fn geometric(count: usize, lo: f64, hi: f64) -> Result<Self, SolverError> {
        if count == 0 || !(lo > 0.0 && hi > lo) {
            return Err(SolverError::InvalidPwl(format!(
                "need count > 0 and 0 < lo < hi, got {count}, [{lo}, {hi}]"
            )));
        }
        let pts: Vec<f64> = if count == 1 {
            vec![lo]
        } else {
            let ratio = (hi / lo).ln() / (count - 1) as f64;
            (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
        };
        Self::from_tangents(&pts)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.segments
            .iter()
            .map(|seg| seg.slope * s + seg.intercept)
            .fold(f64::INFINITY, f64::min)
    }
}

impl Default for PwlSpec {
    /// Ten tangents over [0.1, 20].
    fn default() -> Self {
        Self::geometric(10, 0.1, 20.0).expect("valid default range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub objective: Objective,
    pub prioritization: bool,
    #[serde(default)]
    pub pf_log_mode: PfLogMode,
    #[serde(default)]
    pub pwl: Option<PwlSpec>,
    #[serde(default)]
    pub search: Search,
}

impl SolverConfig {
    pub fn new(objective: Objective, prioritization: bool) -> Self {
        Self {
            objective,
            prioritization,
            pf_log_mode: PfLogMode::ExactLog,
            pwl: None,
            search: Search::BranchAndBound,
        }
    }

    pub fn piecewise(mut self, pwl: PwlSpec) -> Self {
        self.pf_log_mode = PfLogMode::Piecewise;
        self.pwl = Some(pwl);
        self
    }

    pub fn with_search(mut self, search: Search) -> Self {
        self.search = search;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.pf_log_mode == PfLogMode::Piecewise && self.pwl.is_none() {
            return Err(SolverError::MissingPwl);
        }
        Ok(())
    }

    /// The log model used for PF terms.
    fn log_fn(&self) -> Result<LogModel<'_>, SolverError> {
        match self.pf_log_mode {
            PfLogMode::ExactLog => Ok(LogModel::Exact),
            PfLogMode::Piecewise => self
                .pwl
                .as_ref()
                .map(LogModel::Piecewise)
                .ok_or(SolverError::MissingPwl),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum LogModel<'a> {
    Exact,
    Piecewise(&'a PwlSpec),
}

impl LogModel<'_> {
    /// Log term of a user that must be served; `-inf` marks an infeasible SINR.
    #[inline]
    fn eval(self, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self {
            LogModel::Exact => s.ln(),
            LogModel::Piecewise(p) => p.eval(s),
        }
    }
}

/// A (base station, PRB) pair. Orders by base station first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub bs: usize,
    pub prb: usize,
}

impl Slot {
    pub fn new(bs: usize, prb: usize) -> Self {
        Self { bs, prb }
    }
}

/// Slot of every user; `None` while a user is still unserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    slots: Vec<Option<Slot>>,
}

impl Assignment {
    pub fn empty(num_users: usize) -> Self {
        Self {
            slots: vec![None; num_users],
        }
    }

    pub fn from_slots(slots: Vec<Slot>) -> Self {
        Self {
            slots: slots.into_iter().map(Some).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, user: usize) -> Option<Slot> {
        self.slots.get(user).copied().flatten()
    }

    pub fn set(&mut self, user: usize, slot: Slot) {
        self.slots[user] = Some(slot);
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Option<Slot>)> + '_ {
        self.slots.iter().copied().enumerate()
    }

    /// Occupant of every slot, indexed `bs * prbs_per_bs + prb`.
    pub fn occupancy(&self, num_bs: usize, prbs_per_bs: usize) -> Vec<Option<usize>> {
        let mut owner = vec![None; num_bs * prbs_per_bs];
        for (k, s) in self.iter() {
            if let Some(s) = s {
                if s.bs < num_bs && s.prb < prbs_per_bs {
                    owner[s.bs * prbs_per_bs + s.prb] = Some(k);
                }
            }
        }
        owner
    }

    /// Checks the single-PRB, no-sharing and power-cap rules.
    pub fn validate(
        &self,
        num_bs: usize,
        prbs_per_bs: usize,
        max_prbs_per_connection: usize,
    ) -> Result<(), SolverError> {
        let mut seen = vec![false; num_bs * prbs_per_bs];
        for (k, s) in self.iter() {
            let s = s.ok_or(SolverError::Unassigned(k))?;
            if s.bs >= num_bs || s.prb >= prbs_per_bs {
                return Err(SolverError::InvalidAssignment(format!(
                    "user {k} on out-of-range slot {s:?}"
                )));
            }
            let idx = s.bs * prbs_per_bs + s.prb;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(SolverError::InvalidAssignment(format!("slot {s:?} shared")));
            }
        }
        // One PRB per user, so the per-connection cap only bites if it admits none.
        if max_prbs_per_connection < 1 {
            return Err(SolverError::InvalidAssignment(
                "power cap admits no PRB per connection".into(),
            ));
        }
        Ok(())
    }
}

/// Per-user weights as the objective sees them.
///
/// With prioritization off everyone weighs 1 and nobody is treated as an
/// outpatient, which turns the PF objective into a plain log sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub up: Vec<f64>,
    pub outpatient: Vec<bool>,
}

impl Weights {
    pub fn uniform(num_users: usize) -> Self {
        Self {
            up: vec![1.0; num_users],
            outpatient: vec![false; num_users],
        }
    }

    pub fn from_scenario(scenario: &Scenario, prioritization: bool) -> Self {
        if !prioritization {
            return Self::uniform(scenario.num_users());
        }
        let (up, outpatient) = (0..scenario.num_users())
            .map(|k| match scenario.risk_profiles.get(k) {
                Some(p) if p.is_outpatient => (p.up, true),
                _ => (1.0, false),
            })
            .unzip();
        Self { up, outpatient }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinrReport {
    pub sinr: Vec<f64>,
    /// Natural log of the SINR, `None` at zero.
    pub log_sinr: Vec<Option<f64>>,
    pub up: Vec<f64>,
    pub objective_value: f64,
}

impl SinrReport {
    pub fn mean(&self, users: &[usize]) -> Option<f64> {
        let v: Vec<f64> = users.iter().map(|&k| self.sinr[k]).collect();
        crate::metrics::mean(&v).ok()
    }

    pub fn sd(&self, users: &[usize]) -> Option<f64> {
        let v: Vec<f64> = users.iter().map(|&k| self.sinr[k]).collect();
        crate::metrics::sample_sd(&v).ok().flatten()
    }

    pub fn weighted_sum(&self) -> f64 {
        objective_wsrmax(&self.sinr, &self.up)
    }
}

/// Interference at `(bs, prb)` from the current occupants of the co-channel
/// slots, summed over base stations in ascending order.
#[inline]
pub(crate) fn co_channel_interference(
    owner: &[Option<usize>],
    q: &PowerMap,
    bs: usize,
    prb: usize,
) -> f64 {
    let n_prb = q.prbs_per_bs();
    let mut acc = 0.0;
    for w in 0..q.num_bs() {
        if w == bs {
            continue;
        }
        if let Some(m) = owner[w * n_prb + prb] {
            acc += q.q(m, prb, bs);
        }
    }
    acc
}

fn check_dims(assignment: &Assignment, q: &PowerMap) -> Result<(), SolverError> {
    if assignment.num_users() != q.num_users() {
        return Err(SolverError::Dimension(format!(
            "assignment has {} users, power map {}",
            assignment.num_users(),
            q.num_users()
        )));
    }
    Ok(())
}

pub fn sinr_of(assignment: &Assignment, q: &PowerMap, user: usize) -> Result<f64, SolverError> {
    check_dims(assignment, q)?;
    let s = assignment.slot(user).ok_or(SolverError::Unassigned(user))?;
    let owner = assignment.occupancy(q.num_bs(), q.prbs_per_bs());
    let interference = co_channel_interference(&owner, q, s.bs, s.prb);
    Ok(q.q(user, s.prb, s.bs) / (interference + q.noise_w))
}

/// SINR of every user; all must be assigned.
pub fn all_sinrs(assignment: &Assignment, q: &PowerMap) -> Result<Vec<f64>, SolverError> {
    check_dims(assignment, q)?;
    let owner = assignment.occupancy(q.num_bs(), q.prbs_per_bs());
    assignment
        .iter()
        .map(|(k, s)| {
            let s = s.ok_or(SolverError::Unassigned(k))?;
            let i = co_channel_interference(&owner, q, s.bs, s.prb);
            Ok(q.q(k, s.prb, s.bs) / (i + q.noise_w))
        })
        .collect()
}

pub fn objective_wsrmax(sinr: &[f64], up: &[f64]) -> f64 {
    sinr.iter().zip(up).map(|(s, w)| s * w).sum()
}

/// PF objective: log terms for users not flagged as outpatients, weighted
/// linear terms for outpatients.
pub fn objective_pf(sinr: &[f64], weights: &Weights, config: &SolverConfig) -> Result<f64, SolverError> {
    let log = config.log_fn()?;
    let mut acc = 0.0;
    for (k, &s) in sinr.iter().enumerate() {
        if weights.outpatient[k] {
            acc += weights.up[k] * s;
        } else {
            if !(s > 0.0) {
                return Err(SolverError::PfUndefined);
            }
            acc += log.eval(s);
        }
    }
    Ok(acc)
}

pub fn objective(sinr: &[f64], weights: &Weights, config: &SolverConfig) -> Result<f64, SolverError> {
    match config.objective {
        Objective::WsrMax => Ok(objective_wsrmax(sinr, &weights.up)),
        Objective::Pf => objective_pf(sinr, weights, config),
    }
}

pub fn evaluate(
    assignment: &Assignment,
    q: &PowerMap,
    weights: &Weights,
    config: &SolverConfig,
) -> Result<SinrReport, SolverError> {
    let sinr = all_sinrs(assignment, q)?;
    let objective_value = objective(&sinr, weights, config)?;
    Ok(SinrReport {
        log_sinr: sinr.iter().map(|&s| (s > 0.0).then(|| s.ln())).collect(),
        up: weights.up.clone(),
        sinr,
        objective_value,
    })
}

struct Searcher<'a> {
    q: &'a PowerMap,
    weights: &'a Weights,
    objective: Objective,
    log: LogModel<'a>,
    prune: bool,
    num_users: usize,
    n_prb: usize,
    n_bs: usize,
    owner: Vec<Option<usize>>,
    user_slot: Vec<usize>,
    /// Per user, slot indices by descending own received power.
    branch_order: Vec<Vec<usize>>,
    best_value: f64,
    best: Option<Vec<usize>>,
    nodes: u64,
}

impl<'a> Searcher<'a> {
    #[inline]
    fn term(&self, k: usize, s: f64) -> f64 {
        match self.objective {
            Objective::WsrMax => self.weights.up[k] * s,
            Objective::Pf if self.weights.outpatient[k] => self.weights.up[k] * s,
            Objective::Pf => self.log.eval(s),
        }
    }

    #[inline]
    fn slot_of(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_prb, idx % self.n_prb)
    }

    fn leaf_value(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.num_users {
            let (b, n) = self.slot_of(self.user_slot[k]);
            let i = co_channel_interference(&self.owner, self.q, b, n);
            acc += self.term(k, self.q.q(k, n, b) / (i + self.q.noise_w));
        }
        acc
    }

    /// Upper bound on any completion of the first `depth` users' placement.
    fn bound(&self, depth: usize) -> f64 {
        let (q, n_prb, n_bs) = (self.q, self.n_prb, self.n_bs);
        let noise = q.noise_w;
        let remaining = self.num_users - depth;
        let free = self.owner.iter().filter(|o| o.is_none()).count();
        let saturated = remaining == free;

        // Weakest and second-weakest unplaced interferer per (prb, bs).
        let mut min1 = vec![(f64::INFINITY, usize::MAX); n_prb * n_bs];
        let mut min2 = vec![f64::INFINITY; n_prb * n_bs];
        if saturated {
            for m in depth..self.num_users {
                for n in 0..n_prb {
                    for b in 0..n_bs {
                        let v = q.q(m, n, b);
                        let i = n * n_bs + b;
                        if v < min1[i].0 {
                            min2[i] = min1[i].0;
                            min1[i] = (v, m);
                        } else if v < min2[i] {
                            min2[i] = v;
                        }
                    }
                }
            }
        }
        // Lower bound on interference that free co-channel slots will add,
        // excluding `who` as a candidate interferer.
        let future = |b: usize, n: usize, who: usize| -> f64 {
            if !saturated {
                return 0.0;
            }
            let i = n * n_bs + b;
            let weakest = if min1[i].1 == who { min2[i] } else { min1[i].0 };
            if !weakest.is_finite() {
                return 0.0;
            }
            let open = (0..n_bs)
                .filter(|&w| w != b && self.owner[w * n_prb + n].is_none())
                .count();
            open as f64 * weakest
        };

        let mut total = 0.0;
        for k in 0..depth {
            let (b, n) = self.slot_of(self.user_slot[k]);
            let i = co_channel_interference(&self.owner, q, b, n) + future(b, n, usize::MAX);
            total += self.term(k, q.q(k, n, b) / (i + noise));
        }
        for k in depth..self.num_users {
            let mut best = f64::NEG_INFINITY;
            for idx in 0..self.owner.len() {
                if self.owner[idx].is_some() {
                    continue;
                }
                let (b, n) = self.slot_of(idx);
                let i = co_channel_interference(&self.owner, q, b, n) + future(b, n, k);
                best = best.max(q.q(k, n, b) / (i + noise));
            }
            total += self.term(k, best);
        }
        total
    }

    fn consider_leaf(&mut self) {
        let v = self.leaf_value();
        if v == f64::NEG_INFINITY || v.is_nan() {
            return;
        }
        let better = match &self.best {
            None => true,
            Some(best) => match v.partial_cmp(&self.best_value) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => self.user_slot < *best,
                _ => false,
            },
        };
        if better {
            self.best_value = v;
            self.best = Some(self.user_slot.clone());
        }
    }

    fn descend(&mut self, depth: usize) {
        self.nodes += 1;
        if depth == self.num_users {
            self.consider_leaf();
            return;
        }
        if self.prune && depth > 0 {
            let ub = self.bound(depth);
            if ub == f64::NEG_INFINITY {
                return;
            }
            if self.best.is_some() {
                let slack = 1e-12 * self.best_value.abs().max(1.0);
                if ub < self.best_value - slack {
                    return;
                }
            }
        }
        for i in 0..self.branch_order[depth].len() {
            let idx = self.branch_order[depth][i];
            if self.owner[idx].is_some() {
                continue;
            }
            self.owner[idx] = Some(depth);
            self.user_slot[depth] = idx;
            self.descend(depth + 1);
            self.owner[idx] = None;
        }
    }
}

/// Statistics of the last search, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub nodes: u64,
}

pub fn solve_exact(
    scenario: &Scenario,
    q: &PowerMap,
    config: &SolverConfig,
) -> Result<(Assignment, SinrReport), SolverError> {
    solve_exact_with_stats(scenario, q, config).map(|(a, r, _)| (a, r))
}

pub fn solve_exact_with_stats(
    scenario: &Scenario,
    q: &PowerMap,
    config: &SolverConfig,
) -> Result<(Assignment, SinrReport, SearchStats), SolverError> {
    let weights = Weights::from_scenario(scenario, config.prioritization);
    solve_weighted(q, &weights, config)
}

/// Exact search for explicit weights.
pub fn solve_weighted(
    q: &PowerMap,
    weights: &Weights,
    config: &SolverConfig,
) -> Result<(Assignment, SinrReport, SearchStats), SolverError> {
    config.validate()?;
    let (k_n, n_prb, n_bs) = (q.num_users(), q.prbs_per_bs(), q.num_bs());
    if weights.up.len() != k_n || weights.outpatient.len() != k_n {
        return Err(SolverError::Dimension(format!(
            "{} weights for {k_n} users",
            weights.up.len()
        )));
    }
    if k_n > n_prb * n_bs {
        return Err(SolverError::Infeasible {
            users: k_n,
            slots: n_prb * n_bs,
        });
    }
    let branch_order = (0..k_n)
        .map(|k| {
            let mut idx: Vec<usize> = (0..n_prb * n_bs).collect();
            // Stable: equal powers keep (bs, prb) order.
            idx.sort_by(|&a, &b| {
                let qa = q.q(k, a % n_prb, a / n_prb);
                let qb = q.q(k, b % n_prb, b / n_prb);
                qb.total_cmp(&qa)
            });
            idx
        })
        .collect();
    let mut s = Searcher {
        q,
        weights,
        objective: config.objective,
        log: config.log_fn()?,
        prune: config.search == Search::BranchAndBound,
        num_users: k_n,
        n_prb,
        n_bs,
        owner: vec![None; n_prb * n_bs],
        user_slot: vec![0; k_n],
        branch_order,
        best_value: f64::NEG_INFINITY,
        best: None,
        nodes: 0,
    };
    s.descend(0);
    let best = s.best.ok_or(SolverError::PfUndefined)?;
    let assignment = Assignment::from_slots(
        best.iter()
            .map(|&idx| Slot::new(idx / n_prb, idx % n_prb))
            .collect(),
    );
    let report = evaluate(&assignment, q, weights, config)?;
    Ok((assignment, report, SearchStats { nodes: s.nodes }))
}

/// Outcome of checking the big-M system against direct SINRs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationCheck {
    /// Largest `|T_lin - T_direct| / T_direct` over assigned users.
    pub max_rel_deviation: f64,
    /// SINR variables solved from the linearized rows, `[user][prb][bs]` flat.
    pub t: Vec<f64>,
    /// Number of product variables that are non-zero.
    pub active_phi: usize,
}

/// Big-M default: ten times the largest interference-free SINR.
pub fn default_lambda(q: &PowerMap) -> f64 {
    10.0 * q.values().iter().cloned().fold(0.0, f64::max) / q.noise_w
}

/// Solves the linearized SINR rows for a fixed assignment and compares them
/// with direct evaluation.
///
/// For fixed binaries, the three big-M rows pin each product variable: with
/// the interferer's indicator at 1 they force `phi = T` (and need `T <= lambda`),
/// at 0 they force `phi = 0` (and need `T - lambda <= 0`). Substituting into
/// `sum Q phi + T noise = Q X` leaves one linear equation per triple.
pub fn verify_linearization(
    assignment: &Assignment,
    q: &PowerMap,
    lambda: f64,
) -> Result<LinearizationCheck, SolverError> {
    check_dims(assignment, q)?;
    let (k_n, n_prb, n_bs) = (q.num_users(), q.prbs_per_bs(), q.num_bs());
    let x = |k: usize, n: usize, b: usize| -> f64 {
        match assignment.slot(k) {
            Some(s) if s.bs == b && s.prb == n => 1.0,
            _ => 0.0,
        }
    };
    let mut t = vec![0.0; k_n * n_prb * n_bs];
    let mut active_phi = 0;
    let mut max_t: f64 = 0.0;
    let mut violated = false;
    for k in 0..k_n {
        for n in 0..n_prb {
            for b in 0..n_bs {
                // Coefficient of T in the row once each phi is replaced by c * T.
                let mut coeff = q.noise_w;
                let mut pinned = Vec::new();
                for w in (0..n_bs).filter(|&w| w != b) {
                    for m in (0..k_n).filter(|&m| m != k) {
                        let xm = x(m, n, w);
                        coeff += q.q(m, n, b) * xm;
                        pinned.push(xm);
                    }
                }
                let tv = q.q(k, n, b) * x(k, n, b) / coeff;
                t[(k * n_prb + n) * n_bs + b] = tv;
                max_t = max_t.max(tv);
                for xm in pinned {
                    let phi = xm * tv;
                    // Rounding slack for the lambda + T - lambda cancellation.
                    let eps = 1e-12 * lambda;
                    let ok = phi >= 0.0
                        && phi <= lambda * xm
                        && phi <= tv
                        && phi >= lambda * xm + tv - lambda - eps;
                    violated |= !ok;
                    active_phi += usize::from(phi > 0.0);
                }
            }
        }
    }
    if violated {
        return Err(SolverError::LambdaTooSmall { lambda, max_t });
    }
    let direct = all_sinrs(assignment, q)?;
    let mut max_rel_deviation: f64 = 0.0;
    for (k, d) in direct.iter().enumerate() {
        let s = assignment.slot(k).ok_or(SolverError::Unassigned(k))?;
        let lin = t[(k * n_prb + s.prb) * n_bs + s.bs];
        let dev = if *d > 0.0 { (lin - d).abs() / d } else { lin.abs() };
        max_rel_deviation = max_rel_deviation.max(dev);
    }
    Ok(LinearizationCheck {
        max_rel_deviation,
        t,
        active_phi,
    })
}
