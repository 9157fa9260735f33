//! Real-time semi-greedy PRB assignment.
//!
//! Users are admitted one at a time. For the user being served, every free
//! slot contributes one pool entry: the weakest unserved co-channel interferer
//! is paired with it (when one fits) and the resulting SINR recorded. One
//! entry is drawn uniformly from the pool; the user and its interferer take
//! their slots. With prioritization on, outpatients are admitted first in
//! descending priority and only pair with normal users.
//!
//! [`run_heuristic`] repeats this with fresh admission orders over many
//! channel realizations and averages the final SINRs.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{PowerMap, Scenario};
use crate::exact::{co_channel_interference, Assignment, Slot, SolverError, Weights};
use crate::metrics::{self, StatSummary};
use crate::seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HeuristicError {
    #[error("no free slot left for user {0}")]
    NoFreeSlot(usize),
    #[error("cannot pick from an empty pool")]
    EmptyPool,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("no power maps given")]
    NoPowerMaps,
    #[error("power map {index} does not match the scenario: {reason}")]
    Mismatch { index: usize, reason: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSelection {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub iterations: usize,
    pub prioritization: bool,
    pub seed: u64,
    #[serde(default)]
    pub pool_selection: PoolSelection,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            prioritization: false,
            seed: 0,
            pool_selection: PoolSelection::Uniform,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), HeuristicError> {
        if self.iterations == 0 {
            return Err(HeuristicError::NoIterations);
        }
        Ok(())
    }
}

/// One pool candidate for the user being served.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub slot: Slot,
    /// Paired interferer and the co-channel slot it would take.
    pub interferer: Option<(usize, Slot)>,
    pub sinr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub serve_order: Vec<usize>,
    pub assignment: Assignment,
    /// SINR each user saw when it took its slot.
    pub sinr_at_assignment: Vec<f64>,
    /// SINR on the completed assignment; these are the reported values.
    pub final_sinr: Vec<f64>,
    /// Pool length at each admission step, in step order.
    pub pool_sizes: Vec<usize>,
    /// True for users placed as someone else's interferer.
    pub placed_as_interferer: Vec<bool>,
}

/// Admission order. With prioritization on: outpatients by descending
/// priority (ties by id), then normal users shuffled. Otherwise a uniform
/// shuffle of everyone.
pub fn serve_order<R: Rng + ?Sized>(
    num_users: usize,
    weights: &Weights,
    prioritization: bool,
    rng: &mut R,
) -> Vec<usize> {
    if !prioritization {
        let mut all: Vec<usize> = (0..num_users).collect();
        all.shuffle(rng);
        return all;
    }
    let mut ops: Vec<usize> = (0..num_users).filter(|&k| weights.outpatient[k]).collect();
    ops.sort_by(|&a, &b| weights.up[b].total_cmp(&weights.up[a]).then(a.cmp(&b)));
    let mut normal: Vec<usize> = (0..num_users).filter(|&k| !weights.outpatient[k]).collect();
    normal.shuffle(rng);
    ops.extend(normal);
    ops
}

/// Mutable admission state of one iteration.
#[derive(Debug, Clone)]
pub struct AdmissionState {
    owner: Vec<Option<usize>>,
    served: Vec<bool>,
    n_prb: usize,
    n_bs: usize,
}

impl AdmissionState {
    pub fn new(num_users: usize, prbs_per_bs: usize, num_bs: usize) -> Self {
        Self {
            owner: vec![None; prbs_per_bs * num_bs],
            served: vec![false; num_users],
            n_prb: prbs_per_bs,
            n_bs: num_bs,
        }
    }

    pub fn is_free(&self, slot: Slot) -> bool {
        self.owner[slot.bs * self.n_prb + slot.prb].is_none()
    }

    pub fn is_served(&self, user: usize) -> bool {
        self.served[user]
    }

    pub fn occupant(&self, slot: Slot) -> Option<usize> {
        self.owner[slot.bs * self.n_prb + slot.prb]
    }

    pub fn place(&mut self, user: usize, slot: Slot) {
        self.owner[slot.bs * self.n_prb + slot.prb] = Some(user);
        self.served[user] = true;
    }

    fn free_slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.n_bs)
            .flat_map(move |b| (0..self.n_prb).map(move |n| Slot::new(b, n)))
            .filter(|s| self.is_free(*s))
    }
}

/// Builds the pool of best achievable SINRs for `user`, one entry per free
/// slot. `outpatient_rules` turns on the outpatient restrictions: the user is
/// kept off PRBs that already carry an outpatient (unless no other slot is
/// free) and only pairs with normal users.
pub fn best_sinr_pool(
    user: usize,
    state: &AdmissionState,
    q: &PowerMap,
    weights: &Weights,
    outpatient_rules: bool,
) -> Result<Vec<PoolEntry>, HeuristicError> {
    let restrict = outpatient_rules && weights.outpatient[user];
    let mut free: Vec<Slot> = state.free_slots().collect();
    if free.is_empty() {
        return Err(HeuristicError::NoFreeSlot(user));
    }
    if restrict {
        let op_on = |n: usize| {
            (0..state.n_bs).any(|w| {
                state
                    .occupant(Slot::new(w, n))
                    .is_some_and(|m| weights.outpatient[m])
            })
        };
        let clear: Vec<Slot> = free.iter().copied().filter(|s| !op_on(s.prb)).collect();
        if !clear.is_empty() {
            free = clear;
        }
    }

    let mut pool = Vec::with_capacity(free.len());
    for slot in free {
        let (b, n) = (slot.bs, slot.prb);
        let existing = co_channel_interference(&state.owner, q, b, n);
        let partner_slot = (0..state.n_bs)
            .filter(|&w| w != b)
            .map(|w| Slot::new(w, n))
            .find(|s| state.is_free(*s));
        let mut interferer = None;
        if let Some(ps) = partner_slot {
            let mut best: Option<(usize, f64)> = None;
            for m in 0..q.num_users() {
                if m == user || state.is_served(m) || (restrict && weights.outpatient[m]) {
                    continue;
                }
                let v = q.q(m, n, b);
                if best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((m, v));
                }
            }
            interferer = best.map(|(m, _)| (m, ps));
        }
        let added = interferer.map_or(0.0, |(m, _)| q.q(m, n, b));
        pool.push(PoolEntry {
            slot,
            interferer,
            sinr: q.q(user, n, b) / (existing + added + q.noise_w),
        });
    }
    Ok(pool)
}

pub fn semi_greedy_pick<R: Rng + ?Sized>(
    pool: &[PoolEntry],
    selection: PoolSelection,
    rng: &mut R,
) -> Result<PoolEntry, HeuristicError> {
    if pool.is_empty() {
        return Err(HeuristicError::EmptyPool);
    }
    match selection {
        PoolSelection::Uniform => Ok(pool[rng.random_range(0..pool.len())]),
    }
}

fn check_map(scenario: &Scenario, q: &PowerMap, index: usize) -> Result<(), HeuristicError> {
    if q.num_users() != scenario.num_users() {
        return Err(HeuristicError::Mismatch {
            index,
            reason: format!("{} users vs {}", q.num_users(), scenario.num_users()),
        });
    }
    let slots = q.prbs_per_bs() * q.num_bs();
    if q.num_users() > slots {
        return Err(SolverError::Infeasible {
            users: q.num_users(),
            slots,
        }
        .into());
    }
    Ok(())
}

pub fn run_iteration<R: Rng + ?Sized>(
    scenario: &Scenario,
    q: &PowerMap,
    config: &HeuristicConfig,
    rng: &mut R,
) -> Result<IterationTrace, HeuristicError> {
    check_map(scenario, q, 0)?;
    let weights = Weights::from_scenario(scenario, config.prioritization);
    iterate(q, &weights, config, rng)
}

fn iterate<R: Rng + ?Sized>(
    q: &PowerMap,
    weights: &Weights,
    config: &HeuristicConfig,
    rng: &mut R,
) -> Result<IterationTrace, HeuristicError> {
    let k_n = q.num_users();
    let order = serve_order(k_n, weights, config.prioritization, rng);
    let mut state = AdmissionState::new(k_n, q.prbs_per_bs(), q.num_bs());
    let mut assignment = Assignment::empty(k_n);
    let mut at_assignment = vec![0.0; k_n];
    let mut as_interferer = vec![false; k_n];
    let mut pool_sizes = Vec::new();

    for &k in &order {
        if state.is_served(k) {
            continue;
        }
        let pool = best_sinr_pool(k, &state, q, weights, config.prioritization)?;
        pool_sizes.push(pool.len());
        let pick = semi_greedy_pick(&pool, config.pool_selection, rng)?;
        state.place(k, pick.slot);
        assignment.set(k, pick.slot);
        at_assignment[k] = pick.sinr;
        if let Some((m, ms)) = pick.interferer {
            state.place(m, ms);
            assignment.set(m, ms);
            as_interferer[m] = true;
            let i = co_channel_interference(&state.owner, q, ms.bs, ms.prb);
            at_assignment[m] = q.q(m, ms.prb, ms.bs) / (i + q.noise_w);
        }
    }
    debug_assert!(assignment.is_complete());
    let final_sinr = crate::exact::all_sinrs(&assignment, q)?;
    Ok(IterationTrace {
        serve_order: order,
        assignment,
        sinr_at_assignment: at_assignment,
        final_sinr,
        pool_sizes,
        placed_as_interferer: as_interferer,
    })
}

/// Averages over iterations and realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicReport {
    /// `[file][user]` mean final SINR over the iterations.
    pub per_file_means: Vec<Vec<f64>>,
    /// Per-user summary of the per-file means.
    pub per_user: Vec<StatSummary>,
    /// Mean of the per-iteration weighted sum `sum UP * SINR`, per file.
    pub per_file_objective_mean: Vec<f64>,
    /// Largest per-iteration weighted sum, per file.
    pub per_file_objective_max: Vec<f64>,
}

impl HeuristicReport {
    pub fn user_means(&self) -> Vec<f64> {
        self.per_user.iter().map(|s| s.mean).collect()
    }
}

/// Runs `config.iterations` iterations on every power map. Iteration `i` of
/// file `f` draws from the seed derived from `(config.seed, f, i)`, so the
/// parallel result equals the sequential one.
pub fn run_heuristic(
    scenario: &Scenario,
    q_files: &[PowerMap],
    config: &HeuristicConfig,
) -> Result<HeuristicReport, HeuristicError> {
    config.validate()?;
    if q_files.is_empty() {
        return Err(HeuristicError::NoPowerMaps);
    }
    for (i, q) in q_files.iter().enumerate() {
        check_map(scenario, q, i)?;
    }
    let weights = Weights::from_scenario(scenario, config.prioritization);
    let k_n = scenario.num_users();

    let per_file: Vec<(Vec<f64>, f64, f64)> = q_files
        .par_iter()
        .enumerate()
        .map(|(f, q)| {
            let mut sums = vec![0.0; k_n];
            let mut obj_sum = 0.0;
            let mut obj_max = f64::NEG_INFINITY;
            for it in 0..config.iterations {
                let mut rng = seed::rng(seed::derive_seed(config.seed, &[f as u64, it as u64]));
                let trace = iterate(q, &weights, config, &mut rng)?;
                for (s, v) in sums.iter_mut().zip(&trace.final_sinr) {
                    *s += v;
                }
                let obj = crate::exact::objective_wsrmax(&trace.final_sinr, &weights.up);
                obj_sum += obj;
                obj_max = obj_max.max(obj);
            }
            let n = config.iterations as f64;
            Ok((sums.into_iter().map(|s| s / n).collect(), obj_sum / n, obj_max))
        })
        .collect::<Result<_, HeuristicError>>()?;

    let per_user = (0..k_n)
        .map(|k| {
            let v: Vec<f64> = per_file.iter().map(|(m, _, _)| m[k]).collect();
            metrics::summarize(&v).expect("at least one file")
        })
        .collect();
    let mut report = HeuristicReport {
        per_file_means: Vec::with_capacity(per_file.len()),
        per_user,
        per_file_objective_mean: Vec::with_capacity(per_file.len()),
        per_file_objective_max: Vec::with_capacity(per_file.len()),
    };
    for (m, mean, max) in per_file {
        report.per_file_means.push(m);
        report.per_file_objective_mean.push(mean);
        report.per_file_objective_max.push(max);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_scenario, ScenarioConfig};
    use crate::risk::RiskConfig;

    fn table_scenario(seed: u64, alpha: f64) -> (Scenario, PowerMap) {
        let r = generate_scenario(&ScenarioConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let s = r
            .scenario
            .with_risk(&[0.0032, 0.0064, 0.00208], &RiskConfig::new(alpha).unwrap())
            .unwrap();
        (s, r.power)
    }

    #[test]
    fn op_prefix_follows_priority() {
        let (s, _) = table_scenario(1, 100.0);
        let w = Weights::from_scenario(&s, true);
        let order = serve_order(10, &w, true, &mut seed::rng(5));
        assert_eq!(&order[..3], &[8, 7, 9]);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn serve_order_is_reproducible() {
        let w = Weights::uniform(10);
        let a = serve_order(10, &w, false, &mut seed::rng(9));
        let b = serve_order(10, &w, false, &mut seed::rng(9));
        assert_eq!(a, b);
        assert_eq!(serve_order(1, &Weights::uniform(1), false, &mut seed::rng(0)), vec![0]);
    }

    #[test]
    fn weakest_interferer_is_chosen() {
        let q = PowerMap::from_fn(3, 1, 2, 1e-14, |k, _, b| match (k, b) {
            (1, 0) => 5e-14,
            (2, 0) => 2e-14,
            _ => 1e-13,
        })
        .unwrap();
        let state = AdmissionState::new(3, 1, 2);
        let pool = best_sinr_pool(0, &state, &q, &Weights::uniform(3), false).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[0].slot, Slot::new(0, 0));
        assert_eq!(pool[0].interferer, Some((2, Slot::new(1, 0))));
        assert_eq!(pool[0].sinr, 1e-13 / (2e-14 + 1e-14));
    }

    #[test]
    fn outpatient_with_only_outpatients_left_is_interference_free() {
        let q = PowerMap::from_fn(2, 2, 2, 1.0, |_, _, _| 3.0).unwrap();
        let w = Weights {
            up: vec![2.0, 1.5],
            outpatient: vec![true, true],
        };
        let state = AdmissionState::new(2, 2, 2);
        let pool = best_sinr_pool(0, &state, &q, &w, true).unwrap();
        assert_eq!(pool.len(), 4);
        assert!(pool.iter().all(|e| e.interferer.is_none() && e.sinr == 3.0));
    }

    #[test]
    fn pool_is_one_entry_per_free_slot() {
        let (s, q) = table_scenario(3, 500.0);
        let w = Weights::from_scenario(&s, false);
        let mut state = AdmissionState::new(10, 5, 2);
        state.place(4, Slot::new(0, 2));
        state.place(6, Slot::new(1, 2));
        state.place(1, Slot::new(1, 4));
        let pool = best_sinr_pool(0, &state, &q, &w, false).unwrap();
        assert_eq!(pool.len(), 7);
    }

    #[test]
    fn pool_entries_are_best_over_candidates() {
        // Brute force: every eligible interferer gives a SINR no better than
        // the pool entry.
        let (s, q) = table_scenario(11, 500.0);
        for pri in [false, true] {
            let w = Weights::from_scenario(&s, pri);
            let mut state = AdmissionState::new(10, 5, 2);
            state.place(2, Slot::new(0, 0));
            for user in [0, 8] {
                let pool = best_sinr_pool(user, &state, &q, &w, pri).unwrap();
                for e in &pool {
                    let (b, n) = (e.slot.bs, e.slot.prb);
                    let base = co_channel_interference(&state.owner, &q, b, n);
                    for m in 0..10 {
                        if m == user || state.is_served(m) || (pri && w.outpatient[user] && w.outpatient[m]) {
                            continue;
                        }
                        if !state.is_free(Slot::new(1 - b, n)) {
                            continue;
                        }
                        let alt = q.q(user, n, b) / (base + q.q(m, n, b) + q.noise_w);
                        assert!(alt <= e.sinr);
                    }
                }
            }
        }
    }

    #[test]
    fn singleton_pool_is_forced() {
        let e = PoolEntry {
            slot: Slot::new(1, 3),
            interferer: None,
            sinr: 2.0,
        };
        for s in 0..20 {
            assert_eq!(semi_greedy_pick(&[e], PoolSelection::Uniform, &mut seed::rng(s)).unwrap(), e);
        }
        assert_eq!(
            semi_greedy_pick(&[], PoolSelection::Uniform, &mut seed::rng(0)),
            Err(HeuristicError::EmptyPool)
        );
    }

    #[test]
    fn picks_are_uniform() {
        let pool: Vec<PoolEntry> = (0..4)
            .map(|n| PoolEntry {
                slot: Slot::new(0, n),
                interferer: None,
                sinr: n as f64,
            })
            .collect();
        let mut rng = seed::rng(2024);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[semi_greedy_pick(&pool, PoolSelection::Uniform, &mut rng).unwrap().slot.prb] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.25).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn iteration_on_table_scenario() {
        let (s, q) = table_scenario(21, 500.0);
        for pri in [false, true] {
            let cfg = HeuristicConfig {
                prioritization: pri,
                ..Default::default()
            };
            for it in 0..50 {
                let t = run_iteration(&s, &q, &cfg, &mut seed::rng(it)).unwrap();
                assert!(t.assignment.is_complete());
                t.assignment.validate(2, 5, 3).unwrap();
                let recomputed = crate::exact::all_sinrs(&t.assignment, &q).unwrap();
                assert_eq!(recomputed, t.final_sinr);
                // Later admissions only add interference.
                for k in 0..10 {
                    assert!(t.final_sinr[k] <= t.sinr_at_assignment[k] * (1.0 + 1e-12));
                }
                if pri {
                    assert_eq!(&t.serve_order[..3], &[8, 7, 9]);
                    let prbs: Vec<usize> = (7..10).map(|k| t.assignment.slot(k).unwrap().prb).collect();
                    assert!(prbs[0] != prbs[1] && prbs[1] != prbs[2] && prbs[0] != prbs[2]);
                    // Each outpatient brought a normal partner: six slots.
                    assert_eq!(t.pool_sizes[..3], [10, 8, 6]);
                }
            }
        }
    }

    #[test]
    fn single_iteration_report_is_that_iteration() {
        let (s, q) = table_scenario(4, 500.0);
        let cfg = HeuristicConfig {
            iterations: 1,
            seed: 17,
            ..Default::default()
        };
        let rep = run_heuristic(&s, std::slice::from_ref(&q), &cfg).unwrap();
        let mut rng = seed::rng(seed::derive_seed(17, &[0, 0]));
        let t = run_iteration(&s, &q, &cfg, &mut rng).unwrap();
        assert_eq!(rep.user_means(), t.final_sinr);
        assert!(rep.per_user.iter().all(|u| u.sd.is_none()));
    }

    #[test]
    fn report_is_deterministic_and_dominated() {
        let maps: Vec<PowerMap> = (0..4).map(|i| table_scenario(100 + i, 500.0).1).collect();
        let (s, _) = table_scenario(100, 500.0);
        let cfg = HeuristicConfig {
            iterations: 40,
            prioritization: true,
            seed: 3,
            ..Default::default()
        };
        let a = run_heuristic(&s, &maps, &cfg).unwrap();
        let b = run_heuristic(&s, &maps, &cfg).unwrap();
        assert_eq!(a, b);
        let exact_cfg = crate::exact::SolverConfig::new(crate::exact::Objective::WsrMax, true);
        for (f, q) in maps.iter().enumerate() {
            let (_, opt) = crate::exact::solve_exact(&s, q, &exact_cfg).unwrap();
            assert!(a.per_file_objective_max[f] <= opt.objective_value * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (s, q) = table_scenario(0, 50.0);
        let zero = HeuristicConfig {
            iterations: 0,
            ..Default::default()
        };
        assert_eq!(run_heuristic(&s, &[q], &zero), Err(HeuristicError::NoIterations));
        assert_eq!(
            run_heuristic(&s, &[], &HeuristicConfig::default()),
            Err(HeuristicError::NoPowerMaps)
        );
    }
}
