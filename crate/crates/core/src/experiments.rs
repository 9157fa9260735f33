//! Experiment runners: paired before/after comparisons, alpha sweeps,
//! heuristic scalability timing and single solves. Every runner is
//! deterministic given its master seed (timings aside) and writes its output
//! directory with atomic file writes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, PowerMap, Realization, Scenario, ScenarioConfig, ScenarioFile};
use crate::exact::{self, Objective, PwlSpec, SinrReport, SolverConfig};
use crate::fsutil::write_file;
use crate::heuristic::{self, HeuristicConfig, HeuristicReport};
use crate::lp_export;
use crate::medrecords::MedicalRecord;
use crate::metrics::{self, StatSummary, SummaryRow};
use crate::risk::{self, RiskConfig, Smoothing, DEFAULT_ALPHAS};
use crate::seed;
use crate::{Error, Result};

/// Seed path component reserved for the heuristic's iteration seeds.
const HEURISTIC_STREAM: u64 = 0x4845_5552;

/// PRBs per base station for the 1.4, 3, 5, 10, 15 and 20 MHz channels.
pub const SCALABILITY_CASES: [(f64, usize); 6] = [
    (1.4, 6),
    (3.0, 15),
    (5.0, 25),
    (10.0, 50),
    (15.0, 75),
    (20.0, 100),
];

pub const SCALABILITY_HEADER: &str = "bandwidth_mhz,prbs,users,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SingleSolve,
    AlphaSweep,
    BeforeAfter,
    Scalability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub objective: Objective,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Alpha for runs that use a single value.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub prioritization: bool,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub export_lp: bool,
    #[serde(default)]
    pub smoothing: Smoothing,
    /// Timing repeats per scalability case; the median is reported.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_realizations() -> usize {
    100
}
fn default_iterations() -> usize {
    1000
}
fn default_alpha() -> f64 {
    500.0
}
fn default_repeats() -> usize {
    3
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, objective: Objective, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            scenario: None,
            records: None,
            alphas: default_alphas(),
            realizations: default_realizations(),
            iterations: default_iterations(),
            objective,
            output_dir: output_dir.into(),
            seed: 0,
            alpha: default_alpha(),
            prioritization: false,
            solver: SolverKind::Exact,
            export_lp: false,
            smoothing: Smoothing::Off,
            repeats: default_repeats(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ExperimentKind::AlphaSweep && self.alphas.is_empty() {
            return Err(Error::Invalid("alpha sweep needs at least one alpha".into()));
        }
        if let Some(bad) = self.alphas.iter().chain([&self.alpha]).find(|a| !(**a > 0.0)) {
            return Err(Error::Invalid(format!("alpha must be positive, got {bad}")));
        }
        if self.realizations == 0 {
            return Err(Error::Invalid("realizations must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Invalid("iterations must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Invalid("repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Scenario file plus the stroke probability of every outpatient.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub file: ScenarioFile,
    pub op_ps: Vec<f64>,
}

impl ResolvedScenario {
    /// A scenario built from `config` with the given probabilities.
    pub fn with_ps(config: ScenarioConfig, op_ps: Vec<f64>) -> Self {
        Self {
            file: ScenarioFile {
                config,
                ..Default::default()
            },
            op_ps,
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.file.config
    }

    /// The scenario as seen with risk weights at `alpha`.
    pub fn weighted(&self, scenario: Scenario, alpha: f64, smoothing: Smoothing) -> Result<Scenario> {
        let cfg = RiskConfig::new(alpha)?.with_smoothing(smoothing);
        Ok(scenario.with_risk(&self.op_ps, &cfg)?)
    }
}

/// Stroke probabilities from the scenario file, either injected directly or
/// computed from the records for each listed current state.
pub fn resolve_op_ps(
    file: &ScenarioFile,
    records: Option<&[MedicalRecord]>,
    smoothing: Smoothing,
) -> Result<Vec<f64>> {
    let wanted = file.config.num_outpatients();
    let ps = if let Some(ps) = &file.op_ps {
        ps.clone()
    } else if wanted == 0 {
        Vec::new()
    } else {
        let records = records.ok_or_else(|| {
            Error::Invalid("scenario lists outpatients but neither op_ps nor records were given".into())
        })?;
        file.current_states
            .iter()
            .map(|entry| {
                let rec = records
                    .iter()
                    .find(|r| r.patient_id == entry.patient_id)
                    .ok_or_else(|| Error::Invalid(format!("no record for patient `{}`", entry.patient_id)))?;
                Ok(risk::posterior_stroke(rec, &entry.state()?, smoothing)?)
            })
            .collect::<Result<Vec<f64>>>()?
    };
    if ps.len() != wanted {
        return Err(Error::Invalid(format!(
            "{wanted} outpatients but {} stroke probabilities",
            ps.len()
        )));
    }
    Ok(ps)
}

pub fn load_resolved(
    scenario: Option<&Path>,
    records: Option<&Path>,
    smoothing: Smoothing,
) -> Result<ResolvedScenario> {
    let file = match scenario {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    let recs = records.map(crate::medrecords::load_records).transpose()?;
    let op_ps = resolve_op_ps(&file, recs.as_deref(), smoothing)?;
    Ok(ResolvedScenario { file, op_ps })
}

/// Channel realization `r` is drawn from `derive_seed(master, [r])`.
pub fn realizations(resolved: &ResolvedScenario, count: usize, master: u64) -> Result<Vec<Realization>> {
    (0..count)
        .into_par_iter()
        .map(|r| {
            let config = ScenarioConfig {
                seed: seed::derive_seed(master, &[r as u64]),
                ..resolved.file.config.clone()
            };
            Ok(channel::generate_with_distances(&config, resolved.file.distances.as_deref())?)
        })
        .collect()
}

/// The realization a single solve uses: index 0 under `master`.
pub fn single_realization(resolved: &ResolvedScenario, master: u64) -> Result<Realization> {
    Ok(realizations(resolved, 1, master)?.remove(0))
}

fn solve_all(scenario: &Scenario, maps: &[PowerMap], config: &SolverConfig) -> Result<Vec<SinrReport>> {
    maps.par_iter()
        .map(|q| Ok(exact::solve_exact(scenario, q, config)?.1))
        .collect()
}

/// Mean SINR of each user over a set of exact reports.
pub fn exact_user_means(reports: &[SinrReport]) -> Vec<f64> {
    let k_n = reports.first().map_or(0, |r| r.sinr.len());
    (0..k_n)
        .map(|k| reports.iter().map(|r| r.sinr[k]).sum::<f64>() / reports.len() as f64)
        .collect()
}

pub fn exact_user_summaries(reports: &[SinrReport]) -> Result<Vec<StatSummary>> {
    let k_n = reports.first().map_or(0, |r| r.sinr.len());
    (0..k_n)
        .map(|k| {
            let v: Vec<f64> = reports.iter().map(|r| r.sinr[k]).collect();
            Ok(metrics::summarize(&v)?)
        })
        .collect()
}

/// Headline figures of one solver run, computed from per-user means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseStats {
    pub system_avg: f64,
    pub op_mean: Option<f64>,
    pub healthy_mean: Option<f64>,
    pub healthy_sd: Option<f64>,
    pub per_user_mean: Vec<f64>,
}

impl PhaseStats {
    pub fn from_means(per_user_mean: Vec<f64>, scenario: &Scenario) -> Result<Self> {
        let ops = scenario.outpatients();
        let healthy = scenario.normal_users();
        let pick = |set: &[usize]| -> Vec<f64> { set.iter().map(|&k| per_user_mean[k]).collect() };
        Ok(Self {
            system_avg: metrics::mean(&per_user_mean)?,
            op_mean: metrics::mean(&pick(&ops)).ok(),
            healthy_mean: metrics::mean(&pick(&healthy)).ok(),
            healthy_sd: if healthy.is_empty() {
                None
            } else {
                metrics::fairness_sd(&per_user_mean, &healthy)?
            },
            per_user_mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub exact: Vec<SinrReport>,
    pub heuristic: HeuristicReport,
    pub exact_stats: PhaseStats,
    pub heuristic_stats: PhaseStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeforeAfter {
    pub objective: Objective,
    pub alpha: f64,
    /// Scenario with the risk weights used after prioritization.
    pub scenario: Scenario,
    pub maps: Vec<PowerMap>,
    pub before: Phase,
    pub after: Phase,
}

impl BeforeAfter {
    pub fn exact_op_improvement(&self) -> Option<f64> {
        improvement(self.before.exact_stats.op_mean, self.after.exact_stats.op_mean)
    }

    pub fn heuristic_op_improvement(&self) -> Option<f64> {
        improvement(self.before.heuristic_stats.op_mean, self.after.heuristic_stats.op_mean)
    }

    pub fn exact_system_change(&self) -> Option<f64> {
        improvement(Some(self.before.exact_stats.system_avg), Some(self.after.exact_stats.system_avg))
    }
}

fn improvement(before: Option<f64>, after: Option<f64>) -> Option<f64> {
    metrics::improvement_pct(before?, after?).ok()
}

/// Runs the exact solver and the heuristic with prioritization off and then
/// on, over the same channel realizations.
pub fn before_after(
    resolved: &ResolvedScenario,
    objective: Objective,
    alpha: f64,
    realizations_count: usize,
    iterations: usize,
    master: u64,
    smoothing: Smoothing,
) -> Result<BeforeAfter> {
    let draws = realizations(resolved, realizations_count, master)?;
    let maps: Vec<PowerMap> = draws.iter().map(|r| r.power.clone()).collect();
    let base = draws
        .into_iter()
        .next()
        .ok_or_else(|| Error::Invalid("no realizations".into()))?
        .scenario;
    let scenario = resolved.weighted(base, alpha, smoothing)?;

    let phase = |prioritization: bool| -> Result<Phase> {
        let exact = solve_all(&scenario, &maps, &SolverConfig::new(objective, prioritization))?;
        let heuristic = heuristic::run_heuristic(
            &scenario,
            &maps,
            &HeuristicConfig {
                iterations,
                prioritization,
                seed: seed::derive_seed(master, &[HEURISTIC_STREAM]),
                ..Default::default()
            },
        )?;
        Ok(Phase {
            exact_stats: PhaseStats::from_means(exact_user_means(&exact), &scenario)?,
            heuristic_stats: PhaseStats::from_means(heuristic.user_means(), &scenario)?,
            exact,
            heuristic,
        })
    };
    let before = phase(false)?;
    let after = phase(true)?;
    Ok(BeforeAfter {
        objective,
        alpha,
        scenario,
        maps,
        before,
        after,
    })
}

/// 64-bit FNV-1a, used to fingerprint realization files.
fn fingerprint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn write_realizations(dir: &Path, maps: &[PowerMap], master: u64) -> Result<()> {
    let mut index = String::from("realization,seed,fnv64\n");
    for (r, q) in maps.iter().enumerate() {
        let text = q.to_csv();
        let _ = writeln!(
            index,
            "{},{},{:016x}",
            r + 1,
            seed::derive_seed(master, &[r as u64]),
            fingerprint(text.as_bytes())
        );
        write_file(&dir.join(format!("realizations/powermap_{:04}.csv", r + 1)), &text)?;
    }
    write_file(&dir.join("realizations/index.csv"), &index)
}

fn stat_rows(prefix: &str, stats: &PhaseStats, per_user: &[StatSummary], scenario: &Scenario) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let subset = |name: &str, set: Vec<usize>| -> Result<Option<SummaryRow>> {
        if set.is_empty() {
            return Ok(None);
        }
        let v: Vec<f64> = set.iter().map(|&k| stats.per_user_mean[k]).collect();
        Ok(Some(SummaryRow::new(format!("{prefix}_mean_sinr"), name, metrics::summarize(&v)?)))
    };
    rows.extend(subset("all", (0..scenario.num_users()).collect())?);
    rows.extend(subset("healthy", scenario.normal_users())?);
    rows.extend(subset("op", scenario.outpatients())?);
    for (k, s) in per_user.iter().enumerate() {
        rows.push(SummaryRow::new(format!("{prefix}_user_sinr"), format!("user{}", k + 1), *s));
    }
    Ok(rows)
}

fn opt_num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.15e}")).unwrap_or_default()
}

/// Writes a before/after run to `dir`.
pub fn write_before_after(dir: &Path, spec: &ExperimentSpec, run: &BeforeAfter) -> Result<()> {
    write_file(&dir.join("config_echo.json"), &spec.to_json())?;
    write_realizations(dir, &run.maps, spec.seed)?;
    let mut summary = Vec::new();
    for (name, phase) in [("before", &run.before), ("after", &run.after)] {
        let exact_users = exact_user_summaries(&phase.exact)?;
        write_file(&dir.join(format!("exact_{name}.csv")), &metrics::report_to_csv(&exact_users))?;
        write_file(
            &dir.join(format!("heuristic_{name}.csv")),
            &metrics::report_to_csv(&phase.heuristic.per_user),
        )?;
        summary.extend(stat_rows(&format!("exact_{name}"), &phase.exact_stats, &exact_users, &run.scenario)?);
        summary.extend(stat_rows(
            &format!("heuristic_{name}"),
            &phase.heuristic_stats,
            &phase.heuristic.per_user,
            &run.scenario,
        )?);
    }
    write_file(&dir.join("summary.csv"), &metrics::summary_to_csv(&summary))?;

    let mut imp = String::from("solver,subset,before,after,improvement_pct\n");
    for (solver, b, a) in [
        ("exact", &run.before.exact_stats, &run.after.exact_stats),
        ("heuristic", &run.before.heuristic_stats, &run.after.heuristic_stats),
    ] {
        for (subset, x, y) in [
            ("op", b.op_mean, a.op_mean),
            ("healthy", b.healthy_mean, a.healthy_mean),
            ("all", Some(b.system_avg), Some(a.system_avg)),
        ] {
            let _ = writeln!(
                imp,
                "{solver},{subset},{},{},{}",
                opt_num(x),
                opt_num(y),
                opt_num(improvement(x, y))
            );
        }
    }
    write_file(&dir.join("improvements.csv"), &imp)
}

pub fn run_before_after(spec: &ExperimentSpec) -> Result<BeforeAfter> {
    spec.validate()?;
    let resolved = load_resolved(spec.scenario.as_deref(), spec.records.as_deref(), spec.smoothing)?;
    let run = before_after(
        &resolved,
        spec.objective,
        spec.alpha,
        spec.realizations,
        spec.iterations,
        spec.seed,
        spec.smoothing,
    )?;
    write_before_after(&spec.output_dir, spec, &run)?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub system_avg: f64,
    pub healthy_sd: Option<f64>,
    /// Mean SINR of each outpatient, in user order.
    pub op_means: Vec<f64>,
}

/// Exact solver with prioritization on, once per alpha, over shared
/// realizations.
pub fn alpha_sweep(
    resolved: &ResolvedScenario,
    objective: Objective,
    alphas: &[f64],
    realizations_count: usize,
    master: u64,
    smoothing: Smoothing,
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::Invalid("alpha sweep needs at least one alpha".into()));
    }
    let draws = realizations(resolved, realizations_count, master)?;
    let maps: Vec<PowerMap> = draws.iter().map(|r| r.power.clone()).collect();
    let base = draws[0].scenario.clone();
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|alpha| {
            let scenario = resolved.weighted(base.clone(), alpha, smoothing)?;
            let reports = solve_all(&scenario, &maps, &SolverConfig::new(objective, true))?;
            let stats = PhaseStats::from_means(exact_user_means(&reports), &scenario)?;
            Ok(SweepRow {
                alpha,
                system_avg: stats.system_avg,
                healthy_sd: stats.healthy_sd,
                op_means: scenario.outpatients().iter().map(|&k| stats.per_user_mean[k]).collect(),
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow], outpatients: &[usize]) -> String {
    let mut out = String::from("alpha,avg_sinr,healthy_sd");
    for k in outpatients {
        let _ = write!(out, ",op_user{}", k + 1);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{:.15e},{}", r.alpha, r.system_avg, opt_num(r.healthy_sd));
        for m in &r.op_means {
            let _ = write!(out, ",{m:.15e}");
        }
        out.push('\n');
    }
    out
}

pub fn run_alpha_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let resolved = load_resolved(spec.scenario.as_deref(), spec.records.as_deref(), spec.smoothing)?;
    let rows = alpha_sweep(
        &resolved,
        spec.objective,
        &spec.alphas,
        spec.realizations,
        spec.seed,
        spec.smoothing,
    )?;
    let dir = &spec.output_dir;
    write_file(&dir.join("config_echo.json"), &spec.to_json())?;
    let c = resolved.config();
    let ops: Vec<usize> = (c.num_normal..c.num_users).collect();
    write_file(&dir.join("sweep.csv"), &sweep_to_csv(&rows, &ops))?;
    let summary: Vec<SummaryRow> = rows
        .iter()
        .map(|r| {
            let s = metrics::summarize(&[r.system_avg]).expect("one value");
            SummaryRow::new("avg_sinr", format!("alpha{}", r.alpha), s)
        })
        .collect();
    write_file(&dir.join("summary.csv"), &metrics::summary_to_csv(&summary))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub bandwidth_mhz: f64,
    pub prbs: usize,
    pub users: usize,
    /// Median over the repeats.
    pub seconds: f64,
    /// Every repeat's wall-clock time, in run order.
    pub runs: Vec<f64>,
}

/// Times the heuristic with every PRB occupied (`K = 2N` on two base
/// stations, three outpatients). Each case runs `repeats` times and reports
/// the median wall-clock time of `iterations` iterations.
pub fn scalability(
    cases: &[(f64, usize)],
    iterations: usize,
    repeats: usize,
    master: u64,
) -> Result<Vec<TimingRow>> {
    if repeats == 0 {
        return Err(Error::Invalid("repeats must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(cases.len());
    for (case, &(mhz, n)) in cases.iter().enumerate() {
        let users = 2 * n;
        let config = ScenarioConfig {
            prbs_per_bs: n,
            num_users: users,
            num_normal: users.saturating_sub(3),
            seed: seed::derive_seed(master, &[case as u64]),
            ..Default::default()
        };
        let r = channel::generate_scenario(&config)?;
        let ps = [0.0032, 0.0064, 0.00208];
        let scenario = r
            .scenario
            .with_risk(&ps[..config.num_outpatients()], &RiskConfig::new(500.0)?)?;
        let hcfg = HeuristicConfig {
            iterations,
            prioritization: true,
            seed: master,
            ..Default::default()
        };
        let maps = [r.power];
        let runs: Vec<f64> = (0..repeats)
            .map(|_| {
                let t0 = Instant::now();
                heuristic::run_heuristic(&scenario, &maps, &hcfg).map(|_| t0.elapsed().as_secs_f64())
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut sorted = runs.clone();
        sorted.sort_by(f64::total_cmp);
        rows.push(TimingRow {
            bandwidth_mhz: mhz,
            prbs: n,
            users,
            seconds: sorted[sorted.len() / 2],
            runs,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln seconds` against `ln prbs`.
pub fn loglog_slope(rows: &[TimingRow]) -> Option<f64> {
    if rows.len() < 2 || rows.iter().any(|r| !(r.seconds > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.prbs as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds.ln()).collect();
    let (mx, my) = (metrics::mean(&xs).ok()?, metrics::mean(&ys).ok()?);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn timing_to_csv(rows: &[TimingRow]) -> String {
    let mut out = format!("{SCALABILITY_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.12e}", r.bandwidth_mhz, r.prbs, r.users, r.seconds);
    }
    out
}

pub fn run_scalability(spec: &ExperimentSpec) -> Result<Vec<TimingRow>> {
    spec.validate()?;
    let rows = scalability(&SCALABILITY_CASES, spec.iterations, spec.repeats, spec.seed)?;
    let dir = &spec.output_dir;
    let mut echo = serde_json::to_value(spec).expect("spec serializes");
    echo["note"] = serde_json::Value::from(
        "PRB counts follow the standard 1.4-20 MHz channel sizes (6 at 1.4 MHz); \
         the baseline scenario keeps 5 PRBs per base station",
    );
    write_file(
        &dir.join("config_echo.json"),
        &serde_json::to_string_pretty(&echo).expect("json"),
    )?;
    write_file(&dir.join("scalability.csv"), &timing_to_csv(&rows))?;
    let summary = rows
        .iter()
        .map(|r| Ok(SummaryRow::new("heuristic_seconds", format!("prbs{}", r.prbs), metrics::summarize(&r.runs)?)))
        .collect::<Result<Vec<_>>>()?;
    write_file(&dir.join("summary.csv"), &metrics::summary_to_csv(&summary))?;
    Ok(rows)
}

pub const RESULT_HEADER: &str = "user,bs,prb,sinr,log_sinr,up";

/// Per-user result table of one exact solve; indices are 1-based.
pub fn result_to_csv(assignment: &exact::Assignment, report: &SinrReport) -> String {
    let mut out = format!("{RESULT_HEADER}\n");
    for (k, slot) in assignment.iter() {
        let (b, n) = slot.map_or((String::new(), String::new()), |s| {
            ((s.bs + 1).to_string(), (s.prb + 1).to_string())
        });
        let _ = writeln!(
            out,
            "{},{b},{n},{:.15e},{},{:.15e}",
            k + 1,
            report.sinr[k],
            opt_num(report.log_sinr[k]),
            report.up[k]
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum SingleOutcome {
    Exact {
        assignment: exact::Assignment,
        report: SinrReport,
    },
    Heuristic(HeuristicReport),
}

/// Solves the experiment's scenario (one realization drawn from its seed) and
/// writes `config_echo.json`, `powermap.csv`, the report and `summary.csv`,
/// plus `model.lp` when requested.
pub fn run_single_solve(spec: &ExperimentSpec) -> Result<SingleOutcome> {
    spec.validate()?;
    let resolved = load_resolved(spec.scenario.as_deref(), spec.records.as_deref(), spec.smoothing)?;
    let r = single_realization(&resolved, spec.seed)?;
    let scenario = resolved.weighted(r.scenario, spec.alpha, spec.smoothing)?;
    let dir = &spec.output_dir;
    write_file(&dir.join("config_echo.json"), &spec.to_json())?;
    write_file(&dir.join("powermap.csv"), &r.power.to_csv())?;
    let outcome = single_solve(&scenario, &r.power, spec)?;
    write_single_outcome(dir, &scenario, &outcome)?;
    if spec.export_lp {
        let mut cfg = SolverConfig::new(spec.objective, spec.prioritization);
        if spec.objective == Objective::Pf {
            cfg = cfg.piecewise(PwlSpec::default());
        }
        let lp = lp_export::export_milp(&scenario, &r.power, &cfg, exact::default_lambda(&r.power))?;
        write_file(&dir.join("model.lp"), &lp)?;
    }
    Ok(outcome)
}

pub fn single_solve(scenario: &Scenario, q: &PowerMap, spec: &ExperimentSpec) -> Result<SingleOutcome> {
    match spec.solver {
        SolverKind::Exact => {
            let cfg = SolverConfig::new(spec.objective, spec.prioritization);
            let (assignment, report) = exact::solve_exact(scenario, q, &cfg)?;
            Ok(SingleOutcome::Exact { assignment, report })
        }
        SolverKind::Heuristic => {
            let cfg = HeuristicConfig {
                iterations: spec.iterations,
                prioritization: spec.prioritization,
                seed: spec.seed,
                ..Default::default()
            };
            Ok(SingleOutcome::Heuristic(heuristic::run_heuristic(
                scenario,
                std::slice::from_ref(q),
                &cfg,
            )?))
        }
    }
}

pub fn write_single_outcome(dir: &Path, scenario: &Scenario, outcome: &SingleOutcome) -> Result<()> {
    let (prefix, stats, per_user) = match outcome {
        SingleOutcome::Exact { assignment, report } => {
            write_file(&dir.join("report.csv"), &result_to_csv(assignment, report))?;
            write_file(
                &dir.join("objective.csv"),
                &format!("objective,{:.15e}\n", report.objective_value),
            )?;
            let per_user = report
                .sinr
                .iter()
                .map(|&m| metrics::summarize(&[m]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            ("exact", PhaseStats::from_means(report.sinr.clone(), scenario)?, per_user)
        }
        SingleOutcome::Heuristic(h) => {
            write_file(&dir.join("report.csv"), &metrics::report_to_csv(&h.per_user))?;
            ("heuristic", PhaseStats::from_means(h.user_means(), scenario)?, h.per_user.clone())
        }
    };
    let rows = stat_rows(prefix, &stats, &per_user, scenario)?;
    write_file(&dir.join("summary.csv"), &metrics::summary_to_csv(&rows))
}
