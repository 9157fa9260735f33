//! MILP export in LP text format and validation of solutions returned by an
//! external solver.
//!
//! Variables, all indices 1-based:
//!
//! - `X_k_n_b` binary, user `k` on PRB `n` of base station `b`
//! - `T_k_n_b` SINR of that triple
//! - `PHI_m_n_k_w_b` the product `T_k_n_b * X_m_n_w` for `m != k`, `w != b`
//! - `S_k` per-user SINR and `L_k` its log (PF only)
//!
//! The SINR definition rows are divided by the noise power so that their
//! coefficients are of order one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::channel::{dbm_to_mw, PowerMap, Scenario};
use crate::exact::{self, Assignment, Objective, SinrReport, Slot, SolverConfig, SolverError, Weights};
use crate::medrecords::{CurrentState, Feature, MedicalRecord};

/// Tolerance on X values when reading a solution back.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Relative tolerance for objective comparisons.
pub const PARITY_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LpError {
    #[error("PF export needs a piecewise log spec")]
    MissingPwl,
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("non-integral solution: {name} = {value}")]
    NonIntegral { name: String, value: f64 },
    #[error("solution line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("solution does not describe a full assignment: {0}")]
    Assignment(String),
    #[error("bayes block for user {0}: {1}")]
    Bayes(usize, String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(f64, String)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Indicator data of an outpatient's record, encoded with a logical AND per
/// (feature, day): `A <= E`, `A <= G`, `A >= E + G - 1`, where `E` marks the
/// feature at its current-state level and `G` marks a stroke day.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesInput {
    /// 0-based user index of the outpatient.
    pub user: usize,
    pub record: MedicalRecord,
    pub state: CurrentState,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExportOptions {
    pub bayes: Vec<BayesInput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub lambda: f64,
    pub objective: Vec<(f64, String)>,
    pub rows: Vec<Row>,
    pub binaries: Vec<String>,
    pub free: Vec<String>,
    pub num_x: usize,
    pub num_t: usize,
    pub num_phi: usize,
    pub num_s: usize,
    pub num_l: usize,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn x_name(k: usize, n: usize, b: usize) -> String {
    format!("X_{}_{}_{}", k + 1, n + 1, b + 1)
}

fn t_name(k: usize, n: usize, b: usize) -> String {
    format!("T_{}_{}_{}", k + 1, n + 1, b + 1)
}

fn phi_name(m: usize, n: usize, k: usize, w: usize, b: usize) -> String {
    format!("PHI_{}_{}_{}_{}_{}", m + 1, n + 1, k + 1, w + 1, b + 1)
}

fn write_terms(out: &mut String, terms: &[(f64, String)]) {
    for (i, (c, v)) in terms.iter().enumerate() {
        if i > 0 && i % 6 == 0 {
            out.push_str("\n   ");
        }
        let sign = if c.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {v}", num(c.abs()));
    }
}

impl LpModel {
    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\ PRB assignment model, big-M lambda = {}", num(self.lambda));
        out.push_str("Maximize\n obj:");
        write_terms(&mut out, &self.objective);
        out.push_str("\nSubject To\n");
        for r in &self.rows {
            let _ = write!(out, " {}:", r.name);
            write_terms(&mut out, &r.terms);
            let _ = writeln!(out, " {} {}", r.sense.token(), num(r.rhs));
        }
        if !self.free.is_empty() {
            out.push_str("Bounds\n");
            for v in &self.free {
                let _ = writeln!(out, " {v} free");
            }
        }
        out.push_str("Binary\n");
        for v in &self.binaries {
            let _ = writeln!(out, " {v}");
        }
        out.push_str("End\n");
        out
    }
}

/// Builds the model for the given objective. PF requires a piecewise spec in
/// `config.pwl`.
pub fn build_model(
    scenario: &Scenario,
    q: &PowerMap,
    config: &SolverConfig,
    lambda: f64,
    options: &ExportOptions,
) -> Result<LpModel, LpError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LpError::InvalidLambda(lambda));
    }
    if config.objective == Objective::Pf && config.pwl.is_none() {
        return Err(LpError::MissingPwl);
    }
    let (k_n, n_n, b_n) = (q.num_users(), q.prbs_per_bs(), q.num_bs());
    if scenario.num_users() != k_n {
        return Err(SolverError::Dimension(format!(
            "scenario has {} users, power map {k_n}",
            scenario.num_users()
        ))
        .into());
    }
    let weights = Weights::from_scenario(scenario, config.prioritization);
    let sigma = q.noise_w;
    let mut rows = Vec::new();
    let mut num_phi = 0;

    // Products and their big-M rows.
    for k in 0..k_n {
        for n in 0..n_n {
            for b in 0..b_n {
                let t = t_name(k, n, b);
                for w in (0..b_n).filter(|&w| w != b) {
                    for m in (0..k_n).filter(|&m| m != k) {
                        let p = phi_name(m, n, k, w, b);
                        let xm = x_name(m, n, w);
                        let tag = &p[4..];
                        rows.push(Row {
                            name: format!("phix_{tag}"),
                            terms: vec![(1.0, p.clone()), (-lambda, xm.clone())],
                            sense: Sense::Le,
                            rhs: 0.0,
                        });
                        rows.push(Row {
                            name: format!("phit_{tag}"),
                            terms: vec![(1.0, p.clone()), (-1.0, t.clone())],
                            sense: Sense::Le,
                            rhs: 0.0,
                        });
                        rows.push(Row {
                            name: format!("phil_{tag}"),
                            terms: vec![(1.0, p), (-lambda, xm), (-1.0, t.clone())],
                            sense: Sense::Ge,
                            rhs: -lambda,
                        });
                        num_phi += 1;
                    }
                }
            }
        }
    }
    // SINR definition per triple.
    for k in 0..k_n {
        for n in 0..n_n {
            for b in 0..b_n {
                let mut terms = Vec::new();
                for w in (0..b_n).filter(|&w| w != b) {
                    for m in (0..k_n).filter(|&m| m != k) {
                        terms.push((q.q(m, n, b) / sigma, phi_name(m, n, k, w, b)));
                    }
                }
                terms.push((1.0, t_name(k, n, b)));
                terms.push((-q.q(k, n, b) / sigma, x_name(k, n, b)));
                rows.push(Row {
                    name: format!("sinr_{}_{}_{}", k + 1, n + 1, b + 1),
                    terms,
                    sense: Sense::Eq,
                    rhs: 0.0,
                });
            }
        }
    }
    // Power cap per user and base station.
    let p_prb = dbm_to_mw(scenario.config.tx_power_per_prb_dbm) / 1000.0;
    let p_max = dbm_to_mw(scenario.config.max_power_per_connection_dbm) / 1000.0;
    for k in 0..k_n {
        for b in 0..b_n {
            rows.push(Row {
                name: format!("power_{}_{}", k + 1, b + 1),
                terms: (0..n_n).map(|n| (p_prb, x_name(k, n, b))).collect(),
                sense: Sense::Le,
                rhs: p_max,
            });
        }
    }
    for n in 0..n_n {
        for b in 0..b_n {
            rows.push(Row {
                name: format!("prb_{}_{}", n + 1, b + 1),
                terms: (0..k_n).map(|k| (1.0, x_name(k, n, b))).collect(),
                sense: Sense::Le,
                rhs: 1.0,
            });
        }
    }
    for k in 0..k_n {
        let terms = (0..b_n)
            .flat_map(|b| (0..n_n).map(move |n| (1.0, x_name(k, n, b))))
            .collect();
        rows.push(Row {
            name: format!("serve_{}", k + 1),
            terms,
            sense: Sense::Eq,
            rhs: 1.0,
        });
    }

    let mut objective = Vec::new();
    let mut free = Vec::new();
    let (mut num_s, mut num_l) = (0, 0);
    match config.objective {
        Objective::WsrMax => {
            for k in 0..k_n {
                for n in 0..n_n {
                    for b in 0..b_n {
                        objective.push((weights.up[k], t_name(k, n, b)));
                    }
                }
            }
        }
        Objective::Pf => {
            let pwl = config.pwl.as_ref().ok_or(LpError::MissingPwl)?;
            for k in 0..k_n {
                let s = format!("S_{}", k + 1);
                let mut terms = vec![(1.0, s.clone())];
                for n in 0..n_n {
                    for b in 0..b_n {
                        terms.push((-1.0, t_name(k, n, b)));
                    }
                }
                rows.push(Row {
                    name: format!("sdef_{}", k + 1),
                    terms,
                    sense: Sense::Eq,
                    rhs: 0.0,
                });
                num_s += 1;
                if weights.outpatient[k] {
                    objective.push((weights.up[k], s));
                    continue;
                }
                let l = format!("L_{}", k + 1);
                for (y, seg) in pwl.segments.iter().enumerate() {
                    rows.push(Row {
                        name: format!("pwl_{}_{}", k + 1, y + 1),
                        terms: vec![(1.0, l.clone()), (-seg.slope, s.clone())],
                        sense: Sense::Le,
                        rhs: seg.intercept,
                    });
                }
                objective.push((1.0, l.clone()));
                free.push(l);
                num_l += 1;
            }
        }
    }

    let mut binaries: Vec<String> = (0..k_n)
        .flat_map(|k| (0..n_n).flat_map(move |n| (0..b_n).map(move |b| x_name(k, n, b))))
        .collect();
    for input in &options.bayes {
        bayes_rows(input, k_n, &mut rows, &mut binaries)?;
    }

    Ok(LpModel {
        lambda,
        objective,
        rows,
        binaries,
        free,
        num_x: k_n * n_n * b_n,
        num_t: k_n * n_n * b_n,
        num_phi,
        num_s,
        num_l,
    })
}

fn bayes_rows(
    input: &BayesInput,
    num_users: usize,
    rows: &mut Vec<Row>,
    binaries: &mut Vec<String>,
) -> Result<(), LpError> {
    if input.user >= num_users {
        return Err(LpError::Bayes(input.user, "user out of range".into()));
    }
    if input.record.days.is_empty() {
        return Err(LpError::Bayes(input.user, "record has no days".into()));
    }
    let z = input.user + 1;
    let fixed = |rows: &mut Vec<Row>, name: String, value: bool| {
        rows.push(Row {
            name: format!("fix_{name}"),
            terms: vec![(1.0, name)],
            sense: Sense::Eq,
            rhs: f64::from(u8::from(value)),
        });
    };
    for (d, day) in input.record.days.iter().enumerate() {
        let g = format!("G_{z}_{}", d + 1);
        fixed(rows, g.clone(), day.stroke);
        binaries.push(g.clone());
        for f in Feature::ALL {
            let i = f.index() + 1;
            let e = format!("E_{z}_{i}_{}", d + 1);
            let a = format!("A_{z}_{i}_{}", d + 1);
            fixed(rows, e.clone(), day.level(f) == input.state.level(f));
            rows.push(Row {
                name: format!("and_e_{z}_{i}_{}", d + 1),
                terms: vec![(1.0, a.clone()), (-1.0, e.clone())],
                sense: Sense::Le,
                rhs: 0.0,
            });
            rows.push(Row {
                name: format!("and_g_{z}_{i}_{}", d + 1),
                terms: vec![(1.0, a.clone()), (-1.0, g.clone())],
                sense: Sense::Le,
                rhs: 0.0,
            });
            rows.push(Row {
                name: format!("and_l_{z}_{i}_{}", d + 1),
                terms: vec![(1.0, a.clone()), (-1.0, e.clone()), (-1.0, g.clone())],
                sense: Sense::Ge,
                rhs: -1.0,
            });
            binaries.push(e);
            binaries.push(a);
        }
    }
    Ok(())
}

pub fn export_milp(
    scenario: &Scenario,
    q: &PowerMap,
    config: &SolverConfig,
    lambda: f64,
) -> Result<String, LpError> {
    build_model(scenario, q, config, lambda, &ExportOptions::default()).map(|m| m.to_lp_string())
}

/// Serializes an assignment as a solution file: a `# objective` header and
/// `name value` lines for every X, T and, under PF, S variable.
pub fn write_solution(assignment: &Assignment, report: &SinrReport, q: &PowerMap, objective: Objective) -> String {
    let (k_n, n_n, b_n) = (q.num_users(), q.prbs_per_bs(), q.num_bs());
    let mut out = format!("# objective {:.17e}\n", report.objective_value);
    for k in 0..k_n {
        let slot = assignment.slot(k);
        for n in 0..n_n {
            for b in 0..b_n {
                let on = slot == Some(Slot::new(b, n));
                let _ = writeln!(out, "{} {}", x_name(k, n, b), u8::from(on));
            }
        }
    }
    for k in 0..k_n {
        let slot = assignment.slot(k);
        for n in 0..n_n {
            for b in 0..b_n {
                let t = if slot == Some(Slot::new(b, n)) { report.sinr[k] } else { 0.0 };
                let _ = writeln!(out, "{} {t:.17e}", t_name(k, n, b));
            }
        }
    }
    if objective == Objective::Pf {
        for k in 0..k_n {
            let _ = writeln!(out, "S_{} {:.17e}", k + 1, report.sinr[k]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub objective: Option<f64>,
    pub values: BTreeMap<String, f64>,
}

pub fn parse_solution(text: &str) -> Result<SolutionFile, LpError> {
    let mut objective = None;
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.split_whitespace();
            if parts.next() == Some("objective") {
                let v = parts.next().ok_or_else(|| LpError::Parse {
                    line: i + 1,
                    message: "objective header without a value".into(),
                })?;
                objective = Some(v.parse().map_err(|_| LpError::Parse {
                    line: i + 1,
                    message: format!("bad objective `{v}`"),
                })?);
            }
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(LpError::Parse {
                line: i + 1,
                message: format!("expected `name value`, got `{line}`"),
            });
        };
        let value: f64 = v.parse().map_err(|_| LpError::Parse {
            line: i + 1,
            message: format!("bad value `{v}`"),
        })?;
        values.insert(name.to_string(), value);
    }
    Ok(SolutionFile { objective, values })
}

/// Rebuilds the assignment from the X values of a solution, rounding at 0.5.
pub fn assignment_from_solution(sol: &SolutionFile, q: &PowerMap) -> Result<Assignment, LpError> {
    let (k_n, n_n, b_n) = (q.num_users(), q.prbs_per_bs(), q.num_bs());
    let mut a = Assignment::empty(k_n);
    for (name, &value) in &sol.values {
        let Some(rest) = name.strip_prefix("X_") else {
            continue;
        };
        let idx: Vec<usize> = rest.split('_').filter_map(|s| s.parse().ok()).collect();
        let &[k, n, b] = idx.as_slice() else {
            return Err(LpError::Assignment(format!("malformed variable `{name}`")));
        };
        if k == 0 || n == 0 || b == 0 || k > k_n || n > n_n || b > b_n {
            return Err(LpError::Assignment(format!("variable `{name}` out of range")));
        }
        if value.abs().min((value - 1.0).abs()) > INTEGRALITY_TOL {
            return Err(LpError::NonIntegral {
                name: name.clone(),
                value,
            });
        }
        if value >= 0.5 {
            if let Some(prev) = a.slot(k - 1) {
                return Err(LpError::Assignment(format!(
                    "user {k} holds two slots ({prev:?} and {name})"
                )));
            }
            a.set(k - 1, Slot::new(b - 1, n - 1));
        }
    }
    if let Some(k) = (0..k_n).find(|&k| a.slot(k).is_none()) {
        return Err(LpError::Assignment(format!("user {} has no slot", k + 1)));
    }
    a.validate(b_n, n_n, usize::MAX)
        .map_err(|e| LpError::Assignment(e.to_string()))?;
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    pub assignment: Assignment,
    /// Objective stated in the solution header, if any.
    pub reported_objective: Option<f64>,
    /// Objective recomputed from the assignment.
    pub objective: f64,
    /// Optimum found by the internal exact solver.
    pub internal_optimum: f64,
    /// Reported and recomputed objectives agree within [`PARITY_TOL`].
    pub objective_parity: bool,
    /// The external assignment is worse than the internal optimum.
    pub below_optimum: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PARITY_TOL * a.abs().max(b.abs()).max(1.0)
}

pub fn validate_external_solution(
    text: &str,
    scenario: &Scenario,
    q: &PowerMap,
    config: &SolverConfig,
) -> Result<ParityReport, LpError> {
    let sol = parse_solution(text)?;
    let assignment = assignment_from_solution(&sol, q)?;
    let weights = Weights::from_scenario(scenario, config.prioritization);
    let report = exact::evaluate(&assignment, q, &weights, config)?;
    let (_, opt) = exact::solve_exact(scenario, q, config)?;
    let objective = report.objective_value;
    Ok(ParityReport {
        reported_objective: sol.objective,
        objective_parity: sol.objective.is_none_or(|r| close(r, objective)),
        below_optimum: objective < opt.objective_value && !close(objective, opt.objective_value),
        internal_optimum: opt.objective_value,
        objective,
        assignment,
    })
}
