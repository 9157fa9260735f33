//! `opcell` command line: data ingestion, risk scoring, channel generation,
//! solvers and the experiment suites.
//!
//! Exit codes: 0 success, 2 usage error, 3 infeasible instance, 4 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use opcell::experiments::{self, ExperimentKind, ExperimentSpec, SolverKind};
use opcell::exact::{self, Objective, PwlSpec, SolverConfig};
use opcell::fsutil::write_file;
use opcell::medrecords;
use opcell::risk::{self, RiskConfig, Smoothing};
use opcell::{lp_export, seed, Error, PowerMap};

const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "opcell", version, about = "Risk-aware uplink PRB allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and segment raw patient readings into medical records.
    Ingest(IngestArgs),
    /// Stroke probability and priority for every user of a scenario.
    Risk(RiskArgs),
    /// Draw channel realizations and write their power maps.
    Generate(GenerateArgs),
    /// Exact allocation for one realization.
    Solve(RunArgs),
    /// Semi-greedy allocation for one realization.
    Heuristic(RunArgs),
    /// Write the MILP of one realization in LP format.
    ExportLp(ExportArgs),
    /// Check an external solver's solution against the internal optimum.
    ValidateSolution(ValidateArgs),
    /// Sweep the risk multiplier alpha.
    SweepAlpha(RunArgs),
    /// Compare allocations with prioritization off and on.
    BeforeAfter(RunArgs),
    /// Time the heuristic over growing bandwidths.
    Scalability(RunArgs),
    /// Run an experiment described entirely by a JSON spec file.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Raw readings CSV.
    #[arg(long, required_unless_present = "synthesize")]
    input: Option<PathBuf>,
    /// Generate this many synthetic patients instead of reading input.
    #[arg(long, conflicts_with = "input")]
    synthesize: Option<usize>,
    /// Days per synthetic patient.
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the most recent days of each patient.
    #[arg(long)]
    window: Option<usize>,
    /// Output records CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the synthesized raw rows here.
    #[arg(long, requires = "synthesize")]
    raw_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; the built-in baseline is used when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Medical records CSV used to score outpatients.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SmoothingArg::Off)]
    smoothing: SmoothingArg,
}

impl ScenarioArgs {
    fn resolve(&self) -> opcell::Result<experiments::ResolvedScenario> {
        experiments::load_resolved(self.scenario.as_deref(), self.records.as_deref(), self.smoothing.into())
    }
}

#[derive(Args)]
struct RiskArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500.0)]
    alpha: f64,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    realizations: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec; explicit flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated alpha values for the sweep.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long)]
    prioritize: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Timing repeats per scalability case.
    #[arg(long)]
    repeats: Option<usize>,
    /// Also write the MILP as `model.lp`.
    #[arg(long)]
    export_lp: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Wsrmax)]
    objective: ObjectiveArg,
    #[arg(long)]
    prioritize: bool,
    /// Power map CSV to use instead of drawing one from the seed.
    #[arg(long)]
    powermap: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Big-M constant; defaults to ten times the largest normalized power.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output LP file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Solution file with `name value` lines.
    #[arg(long)]
    solution: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Wsrmax,
    Pf,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Wsrmax => Objective::WsrMax,
            ObjectiveArg::Pf => Objective::Pf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothingArg {
    Off,
    Laplace,
}

impl From<SmoothingArg> for Smoothing {
    fn from(s: SmoothingArg) -> Self {
        match s {
            SmoothingArg::Off => Smoothing::Off,
            SmoothingArg::Laplace => Smoothing::Laplace,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasible() {
        EXIT_INFEASIBLE
    } else if matches!(e, Error::Invalid(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Runs a command and returns its exit code; only solution validation can
/// succeed in running yet report a data error.
fn dispatch(command: Command) -> opcell::Result<u8> {
    let done = match command {
        Command::ValidateSolution(a) => return validate_solution(&a),
        Command::Ingest(a) => ingest(&a),
        Command::Risk(a) => risk_cmd(&a),
        Command::Generate(a) => generate(&a),
        Command::Solve(a) => run(build_spec(ExperimentKind::SingleSolve, SolverKind::Exact, &a)?),
        Command::Heuristic(a) => run(build_spec(ExperimentKind::SingleSolve, SolverKind::Heuristic, &a)?),
        Command::ExportLp(a) => export_lp(&a),
        Command::SweepAlpha(a) => run(build_spec(ExperimentKind::AlphaSweep, SolverKind::Exact, &a)?),
        Command::BeforeAfter(a) => run(build_spec(ExperimentKind::BeforeAfter, SolverKind::Exact, &a)?),
        Command::Scalability(a) => run(build_spec(ExperimentKind::Scalability, SolverKind::Heuristic, &a)?),
        Command::Run { spec } => run(load_spec(&spec)?),
    };
    done.map(|()| 0)
}

fn load_spec(path: &Path) -> opcell::Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// Spec from the optional JSON file with command line flags layered on top.
fn build_spec(kind: ExperimentKind, solver: SolverKind, a: &RunArgs) -> opcell::Result<ExperimentSpec> {
    let mut spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => ExperimentSpec::new(kind, Objective::WsrMax, ""),
    };
    spec.kind = kind;
    spec.solver = solver;
    if a.scenario.scenario.is_some() {
        spec.scenario.clone_from(&a.scenario.scenario);
    }
    if a.scenario.records.is_some() {
        spec.records.clone_from(&a.scenario.records);
    }
    if a.spec.is_none() || !matches!(a.scenario.smoothing, SmoothingArg::Off) {
        spec.smoothing = a.scenario.smoothing.into();
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.alpha {
        spec.alpha = v;
    }
    if let Some(v) = &a.alphas {
        spec.alphas.clone_from(v);
    }
    if let Some(v) = a.objective {
        spec.objective = v.into();
    }
    if a.prioritize {
        spec.prioritization = true;
    }
    if let Some(v) = a.iterations {
        spec.iterations = v;
    }
    if let Some(v) = a.realizations {
        spec.realizations = v;
    }
    if let Some(v) = a.repeats {
        spec.repeats = v;
    }
    if a.export_lp {
        spec.export_lp = true;
    }
    if let Some(v) = &a.out {
        spec.output_dir.clone_from(v);
    }
    if spec.output_dir.as_os_str().is_empty() {
        return Err(Error::Invalid("an output directory is required (--out)".into()));
    }
    if spec.export_lp && kind != ExperimentKind::SingleSolve {
        return Err(Error::Invalid("--export-lp applies to single solves only".into()));
    }
    Ok(spec)
}

fn run(spec: ExperimentSpec) -> opcell::Result<()> {
    let dir = spec.output_dir.display().to_string();
    match spec.kind {
        ExperimentKind::SingleSolve => match experiments::run_single_solve(&spec)? {
            experiments::SingleOutcome::Exact { report, .. } => {
                let all: Vec<usize> = (0..report.sinr.len()).collect();
                let avg = report.mean(&all).unwrap_or(f64::NAN);
                info!("exact objective {:.6}, mean SINR {avg:.4}", report.objective_value);
            }
            experiments::SingleOutcome::Heuristic(h) => {
                let means = h.user_means();
                let avg = means.iter().sum::<f64>() / means.len() as f64;
                info!("heuristic mean SINR {avg:.4}");
            }
        },
        ExperimentKind::BeforeAfter => {
            let r = experiments::run_before_after(&spec)?;
            let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}%"));
            info!(
                "OP improvement: exact {}, heuristic {}",
                fmt(r.exact_op_improvement()),
                fmt(r.heuristic_op_improvement())
            );
        }
        ExperimentKind::AlphaSweep => {
            let rows = experiments::run_alpha_sweep(&spec)?;
            info!("{} sweep rows", rows.len());
        }
        ExperimentKind::Scalability => {
            let rows = experiments::run_scalability(&spec)?;
            if let Some(s) = experiments::loglog_slope(&rows) {
                info!("log-log slope of time against PRBs: {s:.3}");
            }
        }
    }
    info!("results written to {dir}");
    Ok(())
}

fn ingest(a: &IngestArgs) -> opcell::Result<()> {
    let rows = match (a.synthesize, &a.input) {
        (Some(n), _) => {
            let mut rng = seed::rng(a.seed);
            let rows = medrecords::synthesize_raw(n, a.days, &mut rng);
            if let Some(p) = &a.raw_out {
                write_file(p, &medrecords::raw_to_csv(&rows))?;
            }
            rows
        }
        (None, Some(p)) => medrecords::load_raw_records(p)?,
        (None, None) => return Err(Error::Invalid("either --input or --synthesize is required".into())),
    };
    let pre = medrecords::preprocess(&rows, a.window);
    info!(
        "{} records kept, {} rows dropped, {} patients excluded",
        pre.records.len(),
        pre.dropped_rows,
        pre.excluded_patients.len()
    );
    write_file(&a.out, &medrecords::records_to_csv(&pre.records))
}

fn risk_cmd(a: &RiskArgs) -> opcell::Result<()> {
    let resolved = a.scenario.resolve()?;
    let cfg = RiskConfig::new(a.alpha)?.with_smoothing(a.scenario.smoothing.into());
    let profiles = risk::build_profiles(resolved.config().num_users, &resolved.op_ps, &cfg)?;
    let csv = risk::profiles_to_csv(&profiles);
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn generate(a: &GenerateArgs) -> opcell::Result<()> {
    if a.realizations == 0 {
        return Err(Error::Invalid("realizations must be at least 1".into()));
    }
    let resolved = a.scenario.resolve()?;
    let maps = experiments::realizations(&resolved, a.realizations, a.seed)?;
    for (i, r) in maps.iter().enumerate() {
        write_file(&a.out.join(format!("powermap_{:04}.csv", i + 1)), &r.power.to_csv())?;
    }
    info!("{} power maps written to {}", maps.len(), a.out.display());
    Ok(())
}

/// Weighted scenario and power map for the single-instance commands.
fn instance(a: &SolveArgs) -> opcell::Result<(opcell::Scenario, PowerMap, SolverConfig)> {
    let resolved = a.scenario.resolve()?;
    let r = experiments::single_realization(&resolved, a.seed)?;
    let power = match &a.powermap {
        Some(p) => PowerMap::load_csv(p, resolved.config().noise_w()?)?,
        None => r.power,
    };
    let scenario = resolved.weighted(r.scenario, a.alpha, a.scenario.smoothing.into())?;
    let objective: Objective = a.objective.into();
    let mut cfg = SolverConfig::new(objective, a.prioritize);
    if objective == Objective::Pf {
        cfg = cfg.piecewise(PwlSpec::default());
    }
    Ok((scenario, power, cfg))
}

fn export_lp(a: &ExportArgs) -> opcell::Result<()> {
    let (scenario, q, cfg) = instance(&a.solve)?;
    let lambda = a.lambda.unwrap_or_else(|| exact::default_lambda(&q));
    let lp = lp_export::export_milp(&scenario, &q, &cfg, lambda)?;
    write_file(&a.out, &lp)?;
    info!("LP model written to {}", a.out.display());
    Ok(())
}

fn validate_solution(a: &ValidateArgs) -> opcell::Result<u8> {
    let (scenario, q, mut cfg) = instance(&a.solve)?;
    // Parity is judged on the exact objective, not its piecewise surrogate.
    cfg.pf_log_mode = exact::PfLogMode::ExactLog;
    let text = std::fs::read_to_string(&a.solution).map_err(|e| Error::Io {
        path: a.solution.display().to_string(),
        source: e,
    })?;
    let report = lp_export::validate_external_solution(&text, &scenario, &q, &cfg)?;
    println!("objective,{:.15e}", report.objective);
    println!("internal_optimum,{:.15e}", report.internal_optimum);
    println!("objective_parity,{}", report.objective_parity);
    println!("below_optimum,{}", report.below_optimum);
    if !report.objective_parity {
        eprintln!("error: reported objective disagrees with the recomputed objective");
        return Ok(EXIT_DATA);
    }
    Ok(0)
}
