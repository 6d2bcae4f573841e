//! Command-line driver. Each subcommand runs one task from the
//! configuration and writes its artifacts into the output directory; the
//! `report` subcommand aggregates what the other tasks wrote.
//!
//! Exit codes: 0 success, 2 a scientific check or solve failed, 3 bad
//! configuration or I/O, 4 the report is missing task outputs.

use clap::{Parser, Subcommand};
use robin1d::config::{
    parse_run_config, ConfigError, MultiplicityBlock, ProblemBlock, RunConfig, Task,
};
use robin1d::continuation::{
    count_solutions_multistart, epsilon_family_jobs, BranchTag, ContinuationError,
};
use robin1d::io::{self, BranchSidecar, IoError};
use robin1d::report::{
    oracle_report, summarize_family, BranchSummary, MultiplicityEntry, OracleReport,
    RunReport, VariationalFragment, FRAG_BRANCHES, FRAG_MULTIPLICITY, FRAG_ORACLE,
    FRAG_VARIATIONAL, REPORT_FILE,
};
use robin1d::solver::{
    constant_field, deregularize, positive_run_seed, sine_bump, solve_dirichlet,
    solve_neumann, Formulation, ProblemSpec, Solution, SolverError,
};
use robin1d::variational::{variational_summary, VariationalError};
use robin1d::weights::check_hypotheses;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_SCIENTIFIC: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_MISSING: u8 = 4;

/// Default alpha grid for the `mu` map in the variational task.
const MU_GRID: [f64; 5] = [-2.0, -1.0, -0.5, -0.25, 0.0];

#[derive(Parser)]
#[command(
    name = "robin1d",
    version,
    about = "Continuation and verification toolkit for a 1D indefinite sublinear \
             Robin problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file; a built-in default is used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Continue up to N family members concurrently.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Mesh resolution override.
    #[arg(long = "n-cells", global = true, value_name = "N")]
    n_cells: Option<usize>,
    /// Robin parameter override (also replaces the multiplicity list).
    #[arg(long, global = true, value_name = "ALPHA", allow_hyphen_values = true)]
    alpha: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the discretization against the closed-form solution.
    VerifyOracle,
    /// One deregularized solve at the configured alpha.
    Solve,
    /// Continue the regularized branch family and export CSVs.
    Continue,
    /// Compute the variational thresholds and the weight hypotheses.
    Variational,
    /// Count solutions by deterministic multistart at each configured alpha.
    Multiplicity,
    /// Aggregate task outputs into one JSON report.
    Report,
}

impl Command {
    fn task(self) -> Task {
        match self {
            Command::VerifyOracle => Task::VerifyOracle,
            Command::Solve => Task::Solve,
            Command::Continue => Task::Continue,
            Command::Variational => Task::Variational,
            Command::Multiplicity => Task::Multiplicity,
            Command::Report => Task::Report,
        }
    }
}

enum Failure {
    Config(ConfigError),
    Io(IoError),
    Scientific(String),
    Missing(Vec<String>),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(ConfigError::Io { .. }) => EXIT_IO,
            Failure::Config(_) => EXIT_IO,
            Failure::Io(_) => EXIT_IO,
            Failure::Scientific(_) => EXIT_SCIENTIFIC,
            Failure::Missing(_) => EXIT_MISSING,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Io(e)
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        Failure::Scientific(e.to_string())
    }
}

impl From<VariationalError> for Failure {
    fn from(e: VariationalError) -> Self {
        Failure::Scientific(e.to_string())
    }
}

impl From<ContinuationError> for Failure {
    fn from(e: ContinuationError) -> Self {
        match e {
            ContinuationError::BadInput(msg) => {
                Failure::Config(ConfigError::Invalid(msg))
            }
            other => Failure::Scientific(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("robin1d: {e}"),
                Failure::Io(e) => eprintln!("robin1d: {e}"),
                Failure::Scientific(msg) => eprintln!("robin1d: {msg}"),
                Failure::Missing(list) => {
                    eprintln!("robin1d: missing task outputs:");
                    for item in list {
                        eprintln!("  {item}");
                    }
                    eprintln!("(run the corresponding subcommands first)");
                }
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut config = load_config(cli)?;
    apply_overrides(cli, &mut config)?;
    let out = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out).map_err(|source| IoError::File {
        path: out.display().to_string(),
        source,
    })?;
    match cli.command {
        Command::VerifyOracle => cmd_verify_oracle(&config, &out),
        Command::Solve => cmd_solve(&config, &out),
        Command::Continue => cmd_continue(&config, &out, cli.jobs.max(1)),
        Command::Variational => cmd_variational(&config, &out),
        Command::Multiplicity => cmd_multiplicity(&config, &out),
        Command::Report => cmd_report(&config, &out),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| {
                Failure::Config(ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })
            })?;
            Ok(parse_run_config(&text)?)
        }
        None => {
            // Built-in defaults so the common invocations work bare.
            let mut config = RunConfig::default();
            match cli.command {
                Command::VerifyOracle => {
                    config.problem = ProblemBlock::oracle_default();
                }
                Command::Continue => {
                    config.problem.formulation = Formulation::RForm;
                    config.continuation = Some(Default::default());
                }
                Command::Multiplicity => {
                    config.multiplicity = Some(MultiplicityBlock::default());
                }
                _ => {}
            }
            config.tasks = vec![cli.command.task()];
            Ok(config)
        }
    }
}

fn apply_overrides(cli: &Cli, config: &mut RunConfig) -> Result<(), Failure> {
    if let Some(out) = &cli.out {
        config.output_dir = out.display().to_string();
    }
    if let Some(n) = cli.n_cells {
        config.problem.n_cells = n;
    }
    if let Some(alpha) = cli.alpha {
        config.problem.alpha = alpha;
        if let Some(m) = &mut config.multiplicity {
            m.alphas = vec![alpha];
        }
    }
    config.validate()?;
    Ok(())
}

fn cmd_verify_oracle(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let rep = oracle_report(&config.problem, &config.solver.solver_config())?;
    for (n, r) in rep.n_cells.iter().zip(&rep.residual_sups) {
        println!("n = {n:5}  residual_sup = {r:.6e}");
    }
    println!(
        "observed order {:.4} (want 2.0 +- 0.2), finest residual {:.3e} (allowed {:.3e})",
        rep.observed_order,
        rep.residual_sups[rep.residual_sups.len() - 1],
        rep.finest_allowed
    );
    let passed = rep.passed;
    io::write_json(&out.join(FRAG_ORACLE), &vec![rep])?;
    if passed {
        println!("verify-oracle: pass");
        Ok(())
    } else {
        Err(Failure::Scientific(
            "closed-form residual check failed".into(),
        ))
    }
}

/// Deregularized solve from a ladder of default seeds, first nontrivial
/// result wins. The flux-free and Dirichlet limits go through their
/// dedicated routes.
fn solve_once(problem: &ProblemSpec, config: &RunConfig) -> Result<Solution, Failure> {
    let solver = config.solver.solver_config();
    if problem.is_dirichlet() {
        let seed = positive_run_seed(problem)
            .unwrap_or_else(|_| sine_bump(&problem.mesh, 1.0));
        return Ok(solve_dirichlet(problem, &seed, &solver)?);
    }
    if problem.alpha == 0.0 && problem.formulation == Formulation::PForm {
        return Ok(solve_neumann(
            problem,
            &constant_field(&problem.mesh, 1.0),
            &solver,
        )?);
    }
    let schedule = config.solver.schedule();
    let mass = robin1d::mesh::integrate_domain(&problem.mesh, &problem.a);
    let scale = if mass < 0.0 {
        (-mass / 2.0).powf(1.0 / (1.0 - problem.q))
    } else {
        1.0
    };
    let mut seeds: Vec<Vec<f64>> = vec![constant_field(&problem.mesh, scale)];
    if let Ok(shaped) = positive_run_seed(problem) {
        seeds.push(shaped);
    }
    seeds.push(sine_bump(&problem.mesh, scale));
    let mut last: Option<Solution> = None;
    for seed in &seeds {
        match deregularize(problem, seed, &schedule, &solver) {
            Ok(sol) if !sol.is_trivial() => return Ok(sol),
            Ok(sol) => last = Some(sol),
            Err(_) => {}
        }
    }
    last.ok_or_else(|| {
        Failure::Scientific("no seed converged at the configured alpha".into())
    })
}

fn cmd_solve(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let problem = config.problem.build()?;
    let sol = solve_once(&problem, config)?;
    let path = out.join("solution.txt");
    io::write_solution(&path, &problem, &sol)?;
    println!(
        "alpha = {}  sup = {:.6e}  residual = {:.3e}  positivity = {}  ({} iterations)",
        sol.alpha,
        sol.sup_norm(),
        sol.residual_sup,
        sol.positivity.tag.as_str(),
        sol.newton_iters
    );
    println!("wrote {}", path.display());
    if sol.is_trivial() {
        return Err(Failure::Scientific(
            "only the trivial solution was reached from the default seeds".into(),
        ));
    }
    Ok(())
}

/// File-name fragment for one family member: `branch_eps_0.001.csv` etc.
fn eps_slug(eps: f64) -> String {
    format!("{eps}")
}

fn cmd_continue(config: &RunConfig, out: &Path, jobs: usize) -> Result<(), Failure> {
    let block = config.continuation.clone().ok_or_else(|| {
        ConfigError::Invalid("the continue task needs a [continuation] section".into())
    })?;
    // Branches bifurcating from the trivial line live in the rescaled
    // formulation; build the problem there regardless of the solve setting.
    let mut problem_block = config.problem.clone();
    problem_block.formulation = Formulation::RForm;
    let problem = problem_block.build()?;
    let ccfg = block.continuation_config(&config.solver.solver_config());
    let family = epsilon_family_jobs(&problem, &block.eps_list, &ccfg, jobs)?;

    for ((eps, alpha1), branch) in family
        .epsilons
        .iter()
        .zip(&family.alpha1s)
        .zip(&family.branches)
    {
        let slug = eps_slug(*eps);
        io::write_text(&out.join(format!("branch_eps_{slug}.csv")), &io::branch_csv(branch))?;
        io::write_json(
            &out.join(format!("branch_eps_{slug}.json")),
            &BranchSidecar::new(*eps, branch, config),
        )?;
        io::write_text(
            &out.join(format!("branch_eps_{slug}.plot")),
            &io::branch_plot_columns(branch),
        )?;
        println!(
            "eps = {eps:<8} alpha1 = {alpha1:.6}  {} points, {} turning, ends {:?}",
            branch.points.len(),
            branch.turning_points.len(),
            branch.end_tag
        );
    }
    let summaries = summarize_family(&family);
    io::write_json(&out.join(FRAG_BRANCHES), &summaries)?;
    println!("wrote {} branch set(s) under {}", summaries.len(), out.display());

    if let Some((eps, msg)) = &family.failure {
        return Err(Failure::Scientific(format!(
            "family member eps = {eps} failed: {msg} (partial outputs retained)"
        )));
    }
    // A branch that broke down mid-continuation is also a family failure.
    if let Some(bad) = summaries.iter().find(|s| s.end_tag == BranchTag::Failure) {
        return Err(Failure::Scientific(format!(
            "branch eps = {} ended in corrector breakdown (partial outputs retained)",
            bad.epsilon
        )));
    }
    Ok(())
}

fn cmd_variational(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let problem = config.problem.build()?;
    let hypothesis = check_hypotheses(&problem.mesh, &problem.a);
    let result = variational_summary(&problem, &config.solver.solver_config(), &MU_GRID)?;
    println!(
        "c_a = {}  alpha_tilde = {}  sigma = {}  alpha_p = {}",
        result.c_a, result.alpha_tilde, result.sigma, result.alpha_p
    );
    println!(
        "fold bound: {} <= alpha_s <= {}",
        result.alpha_s_lower, result.alpha_s_upper
    );
    for (al, mu) in &result.mu_of_alpha {
        println!("mu({al}) = {mu}");
    }
    io::write_json(
        &out.join(FRAG_VARIATIONAL),
        &VariationalFragment { hypothesis, result },
    )?;
    Ok(())
}

fn cmd_multiplicity(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let block = config.multiplicity.clone().ok_or_else(|| {
        ConfigError::Invalid("the multiplicity task needs a [multiplicity] section".into())
    })?;
    if block.alphas.is_empty() {
        return Err(Failure::Config(ConfigError::Invalid(
            "the multiplicity task needs alphas (config or --alpha)".into(),
        )));
    }
    let problem = config.problem.build()?;
    let solver = config.solver.solver_config();
    let mut table = Vec::with_capacity(block.alphas.len());
    for &alpha in &block.alphas {
        let (count, solutions) =
            count_solutions_multistart(&problem, alpha, &solver, block.n_seeds)?;
        let sups: Vec<f64> = solutions.iter().map(|s| s.sup_norm()).collect();
        println!(
            "alpha = {alpha:<8} {count} solution(s){}",
            if sups.is_empty() {
                String::new()
            } else {
                format!(
                    "  sup = [{}]",
                    sups.iter()
                        .map(|s| format!("{s:.6e}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            }
        );
        let aligned = problem.with_alpha(alpha);
        for (i, sol) in solutions.iter().enumerate() {
            io::write_solution(
                &out.join(format!("multiplicity_alpha_{alpha}_sol_{i}.txt")),
                &aligned,
                sol,
            )?;
        }
        table.push(MultiplicityEntry {
            alpha,
            count,
            sup_norms: sups,
        });
    }
    io::write_json(&out.join(FRAG_MULTIPLICITY), &table)?;
    Ok(())
}

fn cmd_report(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let mut expected: Vec<(&str, Task)> = Vec::new();
    for task in &config.tasks {
        match task {
            Task::VerifyOracle => expected.push((FRAG_ORACLE, *task)),
            Task::Variational => expected.push((FRAG_VARIATIONAL, *task)),
            Task::Multiplicity => expected.push((FRAG_MULTIPLICITY, *task)),
            Task::Continue => expected.push((FRAG_BRANCHES, *task)),
            Task::Solve | Task::Report => {}
        }
    }
    let missing: Vec<String> = expected
        .iter()
        .filter(|(frag, _)| !out.join(frag).exists())
        .map(|(frag, task)| format!("{} (from the {task} task)", out.join(frag).display()))
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Missing(missing));
    }

    let mut report = RunReport::default();
    for (frag, _) in &expected {
        let value = io::read_json_value(&out.join(frag))?;
        match *frag {
            FRAG_ORACLE => {
                let v: Vec<OracleReport> =
                    serde_json::from_value(value).map_err(IoError::from)?;
                report.oracle = v;
            }
            FRAG_VARIATIONAL => {
                let v: VariationalFragment =
                    serde_json::from_value(value).map_err(IoError::from)?;
                report.hypothesis = Some(v.hypothesis);
                report.variational = Some(v.result);
            }
            FRAG_MULTIPLICITY => {
                let v: Vec<MultiplicityEntry> =
                    serde_json::from_value(value).map_err(IoError::from)?;
                report.multiplicity = v;
            }
            FRAG_BRANCHES => {
                let v: Vec<BranchSummary> =
                    serde_json::from_value(value).map_err(IoError::from)?;
                report.branches = v;
            }
            _ => unreachable!(),
        }
    }
    report.assemble();
    io::write_json(&out.join(REPORT_FILE), &report)?;
    for c in &report.checks {
        println!(
            "{}  {}  measured = {}  tolerance = {}",
            if c.passed { "pass" } else { "FAIL" },
            c.id,
            c.measured,
            c.tolerance
        );
    }
    println!("wrote {}", out.join(REPORT_FILE).display());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Scientific(
            "one or more report checks failed".into(),
        ))
    }
}
