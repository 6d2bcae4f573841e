//! Run configuration: a flat sectioned `key = value` text format and the
//! typed blocks the command-line tasks are built from.
//!
//! The format is deliberately schema-free so configs diff cleanly in
//! regression tests:
//!
//! ```text
//! # lines starting with '#' are comments
//! tasks = continue, report
//! output_dir = out
//!
//! [problem]
//! x_left = 0
//! x_right = 1
//! n_cells = 400
//! weight = cosine_dip        # builtin_aq | cosine_dip | affine | tabulated
//! weight_c = 0.1
//! q = 0.5
//! alpha = 0                  # -inf selects the Dirichlet problem
//! formulation = primitive    # or: rescaled
//!
//! [solver]
//! newton_tol = 1e-10
//! epsilon = 0
//!
//! [continuation]
//! eps_list = 1e-1, 1e-2, 1e-3
//! alpha_min = -10
//! alpha_max = 10
//!
//! [multiplicity]
//! alphas = 0.1, -0.5
//! n_seeds = 16
//! ```
//!
//! Unknown sections, unknown keys, duplicate keys and malformed values are
//! all hard errors carrying the offending line number. Numeric values
//! accept `pi` and `-pi` as spellings of ±π (the closed-form verification
//! weight lives on `[0, π]`) and `-inf` for the Dirichlet limit.

use crate::continuation::{ContinuationConfig, CONTACT_TOL};
use crate::mesh::build_mesh;
use crate::solver::{eps_schedule_to, Formulation, ProblemSpec, SolverConfig};
use crate::weights::{parse_weight_table, WeightKind, WeightSpec};
use serde::Serialize;
use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    VerifyOracle,
    Solve,
    Continue,
    Variational,
    Multiplicity,
    Report,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::VerifyOracle => "verify_oracle",
            Task::Solve => "solve",
            Task::Continue => "continue",
            Task::Variational => "variational",
            Task::Multiplicity => "multiplicity",
            Task::Report => "report",
        }
    }

    /// Accepts both the config spelling (`verify_oracle`) and the
    /// subcommand spelling (`verify-oracle`).
    pub fn parse(s: &str) -> Option<Task> {
        Some(match s.replace('-', "_").as_str() {
            "verify_oracle" => Task::VerifyOracle,
            "solve" => Task::Solve,
            "continue" => Task::Continue,
            "variational" => Task::Variational,
            "multiplicity" => Task::Multiplicity,
            "report" => Task::Report,
            _ => return None,
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight selection as configured; `Tabulated` keeps the path, the table
/// itself is only read when the problem is built.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    BuiltinAq,
    CosineDip { c: f64 },
    Affine { slope: f64, intercept: f64 },
    Tabulated { path: String },
}

impl WeightChoice {
    pub fn kind_name(&self) -> &'static str {
        match self {
            WeightChoice::BuiltinAq => "builtin_aq",
            WeightChoice::CosineDip { .. } => "cosine_dip",
            WeightChoice::Affine { .. } => "affine",
            WeightChoice::Tabulated { .. } => "tabulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemBlock {
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
    pub weight: WeightChoice,
    /// Multiplies the sampled weight after validation. A diagnostic knob:
    /// `-1` flips the sign so the closed-form verification can demonstrate
    /// a broken identity. Constant-scale-invariant quantities do not see
    /// it, everything else restricts it to the solve/verify tasks.
    pub weight_scale: f64,
    pub allow_definite: bool,
    pub q: f64,
    pub alpha: f64,
    pub formulation: Formulation,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        ProblemBlock {
            x_left: 0.0,
            x_right: 1.0,
            n_cells: 400,
            weight: WeightChoice::CosineDip { c: 0.1 },
            weight_scale: 1.0,
            allow_definite: false,
            q: 0.5,
            alpha: 0.0,
            formulation: Formulation::PForm,
        }
    }
}

impl ProblemBlock {
    /// Domain, weight and exponent of the closed-form verification
    /// problem: `a_q` on `[0, π]`.
    pub fn oracle_default() -> Self {
        ProblemBlock {
            x_right: PI,
            n_cells: 200,
            weight: WeightChoice::BuiltinAq,
            alpha: 1.0,
            formulation: Formulation::RForm,
            ..ProblemBlock::default()
        }
    }

    pub fn weight_spec(&self) -> Result<WeightSpec, ConfigError> {
        let kind = match &self.weight {
            WeightChoice::BuiltinAq => WeightKind::BuiltinAq { q: self.q },
            WeightChoice::CosineDip { c } => WeightKind::CosineDip { c: *c },
            WeightChoice::Affine { slope, intercept } => WeightKind::Affine {
                slope: *slope,
                intercept: *intercept,
            },
            WeightChoice::Tabulated { path } => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                        path: path.clone(),
                        source,
                    })?;
                let points = parse_weight_table(&text)
                    .map_err(|e| ConfigError::Invalid(format!("{path}: {e}")))?;
                WeightKind::Tabulated { points }
            }
        };
        Ok(if self.allow_definite {
            WeightSpec::definite(kind)
        } else {
            WeightSpec::new(kind)
        })
    }

    /// Build the full problem instance, reading the weight table from disk
    /// when one is configured.
    pub fn build(&self) -> Result<ProblemSpec, ConfigError> {
        let mesh = build_mesh(self.x_left, self.x_right, self.n_cells)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let spec = self.weight_spec()?;
        let mut problem =
            ProblemSpec::new(mesh, spec, self.q, self.alpha, self.formulation)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.weight_scale != 1.0 {
            for v in problem.a.iter_mut() {
                *v *= self.weight_scale;
            }
        }
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverBlock {
    /// Terminal regularization; 0 solves the original problem.
    pub epsilon: f64,
    /// Explicit deregularization ladder; the default ladder down to
    /// `epsilon` is used when absent.
    pub eps_schedule: Option<Vec<f64>>,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub damping_min: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let c = SolverConfig::default();
        SolverBlock {
            epsilon: c.epsilon,
            eps_schedule: None,
            newton_tol: c.newton_tol,
            max_iters: c.max_iters,
            damping_min: c.damping_min,
        }
    }
}

impl SolverBlock {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            newton_tol: self.newton_tol,
            max_iters: self.max_iters,
            damping_min: self.damping_min,
            nonneg_projection: true,
        }
    }

    pub fn schedule(&self) -> Vec<f64> {
        match &self.eps_schedule {
            Some(s) => s.clone(),
            None => eps_schedule_to(self.epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationBlock {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub step_init: f64,
    pub max_points: usize,
    pub contact_tol: f64,
    /// Branch per member, strictly decreasing; the last member is the
    /// terminal branch.
    pub eps_list: Vec<f64>,
    pub compute_gamma1: bool,
}

impl Default for ContinuationBlock {
    fn default() -> Self {
        let c = ContinuationConfig::default();
        ContinuationBlock {
            alpha_min: c.alpha_min,
            alpha_max: c.alpha_max,
            step_min: c.step_min,
            step_max: c.step_max,
            step_init: c.step_init,
            max_points: c.max_points,
            contact_tol: CONTACT_TOL,
            eps_list: vec![1e-1, 1e-2, 1e-3],
            compute_gamma1: true,
        }
    }
}

impl ContinuationBlock {
    pub fn continuation_config(&self, solver: &SolverConfig) -> ContinuationConfig {
        ContinuationConfig {
            step_min: self.step_min,
            step_max: self.step_max,
            step_init: self.step_init,
            max_points: self.max_points,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            contact_tol: self.contact_tol,
            solver: solver.clone(),
            compute_gamma1: self.compute_gamma1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityBlock {
    pub alphas: Vec<f64>,
    pub n_seeds: usize,
}

impl Default for MultiplicityBlock {
    fn default() -> Self {
        MultiplicityBlock {
            alphas: Vec::new(),
            n_seeds: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tasks: Vec<Task>,
    pub output_dir: String,
    pub problem: ProblemBlock,
    pub solver: SolverBlock,
    pub continuation: Option<ContinuationBlock>,
    pub multiplicity: Option<MultiplicityBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tasks: Vec::new(),
            output_dir: "out".into(),
            problem: ProblemBlock::default(),
            solver: SolverBlock::default(),
            continuation: None,
            multiplicity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Section {
    Top,
    Problem,
    Solver,
    Continuation,
    Multiplicity,
}

impl Section {
    fn name(&self) -> &'static str {
        match self {
            Section::Top => "top level",
            Section::Problem => "problem",
            Section::Solver => "solver",
            Section::Continuation => "continuation",
            Section::Multiplicity => "multiplicity",
        }
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = match v {
        "pi" => PI,
        "-pi" => -PI,
        _ => v
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("{key}: `{v}` is not a number")))?,
    };
    if x.is_nan() {
        return Err(parse_err(line, format!("{key}: NaN is not a value")));
    }
    Ok(x)
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>()
        .map_err(|_| parse_err(line, format!("{key}: `{v}` is not a nonnegative integer")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("{key}: `{v}` is not true/false"))),
    }
}

fn parse_f64_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(|item| parse_f64(line, key, item.trim()))
        .collect()
}

/// Raw key-value state while the text is being consumed; turned into the
/// typed blocks afterwards so the weight keys can be cross-checked.
#[derive(Default)]
struct ProblemDraft {
    x_left: Option<f64>,
    x_right: Option<f64>,
    n_cells: Option<usize>,
    weight: Option<(usize, String)>,
    weight_c: Option<(usize, f64)>,
    weight_slope: Option<(usize, f64)>,
    weight_intercept: Option<(usize, f64)>,
    weight_table: Option<(usize, String)>,
    weight_scale: Option<f64>,
    allow_definite: Option<bool>,
    q: Option<f64>,
    alpha: Option<f64>,
    formulation: Option<Formulation>,
}

impl ProblemDraft {
    fn finish(self) -> Result<ProblemBlock, ConfigError> {
        let d = ProblemBlock::default();
        let weight = match &self.weight {
            None => {
                for (set, key) in [
                    (self.weight_c.is_some(), "weight_c"),
                    (self.weight_slope.is_some(), "weight_slope"),
                    (self.weight_intercept.is_some(), "weight_intercept"),
                    (self.weight_table.is_some(), "weight_table"),
                ] {
                    if set {
                        return Err(ConfigError::Invalid(format!(
                            "{key} is set but no weight kind is selected"
                        )));
                    }
                }
                d.weight.clone()
            }
            Some((line, name)) => {
                let unused: &[(bool, &str)] = match name.as_str() {
                    "builtin_aq" => &[
                        (self.weight_c.is_some(), "weight_c"),
                        (self.weight_slope.is_some(), "weight_slope"),
                        (self.weight_intercept.is_some(), "weight_intercept"),
                        (self.weight_table.is_some(), "weight_table"),
                    ],
                    "cosine_dip" => &[
                        (self.weight_slope.is_some(), "weight_slope"),
                        (self.weight_intercept.is_some(), "weight_intercept"),
                        (self.weight_table.is_some(), "weight_table"),
                    ],
                    "affine" => &[
                        (self.weight_c.is_some(), "weight_c"),
                        (self.weight_table.is_some(), "weight_table"),
                    ],
                    "tabulated" => &[
                        (self.weight_c.is_some(), "weight_c"),
                        (self.weight_slope.is_some(), "weight_slope"),
                        (self.weight_intercept.is_some(), "weight_intercept"),
                    ],
                    _ => {
                        return Err(parse_err(
                            *line,
                            format!(
                                "weight: `{name}` is not one of \
                                 builtin_aq/cosine_dip/affine/tabulated"
                            ),
                        ))
                    }
                };
                for (set, key) in unused {
                    if *set {
                        return Err(ConfigError::Invalid(format!(
                            "{key} does not apply to weight = {name}"
                        )));
                    }
                }
                match name.as_str() {
                    "builtin_aq" => WeightChoice::BuiltinAq,
                    "cosine_dip" => WeightChoice::CosineDip {
                        c: self.weight_c.map(|(_, c)| c).unwrap_or(0.1),
                    },
                    "affine" => {
                        let slope = self.weight_slope.map(|(_, s)| s).ok_or_else(|| {
                            ConfigError::Invalid("affine weight needs weight_slope".into())
                        })?;
                        let intercept =
                            self.weight_intercept.map(|(_, s)| s).ok_or_else(|| {
                                ConfigError::Invalid(
                                    "affine weight needs weight_intercept".into(),
                                )
                            })?;
                        WeightChoice::Affine { slope, intercept }
                    }
                    _ => {
                        let path = self.weight_table.map(|(_, p)| p).ok_or_else(|| {
                            ConfigError::Invalid(
                                "tabulated weight needs weight_table = <path>".into(),
                            )
                        })?;
                        WeightChoice::Tabulated { path }
                    }
                }
            }
        };
        Ok(ProblemBlock {
            x_left: self.x_left.unwrap_or(d.x_left),
            x_right: self.x_right.unwrap_or(d.x_right),
            n_cells: self.n_cells.unwrap_or(d.n_cells),
            weight,
            weight_scale: self.weight_scale.unwrap_or(1.0),
            allow_definite: self.allow_definite.unwrap_or(false),
            q: self.q.unwrap_or(d.q),
            alpha: self.alpha.unwrap_or(d.alpha),
            formulation: self.formulation.unwrap_or(d.formulation),
        })
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut section = Section::Top;
    let mut seen: HashSet<(Section, String)> = HashSet::new();
    let mut seen_sections: HashSet<Section> = HashSet::new();

    let mut tasks: Option<Vec<Task>> = None;
    let mut output_dir: Option<String> = None;
    let mut problem = ProblemDraft::default();
    let mut solver = SolverBlock::default();
    let mut cont = ContinuationBlock::default();
    let mut mult = MultiplicityBlock::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            section = match name {
                "problem" => Section::Problem,
                "solver" => Section::Solver,
                "continuation" => Section::Continuation,
                "multiplicity" => Section::Multiplicity,
                _ => return Err(parse_err(line, format!("unknown section [{name}]"))),
            };
            if !seen_sections.insert(section) {
                return Err(parse_err(line, format!("duplicate section [{name}]")));
            }
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected `key = value` or `[section]`"))?;
        let key = key.trim();
        let v = value.trim();
        if key.is_empty() {
            return Err(parse_err(line, "empty key"));
        }
        if !seen.insert((section, key.to_string())) {
            return Err(parse_err(
                line,
                format!("duplicate key `{key}` in {}", section.name()),
            ));
        }
        match section {
            Section::Top => match key {
                "tasks" => {
                    let mut list = Vec::new();
                    for item in v.split(',') {
                        let item = item.trim();
                        if item.is_empty() {
                            continue;
                        }
                        list.push(Task::parse(item).ok_or_else(|| {
                            parse_err(line, format!("tasks: unknown task `{item}`"))
                        })?);
                    }
                    tasks = Some(list);
                }
                "output_dir" => {
                    if v.is_empty() {
                        return Err(parse_err(line, "output_dir: empty path"));
                    }
                    output_dir = Some(v.to_string());
                }
                _ => {
                    return Err(parse_err(
                        line,
                        format!("unknown top-level key `{key}` (before any [section])"),
                    ))
                }
            },
            Section::Problem => match key {
                "x_left" => problem.x_left = Some(parse_f64(line, key, v)?),
                "x_right" => problem.x_right = Some(parse_f64(line, key, v)?),
                "n_cells" => problem.n_cells = Some(parse_usize(line, key, v)?),
                "weight" => problem.weight = Some((line, v.to_string())),
                "weight_c" => problem.weight_c = Some((line, parse_f64(line, key, v)?)),
                "weight_slope" => {
                    problem.weight_slope = Some((line, parse_f64(line, key, v)?))
                }
                "weight_intercept" => {
                    problem.weight_intercept = Some((line, parse_f64(line, key, v)?))
                }
                "weight_table" => {
                    if v.is_empty() {
                        return Err(parse_err(line, "weight_table: empty path"));
                    }
                    problem.weight_table = Some((line, v.to_string()));
                }
                "weight_scale" => problem.weight_scale = Some(parse_f64(line, key, v)?),
                "allow_definite" => {
                    problem.allow_definite = Some(parse_bool(line, key, v)?)
                }
                "q" => problem.q = Some(parse_f64(line, key, v)?),
                "alpha" => problem.alpha = Some(parse_f64(line, key, v)?),
                "formulation" => {
                    problem.formulation = Some(match v {
                        "primitive" | "P" | "p" => Formulation::PForm,
                        "rescaled" | "R" | "r" => Formulation::RForm,
                        _ => {
                            return Err(parse_err(
                                line,
                                format!("formulation: `{v}` is not primitive/rescaled"),
                            ))
                        }
                    })
                }
                _ => {
                    return Err(parse_err(line, format!("unknown key `{key}` in [problem]")))
                }
            },
            Section::Solver => match key {
                "epsilon" => solver.epsilon = parse_f64(line, key, v)?,
                "eps_schedule" => solver.eps_schedule = Some(parse_f64_list(line, key, v)?),
                "newton_tol" => solver.newton_tol = parse_f64(line, key, v)?,
                "max_iters" => solver.max_iters = parse_usize(line, key, v)?,
                "damping_min" => solver.damping_min = parse_f64(line, key, v)?,
                _ => return Err(parse_err(line, format!("unknown key `{key}` in [solver]"))),
            },
            Section::Continuation => match key {
                "alpha_min" => cont.alpha_min = parse_f64(line, key, v)?,
                "alpha_max" => cont.alpha_max = parse_f64(line, key, v)?,
                "step_min" => cont.step_min = parse_f64(line, key, v)?,
                "step_max" => cont.step_max = parse_f64(line, key, v)?,
                "step_init" => cont.step_init = parse_f64(line, key, v)?,
                "max_points" => cont.max_points = parse_usize(line, key, v)?,
                "contact_tol" => cont.contact_tol = parse_f64(line, key, v)?,
                "eps_list" => cont.eps_list = parse_f64_list(line, key, v)?,
                "compute_gamma1" => cont.compute_gamma1 = parse_bool(line, key, v)?,
                _ => {
                    return Err(parse_err(
                        line,
                        format!("unknown key `{key}` in [continuation]"),
                    ))
                }
            },
            Section::Multiplicity => match key {
                "alphas" => mult.alphas = parse_f64_list(line, key, v)?,
                "n_seeds" => mult.n_seeds = parse_usize(line, key, v)?,
                _ => {
                    return Err(parse_err(
                        line,
                        format!("unknown key `{key}` in [multiplicity]"),
                    ))
                }
            },
        }
    }

    let config = RunConfig {
        tasks: tasks.unwrap_or_default(),
        output_dir: output_dir.unwrap_or_else(|| "out".into()),
        problem: problem.finish()?,
        solver,
        continuation: seen_sections
            .contains(&Section::Continuation)
            .then_some(cont),
        multiplicity: seen_sections
            .contains(&Section::Multiplicity)
            .then_some(mult),
    };

    // Every requested task must have the blocks it reads.
    if !config.tasks.is_empty() && !seen_sections.contains(&Section::Problem) {
        return Err(ConfigError::Invalid(
            "tasks are requested but there is no [problem] section".into(),
        ));
    }
    if config.tasks.contains(&Task::Continue) && config.continuation.is_none() {
        return Err(ConfigError::Invalid(
            "the continue task needs a [continuation] section".into(),
        ));
    }
    if config.tasks.contains(&Task::Multiplicity) && config.multiplicity.is_none() {
        return Err(ConfigError::Invalid(
            "the multiplicity task needs a [multiplicity] section".into(),
        ));
    }
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Value-level sanity checks, re-run after command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |msg: String| Err(ConfigError::Invalid(msg));
        let p = &self.problem;
        if !(p.x_left.is_finite() && p.x_right.is_finite() && p.x_left < p.x_right) {
            return inv(format!("domain ({}, {}) is not an interval", p.x_left, p.x_right));
        }
        if p.n_cells < 2 {
            return inv(format!("n_cells = {} is too coarse", p.n_cells));
        }
        if !(0.0..1.0).contains(&p.q) {
            return inv(format!("q = {} not in [0, 1)", p.q));
        }
        if !(p.alpha.is_finite() || p.alpha == f64::NEG_INFINITY) {
            return inv(format!("alpha = {} (must be finite or -inf)", p.alpha));
        }
        if p.formulation == Formulation::RForm && !p.alpha.is_finite() {
            return inv("the rescaled formulation needs a finite alpha".into());
        }
        if !(p.weight_scale.is_finite() && p.weight_scale != 0.0) {
            return inv(format!("weight_scale = {} is not usable", p.weight_scale));
        }
        if p.weight_scale != 1.0 {
            let scale_safe = self
                .tasks
                .iter()
                .all(|t| matches!(t, Task::VerifyOracle | Task::Solve));
            if !scale_safe {
                return inv(
                    "weight_scale != 1 is a solve/verify diagnostic; the amplitude \
                     constants of the other tasks would silently disagree with it"
                        .into(),
                );
            }
        }
        match &p.weight {
            WeightChoice::CosineDip { c } if !c.is_finite() => {
                return inv("weight_c is not finite".into())
            }
            WeightChoice::Affine { slope, intercept }
                if !(slope.is_finite() && intercept.is_finite()) =>
            {
                return inv("affine weight coefficients are not finite".into())
            }
            _ => {}
        }

        let s = &self.solver;
        if !(s.newton_tol > 0.0 && s.newton_tol.is_finite()) {
            return inv(format!("newton_tol = {} must be positive", s.newton_tol));
        }
        if s.max_iters == 0 {
            return inv("max_iters = 0".into());
        }
        if !(s.damping_min > 0.0 && s.damping_min <= 1.0) {
            return inv(format!("damping_min = {} not in (0, 1]", s.damping_min));
        }
        if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
            return inv(format!("epsilon = {} must be finite and >= 0", s.epsilon));
        }
        if let Some(sch) = &s.eps_schedule {
            if sch.is_empty() {
                return inv("eps_schedule is empty".into());
            }
            if sch.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                return inv("eps_schedule has a negative or non-finite entry".into());
            }
            if sch.windows(2).any(|w| w[1] >= w[0]) {
                return inv("eps_schedule must be strictly decreasing".into());
            }
        }

        if let Some(c) = &self.continuation {
            if !(c.step_min > 0.0 && c.step_min <= c.step_init && c.step_init <= c.step_max)
            {
                return inv(format!(
                    "step bounds must satisfy 0 < step_min <= step_init <= step_max, \
                     got {} / {} / {}",
                    c.step_min, c.step_init, c.step_max
                ));
            }
            if c.max_points < 2 {
                return inv("max_points < 2".into());
            }
            if !(c.alpha_min < c.alpha_max) {
                return inv(format!(
                    "alpha window ({}, {}) is empty",
                    c.alpha_min, c.alpha_max
                ));
            }
            if !(c.contact_tol > 0.0) {
                return inv("contact_tol must be positive".into());
            }
            if c.eps_list.is_empty() {
                return inv("eps_list is empty".into());
            }
            if c.eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return inv("eps_list entries must be positive".into());
            }
            if c.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                return inv("eps_list must be strictly decreasing".into());
            }
        }

        if let Some(m) = &self.multiplicity {
            if self.tasks.contains(&Task::Multiplicity) && m.alphas.is_empty() {
                return inv("the multiplicity task needs alphas = <list>".into());
            }
            if m.alphas.iter().any(|a| !a.is_finite()) {
                return inv("multiplicity alphas must be finite".into());
            }
            if m.n_seeds < 8 {
                return inv(format!("n_seeds = {} (need at least 8)", m.n_seeds));
            }
        }

        if self.tasks.contains(&Task::VerifyOracle)
            && self.problem.weight != WeightChoice::BuiltinAq
        {
            return inv(format!(
                "verify_oracle checks the closed-form identity of the builtin_aq \
                 weight; weight = {} cannot be verified against it",
                self.problem.weight.kind_name()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# full configuration exercising every section
tasks = continue, multiplicity, report
output_dir = runs/dip

[problem]
x_left = 0
x_right = 1
n_cells = 800
weight = cosine_dip
weight_c = 0.1
q = 0.5
alpha = 0
formulation = rescaled

[solver]
epsilon = 0
eps_schedule = 1e-1, 1e-2, 1e-3, 0
newton_tol = 1e-11
max_iters = 80
damping_min = 0.001

[continuation]
alpha_min = -2
alpha_max = 2
step_min = 1e-5
step_max = 0.05
step_init = 0.005
max_points = 6000
contact_tol = 1e-3
eps_list = 1e-2, 1e-3
compute_gamma1 = false

[multiplicity]
alphas = 0.1, -0.5
n_seeds = 16
";

    #[test]
    fn full_config_round_trip() {
        let c = parse_run_config(FULL).unwrap();
        assert_eq!(c.tasks, vec![Task::Continue, Task::Multiplicity, Task::Report]);
        assert_eq!(c.output_dir, "runs/dip");
        assert_eq!(c.problem.n_cells, 800);
        assert_eq!(c.problem.weight, WeightChoice::CosineDip { c: 0.1 });
        assert_eq!(c.problem.formulation, Formulation::RForm);
        assert_eq!(
            c.solver.eps_schedule.as_deref(),
            Some(&[1e-1, 1e-2, 1e-3, 0.0][..])
        );
        let cont = c.continuation.as_ref().unwrap();
        assert_eq!(cont.eps_list, vec![1e-2, 1e-3]);
        assert!(!cont.compute_gamma1);
        assert_eq!(c.multiplicity.as_ref().unwrap().alphas, vec![0.1, -0.5]);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("cosine_dip"));
    }

    #[test]
    fn defaults_fill_everything_not_written() {
        let c = parse_run_config("[problem]\nq = 0.25\n").unwrap();
        assert!(c.tasks.is_empty());
        assert_eq!(c.output_dir, "out");
        assert_eq!(c.problem.q, 0.25);
        assert_eq!(c.problem.n_cells, 400);
        assert_eq!(c.problem.weight, WeightChoice::CosineDip { c: 0.1 });
        assert!(c.continuation.is_none());
        assert_eq!(c.solver.schedule().last(), Some(&0.0));
    }

    #[test]
    fn errors_carry_the_line_number() {
        let e = parse_run_config("[problem]\nn_cells = four\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse_run_config("[problem]\nq = 0.5\nq = 0.6\n").unwrap_err();
        assert!(e.to_string().contains("line 3") && e.to_string().contains("duplicate"));
        let e = parse_run_config("\n\nbogus_key = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_run_config("[nope]\n").unwrap_err();
        assert!(e.to_string().contains("unknown section"), "{e}");
        let e = parse_run_config("[problem]\nweight = gaussian\n").unwrap_err();
        assert!(e.to_string().contains("gaussian"), "{e}");
    }

    #[test]
    fn task_blocks_must_be_present() {
        let e = parse_run_config("tasks = continue\n[problem]\n").unwrap_err();
        assert!(e.to_string().contains("[continuation]"), "{e}");
        let e = parse_run_config("tasks = multiplicity\n[problem]\n[multiplicity]\n")
            .unwrap_err();
        assert!(e.to_string().contains("alphas"), "{e}");
        let e = parse_run_config("tasks = solve\n").unwrap_err();
        assert!(e.to_string().contains("[problem]"), "{e}");
    }

    #[test]
    fn oracle_task_requires_the_closed_form_weight() {
        let e = parse_run_config("tasks = verify_oracle\n[problem]\nweight = cosine_dip\n")
            .unwrap_err();
        assert!(e.to_string().contains("builtin_aq"), "{e}");
        let ok = parse_run_config(
            "tasks = verify_oracle\n[problem]\nweight = builtin_aq\nx_right = pi\n",
        )
        .unwrap();
        assert_eq!(ok.problem.x_right, PI);
    }

    #[test]
    fn weight_parameters_are_cross_checked() {
        let e = parse_run_config("[problem]\nweight = affine\n").unwrap_err();
        assert!(e.to_string().contains("weight_slope"), "{e}");
        let e = parse_run_config("[problem]\nweight = cosine_dip\nweight_slope = 1\n")
            .unwrap_err();
        assert!(e.to_string().contains("does not apply"), "{e}");
        let e = parse_run_config("[problem]\nweight_c = 0.2\n").unwrap_err();
        assert!(e.to_string().contains("no weight kind"), "{e}");
    }

    #[test]
    fn dirichlet_alpha_spelling() {
        let c = parse_run_config("[problem]\nalpha = -inf\n").unwrap();
        assert_eq!(c.problem.alpha, f64::NEG_INFINITY);
        let e = parse_run_config("[problem]\nalpha = -inf\nformulation = rescaled\n")
            .unwrap_err();
        assert!(e.to_string().contains("finite"), "{e}");
    }

    #[test]
    fn built_problem_matches_the_block() {
        let c = parse_run_config("[problem]\nn_cells = 40\nweight = cosine_dip\n").unwrap();
        let p = c.problem.build().unwrap();
        assert_eq!(p.mesh.n_cells(), 40);
        assert_eq!(p.a.len(), 41);
        // cos(2 pi x) - 0.1 at x = 0.
        assert!((p.a[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn tabulated_weight_reads_its_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tbl");
        std::fs::write(&path, "0 5\n0.35 5\n0.45 -6.6666666667\n1 -6.6666666667\n")
            .unwrap();
        let text = format!(
            "[problem]\nweight = tabulated\nweight_table = {}\n",
            path.display()
        );
        let c = parse_run_config(&text).unwrap();
        let p = c.problem.build().unwrap();
        assert!((p.a[0] - 5.0).abs() < 1e-9);
        let missing = format!(
            "[problem]\nweight = tabulated\nweight_table = {}/absent.tbl\n",
            dir.path().display()
        );
        let e = parse_run_config(&missing).unwrap().problem.build().unwrap_err();
        assert!(matches!(e, ConfigError::Io { .. }));
    }

    #[test]
    fn scale_knob_is_fenced_to_diagnostics() {
        let e = parse_run_config(
            "tasks = variational\n[problem]\nweight_scale = -1\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("weight_scale"), "{e}");
        let c = parse_run_config(
            "tasks = verify_oracle\n[problem]\nweight = builtin_aq\nx_right = pi\n\
             weight_scale = -1\n",
        )
        .unwrap();
        let p = c.problem.build().unwrap();
        let mid = p.a[p.mesh.n_cells() / 2];
        // a_q(pi/2) = r > 0, flipped negative.
        assert!(mid < 0.0);
    }
}
