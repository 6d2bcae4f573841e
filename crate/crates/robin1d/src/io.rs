//! File artifacts: the solution interchange text, branch CSV export with a
//! JSON sidecar, and the two-column plot files fed to external plotters.
//!
//! All floating point output uses the shortest round-trip representation,
//! so rereading a file reproduces the exact bits and identical runs diff
//! empty.

use crate::config::RunConfig;
use crate::continuation::{Branch, BranchTag};
use crate::solver::{Formulation, PositivityTag, ProblemSpec, Solution};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solution line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Format {
        line,
        msg: msg.into(),
    }
}

const SOLUTION_MAGIC: &str = "robin1d solution 1";

/// Everything the solution text carries. Decoupled from [`Solution`]: the
/// file stores the coarse positivity tag, not the dead-core intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionFile {
    pub alpha: f64,
    pub q: f64,
    pub epsilon: f64,
    pub formulation: Formulation,
    pub weight_kind: String,
    pub n_cells: usize,
    pub residual_sup: f64,
    pub positivity: PositivityTag,
    pub values: Vec<f64>,
}

/// Render a solution in the interchange format: a magic line, eight fixed
/// header lines, then one nodal value per line.
pub fn solution_text(problem: &ProblemSpec, sol: &Solution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SOLUTION_MAGIC}");
    let _ = writeln!(out, "alpha = {}", sol.alpha);
    let _ = writeln!(out, "q = {}", problem.q);
    let _ = writeln!(out, "epsilon = {}", sol.epsilon_used);
    let _ = writeln!(
        out,
        "formulation = {}",
        match problem.formulation {
            Formulation::PForm => "primitive",
            Formulation::RForm => "rescaled",
        }
    );
    let _ = writeln!(out, "weight = {}", problem.weight.kind_name());
    let _ = writeln!(out, "n_cells = {}", problem.mesh.n_cells());
    let _ = writeln!(out, "residual_sup = {}", sol.residual_sup);
    let _ = writeln!(out, "positivity = {}", sol.positivity.tag.as_str());
    for v in &sol.field {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_solution(text: &str) -> Result<SolutionFile, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| format_err(1, "empty input"))?;
    if magic.trim() != SOLUTION_MAGIC {
        return Err(format_err(1, format!("expected `{SOLUTION_MAGIC}`")));
    }
    let mut header = |key: &str| -> Result<(usize, String), IoError> {
        let (idx, raw) = lines
            .next()
            .ok_or_else(|| format_err(0, format!("missing header line `{key}`")))?;
        let line = idx + 1;
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| format_err(line, format!("expected `{key} = ...`")))?;
        if k.trim() != key {
            return Err(format_err(
                line,
                format!("expected key `{key}`, found `{}`", k.trim()),
            ));
        }
        Ok((line, v.trim().to_string()))
    };
    let num = |line: usize, key: &str, v: &str| -> Result<f64, IoError> {
        v.parse::<f64>()
            .map_err(|_| format_err(line, format!("{key}: `{v}` is not a number")))
    };

    let (l, v) = header("alpha")?;
    let alpha = num(l, "alpha", &v)?;
    if alpha.is_nan() {
        return Err(format_err(l, "alpha is NaN"));
    }
    let (l, v) = header("q")?;
    let q = num(l, "q", &v)?;
    if !(0.0..1.0).contains(&q) {
        return Err(format_err(l, format!("q = {q} not in [0, 1)")));
    }
    let (l, v) = header("epsilon")?;
    let epsilon = num(l, "epsilon", &v)?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(format_err(l, format!("epsilon = {epsilon} is not >= 0")));
    }
    let (l, v) = header("formulation")?;
    let formulation = match v.as_str() {
        "primitive" => Formulation::PForm,
        "rescaled" => Formulation::RForm,
        other => {
            return Err(format_err(
                l,
                format!("formulation `{other}` is not primitive/rescaled"),
            ))
        }
    };
    let (l, v) = header("weight")?;
    if v.is_empty() {
        return Err(format_err(l, "empty weight kind"));
    }
    let weight_kind = v;
    let (l, v) = header("n_cells")?;
    let n_cells: usize = v
        .parse()
        .map_err(|_| format_err(l, format!("n_cells: `{v}` is not an integer")))?;
    if n_cells < 1 {
        return Err(format_err(l, "n_cells must be at least 1"));
    }
    let (l, v) = header("residual_sup")?;
    let residual_sup = num(l, "residual_sup", &v)?;
    if !(residual_sup.is_finite() && residual_sup >= 0.0) {
        return Err(format_err(l, "residual_sup must be finite and >= 0"));
    }
    let (l, v) = header("positivity")?;
    let positivity = PositivityTag::parse(&v)
        .ok_or_else(|| format_err(l, format!("unknown positivity tag `{v}`")))?;

    let mut values = Vec::with_capacity(n_cells + 1);
    for (idx, raw) in lines {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format_err(line, format!("`{s}` is not a nodal value")))?;
        if !v.is_finite() {
            return Err(format_err(line, "non-finite nodal value"));
        }
        values.push(v);
        if values.len() > n_cells + 1 {
            return Err(format_err(line, "more values than mesh nodes"));
        }
    }
    if values.len() != n_cells + 1 {
        return Err(format_err(
            0,
            format!("{} values for {} nodes", values.len(), n_cells + 1),
        ));
    }
    Ok(SolutionFile {
        alpha,
        q,
        epsilon,
        formulation,
        weight_kind,
        n_cells,
        residual_sup,
        positivity,
        values,
    })
}

pub fn write_solution(
    path: &Path,
    problem: &ProblemSpec,
    sol: &Solution,
) -> Result<(), IoError> {
    std::fs::write(path, solution_text(problem, sol)).map_err(file_err(path))
}

pub fn read_solution(path: &Path) -> Result<SolutionFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    parse_solution(&text)
}

/// CSV rows of a branch, one point per row. `gamma1` is empty where it was
/// not computed.
pub fn branch_csv(branch: &Branch) -> String {
    let mut out = String::from(
        "alpha,epsilon,arclength,sup_norm,min_value,boundary_left,boundary_right,\
         gamma1,positivity_tag\n",
    );
    for p in &branch.points {
        let n = p.field.len() - 1;
        let g = p.gamma1.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.alpha,
            p.epsilon,
            p.arclength,
            p.sup_norm,
            p.min_value,
            p.field[0],
            p.field[n],
            g,
            p.positivity.tag.as_str()
        );
    }
    out
}

/// Two-column `alpha sup_norm` text for plotting.
pub fn branch_plot_columns(branch: &Branch) -> String {
    let mut out = String::new();
    for p in &branch.points {
        let _ = writeln!(out, "{} {}", p.alpha, p.sup_norm);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TurningPointRecord {
    pub index: usize,
    pub alpha: f64,
    pub sup_norm: f64,
}

/// Sidecar for one branch CSV: the endpoint tags, the turning points with
/// their locations, and the full configuration the run was built from.
#[derive(Debug, Clone, Serialize)]
pub struct BranchSidecar<'a> {
    pub epsilon: f64,
    pub start_tag: BranchTag,
    pub end_tag: BranchTag,
    pub n_points: usize,
    pub turning_points: Vec<TurningPointRecord>,
    pub config: &'a RunConfig,
}

impl<'a> BranchSidecar<'a> {
    pub fn new(epsilon: f64, branch: &Branch, config: &'a RunConfig) -> Self {
        BranchSidecar {
            epsilon,
            start_tag: branch.start_tag,
            end_tag: branch.end_tag,
            n_points: branch.points.len(),
            turning_points: branch
                .turning_points
                .iter()
                .map(|&i| TurningPointRecord {
                    index: i,
                    alpha: branch.points[i].alpha,
                    sup_norm: branch.points[i].sup_norm,
                })
                .collect(),
            config,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(file_err(path))
}

pub fn read_json_value(path: &Path) -> Result<serde_json::Value, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(file_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{BranchPoint, ContinuationConfig};
    use crate::mesh::build_mesh;
    use crate::solver::{
        classify_positivity, constant_field, solve_newton, SolverConfig, ABS_TOL, POS_TOL,
    };
    use crate::weights::{WeightKind, WeightSpec};

    fn dip_problem(n: usize, alpha: f64) -> ProblemSpec {
        ProblemSpec::new(
            build_mesh(0.0, 1.0, n).unwrap(),
            WeightSpec::new(WeightKind::CosineDip { c: 0.1 }),
            0.5,
            alpha,
            Formulation::RForm,
        )
        .unwrap()
    }

    #[test]
    fn solution_text_round_trips() {
        let p = dip_problem(40, 0.7);
        let seed = constant_field(&p.mesh, 0.0025);
        let sol = solve_newton(&p, &seed, &SolverConfig::default()).unwrap();
        let text = solution_text(&p, &sol);
        let file = parse_solution(&text).unwrap();
        assert_eq!(file.alpha, sol.alpha);
        assert_eq!(file.q, 0.5);
        assert_eq!(file.formulation, Formulation::RForm);
        assert_eq!(file.weight_kind, "cosine_dip");
        assert_eq!(file.n_cells, 40);
        assert_eq!(file.values, sol.field);
        assert_eq!(file.positivity, sol.positivity.tag);
    }

    #[test]
    fn solution_parse_rejects_malformed_input() {
        assert!(parse_solution("").is_err());
        assert!(parse_solution("something else\n").is_err());
        let p = dip_problem(8, 0.0);
        let sol = Solution {
            field: vec![0.0; 9],
            residual_sup: 0.0,
            positivity: classify_positivity(&p, &vec![0.0; 9], POS_TOL, ABS_TOL),
            alpha: 0.0,
            epsilon_used: 0.0,
            role: crate::solver::Role::Generic,
            newton_iters: 0,
        };
        let good = solution_text(&p, &sol);

        let truncated: String = good.lines().take(10).map(|l| format!("{l}\n")).collect();
        let e = parse_solution(&truncated).unwrap_err();
        assert!(e.to_string().contains("values"), "{e}");

        let swapped = good.replace("q = 0.5", "q = 1.5");
        let e = parse_solution(&swapped).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");

        let bad_tag = good.replace("positivity = trivial", "positivity = sideways");
        let e = parse_solution(&bad_tag).unwrap_err();
        assert!(e.to_string().contains("sideways"), "{e}");

        let extra = format!("{good}0.25\n");
        assert!(parse_solution(&extra).is_err());
    }

    fn tiny_branch() -> Branch {
        let p = dip_problem(4, 0.5);
        let mk = |alpha: f64, field: Vec<f64>, gamma1: Option<f64>| {
            let sup = crate::mesh::sup_norm(&field);
            let min = crate::mesh::min_value(&field);
            BranchPoint {
                alpha,
                epsilon: 1e-2,
                sup_norm: sup,
                min_value: min,
                gamma1,
                arclength: alpha,
                positivity: classify_positivity(&p, &field, POS_TOL, ABS_TOL),
                field,
            }
        };
        Branch {
            points: vec![
                mk(0.1, vec![0.0, 1.0, 2.0, 1.0, 0.5], Some(0.25)),
                mk(0.2, vec![0.0, 2.0, 3.0, 2.0, 1.0], None),
            ],
            start_tag: BranchTag::Gamma0Contact,
            end_tag: BranchTag::Failure,
            turning_points: vec![1],
        }
    }

    #[test]
    fn branch_csv_has_the_nine_columns() {
        let b = tiny_branch();
        let csv = branch_csv(&b);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "alpha,epsilon,arclength,sup_norm,min_value,boundary_left,boundary_right,gamma1,positivity_tag"
        );
        let row1 = lines.next().unwrap();
        assert_eq!(row1.split(',').count(), 9);
        assert!(row1.starts_with("0.1,0.01,"));
        assert!(row1.contains(",0.25,"));
        let row2 = lines.next().unwrap();
        // gamma1 was not computed: empty field between the commas.
        assert!(row2.contains(",,"), "{row2}");
        assert!(row2.ends_with("boundary_zero") || row2.ends_with("interior_positive"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn plot_columns_are_alpha_and_sup() {
        let b = tiny_branch();
        let cols = branch_plot_columns(&b);
        assert_eq!(cols, "0.1 2\n0.2 3\n");
    }

    #[test]
    fn sidecar_serializes_tags_turning_points_and_config() {
        let b = tiny_branch();
        let config = crate::config::parse_run_config(
            "tasks = continue\n[problem]\nformulation = rescaled\n[continuation]\n",
        )
        .unwrap();
        let side = BranchSidecar::new(1e-2, &b, &config);
        let json = serde_json::to_value(&side).unwrap();
        assert_eq!(json["start_tag"], "gamma0_contact");
        assert_eq!(json["end_tag"], "failure");
        assert_eq!(json["turning_points"][0]["alpha"], 0.2);
        assert_eq!(json["config"]["problem"]["weight"]["cosine_dip"]["c"], 0.1);
        assert_eq!(json["config"]["problem"]["formulation"], "rescaled");
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dip_problem(40, 0.7);
        let seed = constant_field(&p.mesh, 0.0025);
        let sol = solve_newton(&p, &seed, &SolverConfig::default()).unwrap();
        let path = dir.path().join("sol.txt");
        write_solution(&path, &p, &sol).unwrap();
        let back = read_solution(&path).unwrap();
        assert_eq!(back.values, sol.field);

        let jpath = dir.path().join("x.json");
        write_json(&jpath, &ContinuationConfig::default().max_points).unwrap();
        assert_eq!(read_json_value(&jpath).unwrap(), 4000);

        let missing = read_solution(&dir.path().join("absent.txt"));
        assert!(matches!(missing, Err(IoError::File { .. })));
    }
}
