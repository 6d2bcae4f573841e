//! Nonlinear solves for the Robin problem and its relatives.
//!
//! Two formulations of the same equation are supported. `PForm` is
//! `-u'' = a(x) u^q` with boundary condition `∂νu = αu`; `RForm` carries the
//! extra factor `α` on the weight, `-w'' = α a(x) w^q`, which is what the
//! rescaling `w = α^{1/(1-q)} u` produces for `α > 0`. `alpha = -∞` encodes
//! the Dirichlet problem (`u = 0` at both endpoints, `PForm` only).
//!
//! The sublinear nonlinearity is regularized as `g_ε(s) = (s+ε)^{q-1} s`,
//! which is C¹ for `ε > 0`; at `ε = 0` it reduces to `s^q` with the dead-core
//! convention `0^q := 0` and `g'(0) := 0`.

use crate::linalg::Tridiag;
use crate::mesh::{robin_tridiag, sup_norm, Mesh};
use crate::weights::{sample_weight, WeightError, WeightSpec, TOL_ZERO_REL};
use serde::Serialize;
use thiserror::Error;

/// Default relative threshold below which a nodal value counts as not
/// positive for classification purposes.
pub const POS_TOL: f64 = 1e-6;
/// Default absolute sup-norm threshold for the trivial solution.
pub const ABS_TOL: f64 = 1e-10;
/// A below-`POS_TOL` run is a dead core when it spans at least this
/// fraction of the domain; thinner boundary-contact layers are tagged
/// `BoundaryZero`. Heuristic: profiles `~ dist^r` with large `r` sit below
/// any relative threshold on a layer of width `tol^{1/r}`, so no nodal rule
/// separates very flat contact from a genuine dead interval; 2% of the
/// domain keeps the moderate-`r` contact layers out.
pub const DEAD_CORE_MIN_FRACTION: f64 = 0.02;

/// Regularization schedule used when none is given explicitly.
pub const DEFAULT_EPS_SCHEDULE: [f64; 8] =
    [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Strictly decreasing schedule from 1e-1 down to `terminal`.
pub fn eps_schedule_to(terminal: f64) -> Vec<f64> {
    assert!(terminal >= 0.0);
    let mut s: Vec<f64> = DEFAULT_EPS_SCHEDULE
        .iter()
        .copied()
        .filter(|e| *e > terminal * (1.0 + 1e-12))
        .collect();
    s.push(terminal);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Formulation {
    #[serde(rename = "primitive")]
    PForm,
    #[serde(rename = "rescaled")]
    RForm,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::PForm => "P",
            Formulation::RForm => "R",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    #[serde(rename = "generic")]
    Generic,
    #[serde(rename = "u_D")]
    Ud,
    #[serde(rename = "u_N")]
    Un,
    #[serde(rename = "w1")]
    W1,
    #[serde(rename = "w2")]
    W2,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Generic => "generic",
            Role::Ud => "u_D",
            Role::Un => "u_N",
            Role::W1 => "w1",
            Role::W2 => "w2",
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error("seed infeasible: {0}")]
    SeedInfeasible(String),
    #[error("Newton did not converge in {iters} iterations (residual {residual_sup:.3e})")]
    MaxIters { iters: usize, residual_sup: f64 },
    #[error("Newton stagnated at damping floor (residual {residual_sup:.3e})")]
    Stagnation { residual_sup: f64 },
    #[error("Jacobian factorization failed (residual {residual_sup:.3e})")]
    SingularJacobian { residual_sup: f64 },
    #[error("regularization stage ε = {stage_epsilon:.3e} failed: {source}")]
    DeregFailed {
        stage_epsilon: f64,
        #[source]
        source: Box<SolverError>,
        /// Converged solution of the last successful stage, if any.
        last_ok: Option<Box<Solution>>,
    },
    #[error("sub/supersolution ordering violated at node {node}")]
    OrderingViolated { node: usize },
    #[error("{which} has residual of the wrong sign at node {node}: {value:.3e}")]
    WrongResidualSign {
        which: &'static str,
        node: usize,
        value: f64,
    },
    #[error("no finite monotonicity shift exists at ε = 0 (subsolution vanishes where the effective weight is negative); use ε > 0")]
    UnboundedShift,
    #[error("mixed problem setup: {0}")]
    BadMixed(String),
}

/// Full instance of the problem: mesh, sampled weight, exponent, Robin
/// parameter (`-∞` = Dirichlet), and formulation.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mesh: Mesh,
    pub weight: WeightSpec,
    /// Weight sampled at the mesh nodes (kept alongside the spec so every
    /// consumer integrates the exact same nodal values).
    pub a: Vec<f64>,
    pub q: f64,
    pub alpha: f64,
    pub formulation: Formulation,
}

impl ProblemSpec {
    pub fn new(
        mesh: Mesh,
        weight: WeightSpec,
        q: f64,
        alpha: f64,
        formulation: Formulation,
    ) -> Result<Self, SolverError> {
        if !(0.0..1.0).contains(&q) {
            return Err(SolverError::BadProblem(format!("q = {q} not in [0, 1)")));
        }
        if !(alpha.is_finite() || alpha == f64::NEG_INFINITY) {
            return Err(SolverError::BadProblem(format!(
                "alpha = {alpha} (must be finite or -inf)"
            )));
        }
        if formulation == Formulation::RForm && !alpha.is_finite() {
            return Err(SolverError::BadProblem(
                "the rescaled formulation needs a finite alpha".into(),
            ));
        }
        let a = sample_weight(&weight, &mesh)?;
        Ok(ProblemSpec {
            mesh,
            weight,
            a,
            q,
            alpha,
            formulation,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        assert!(
            alpha.is_finite() || (alpha == f64::NEG_INFINITY && self.formulation == Formulation::PForm),
            "bad alpha replacement"
        );
        ProblemSpec {
            alpha,
            ..self.clone()
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        self.alpha == f64::NEG_INFINITY
    }

    /// Factor multiplying `a(x) g(u)` in the residual: 1 for `PForm`,
    /// `alpha` for `RForm`.
    pub fn weight_factor(&self) -> f64 {
        match self.formulation {
            Formulation::PForm => 1.0,
            Formulation::RForm => self.alpha,
        }
    }
}

/// `g_ε(s) = (s+ε)^{q-1} s` for `s ≥ 0` (negative `s` treated as 0).
pub fn g_eps(s: f64, q: f64, eps: f64) -> f64 {
    let s = s.max(0.0);
    let pw = s + eps;
    if pw <= 0.0 {
        0.0
    } else {
        pw.powf(q - 1.0) * s
    }
}

/// Derivative of `g_ε`: `(s+ε)^{q-2} (q s + ε)`; 0 at `s = 0, ε = 0`.
pub fn g_eps_prime(s: f64, q: f64, eps: f64) -> f64 {
    let s = s.max(0.0);
    let pw = s + eps;
    if pw <= 0.0 {
        0.0
    } else {
        pw.powf(q - 2.0) * (q * s + eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityTag {
    Trivial,
    InteriorPositive,
    DeadCore,
    BoundaryZero,
}

impl PositivityTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PositivityTag::Trivial => "trivial",
            PositivityTag::InteriorPositive => "interior_positive",
            PositivityTag::DeadCore => "dead_core",
            PositivityTag::BoundaryZero => "boundary_zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "trivial" => PositivityTag::Trivial,
            "interior_positive" => PositivityTag::InteriorPositive,
            "dead_core" => PositivityTag::DeadCore,
            "boundary_zero" => PositivityTag::BoundaryZero,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityClass {
    pub tag: PositivityTag,
    /// Maximal index ranges (inclusive) of nodes below `pos_tol * sup`.
    pub dead_core_intervals: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: Vec<f64>,
    pub residual_sup: f64,
    pub positivity: PositivityClass,
    pub alpha: f64,
    pub epsilon_used: f64,
    pub role: Role,
    pub newton_iters: usize,
}

impl Solution {
    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.field)
    }

    pub fn is_trivial(&self) -> bool {
        self.positivity.tag == PositivityTag::Trivial
    }
}

/// Classify a nonnegative field over the node range `[lo, hi]`, with the
/// range endpoints optionally excluded (Dirichlet ends, where a zero value
/// is part of the boundary condition rather than a property of the
/// solution).
fn classify_range(
    mesh: &Mesh,
    values: &[f64],
    lo: usize,
    hi: usize,
    exclude_lo: bool,
    exclude_hi: bool,
    pos_tol: f64,
    abs_tol: f64,
) -> PositivityClass {
    let sup = values[lo..=hi].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup < abs_tol {
        return PositivityClass {
            tag: PositivityTag::Trivial,
            dead_core_intervals: Vec::new(),
        };
    }
    let first = if exclude_lo { lo + 1 } else { lo };
    let last = if exclude_hi { hi - 1 } else { hi };
    let thresh = pos_tol * sup;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for i in first..=last {
        if values[i] < thresh {
            open.get_or_insert(i);
        } else if let Some(s) = open.take() {
            runs.push((s, i - 1));
        }
    }
    if let Some(s) = open {
        runs.push((s, last));
    }
    if runs.is_empty() {
        return PositivityClass {
            tag: PositivityTag::InteriorPositive,
            dead_core_intervals: runs,
        };
    }
    let min_len = DEAD_CORE_MIN_FRACTION * mesh.measure();
    let macroscopic = runs
        .iter()
        .any(|(s, e)| (e - s) as f64 * mesh.h() >= min_len);
    PositivityClass {
        tag: if macroscopic {
            PositivityTag::DeadCore
        } else {
            PositivityTag::BoundaryZero
        },
        dead_core_intervals: runs,
    }
}

/// Classify a solution field of the given problem. For `alpha = -∞` the
/// endpoint nodes are excluded from the positivity requirement.
pub fn classify_positivity(
    problem: &ProblemSpec,
    values: &[f64],
    pos_tol: f64,
    abs_tol: f64,
) -> PositivityClass {
    let n = problem.mesh.n_cells();
    let d = problem.is_dirichlet();
    classify_range(&problem.mesh, values, 0, n, d, d, pos_tol, abs_tol)
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub damping_min: f64,
    pub nonneg_projection: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 0.0,
            newton_tol: 1e-10,
            max_iters: 60,
            damping_min: 1.0 / 1024.0,
            nonneg_projection: true,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        SolverConfig {
            epsilon,
            ..self.clone()
        }
    }
}

/// Achievable residual floor: forming the second difference loses about
/// `ε_mach * sup|u| / h²` to cancellation, so demanding less than that from
/// Newton would spin forever.
fn residual_floor(mesh: &Mesh, field_sup: f64) -> f64 {
    16.0 * f64::EPSILON * (1.0 + field_sup) / (mesh.h() * mesh.h())
}

fn check_seed(problem: &ProblemSpec, seed: &[f64]) -> Result<(), SolverError> {
    if seed.len() != problem.mesh.n_nodes() {
        return Err(SolverError::SeedInfeasible(format!(
            "seed has {} values, mesh has {} nodes",
            seed.len(),
            problem.mesh.n_nodes()
        )));
    }
    if seed.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::SeedInfeasible("non-finite seed value".into()));
    }
    Ok(())
}

/// Residual of the chosen formulation at a nonnegative field.
pub fn residual(
    problem: &ProblemSpec,
    field: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    check_seed(problem, field)?;
    if field.iter().any(|v| *v < 0.0) {
        return Err(SolverError::SeedInfeasible(
            "negative nodal value in residual evaluation".into(),
        ));
    }
    Ok(residual_raw(problem, field, config.epsilon))
}

fn residual_raw(problem: &ProblemSpec, u: &[f64], eps: f64) -> Vec<f64> {
    let mesh = &problem.mesh;
    let n = mesh.n_cells();
    let h = mesh.h();
    let h2 = h * h;
    let cw = problem.weight_factor();
    let q = problem.q;
    let mut f = vec![0.0; n + 1];
    for i in 1..n {
        f[i] = (-u[i - 1] + 2.0 * u[i] - u[i + 1]) / h2 - cw * problem.a[i] * g_eps(u[i], q, eps);
    }
    if problem.is_dirichlet() {
        f[0] = u[0];
        f[n] = u[n];
    } else {
        let al = problem.alpha;
        f[0] = 2.0 * (u[0] - u[1]) / h2 - 2.0 * al * u[0] / h
            - cw * problem.a[0] * g_eps(u[0], q, eps);
        f[n] = 2.0 * (u[n] - u[n - 1]) / h2 - 2.0 * al * u[n] / h
            - cw * problem.a[n] * g_eps(u[n], q, eps);
    }
    f
}

fn jacobian_raw(problem: &ProblemSpec, u: &[f64], eps: f64) -> Tridiag {
    let mesh = &problem.mesh;
    let n = mesh.n_cells();
    let cw = problem.weight_factor();
    let q = problem.q;
    let mut j = if problem.is_dirichlet() {
        let h2 = mesh.h() * mesh.h();
        let mut t = Tridiag::zeros(n + 1);
        t.dia[0] = 1.0;
        t.dia[n] = 1.0;
        for i in 1..n {
            t.sub[i - 1] = -1.0 / h2;
            t.dia[i] = 2.0 / h2;
            t.sup[i] = -1.0 / h2;
        }
        // Decouple the identity rows from their neighbors' columns is not
        // needed: sub[n-1]/sup[0] belong to rows n/0, already zeroed.
        t
    } else {
        robin_tridiag(mesh, problem.alpha)
    };
    let (lo, hi) = if problem.is_dirichlet() {
        (1, n - 1)
    } else {
        (0, n)
    };
    for i in lo..=hi {
        j.dia[i] -= cw * problem.a[i] * g_eps_prime(u[i], q, eps);
    }
    j
}

/// Damped Newton iteration with nonnegativity projection. Returns the
/// converged field, its residual sup-norm, and the iteration count.
fn newton_core(
    problem: &ProblemSpec,
    seed: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, f64, usize), SolverError> {
    let eps = config.epsilon;
    let mut u: Vec<f64> = if config.nonneg_projection {
        seed.iter().map(|v| v.max(0.0)).collect()
    } else {
        if seed.iter().any(|v| *v < 0.0) {
            return Err(SolverError::SeedInfeasible("negative seed value".into()));
        }
        seed.to_vec()
    };
    let mut f = residual_raw(problem, &u, eps);
    let mut res = sup_norm(&f);
    for iter in 0..config.max_iters {
        let tol_eff = config
            .newton_tol
            .max(residual_floor(&problem.mesh, sup_norm(&u)));
        if res <= tol_eff {
            return Ok((u, res, iter));
        }
        let jac = jacobian_raw(problem, &u, eps);
        let lu = jac
            .factor()
            .ok_or(SolverError::SingularJacobian { residual_sup: res })?;
        let mut step: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut step);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::SingularJacobian { residual_sup: res });
        }
        let u_sup = sup_norm(&u);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u
                .iter()
                .zip(&step)
                .map(|(ui, si)| {
                    let t = ui + lambda * si;
                    if config.nonneg_projection {
                        t.max(0.0)
                    } else {
                        t
                    }
                })
                .collect();
            // The clipped trivial field has residual exactly zero, so an
            // overshooting step from an O(1) iterate would be "accepted"
            // onto it instantly. Refuse such jumps; a genuine approach to
            // zero shrinks the iterate gradually instead.
            let zero_jump = u_sup > 1e3 * ABS_TOL && sup_norm(&trial) == 0.0;
            let ft = residual_raw(problem, &trial, eps);
            let rt = sup_norm(&ft);
            if !zero_jump && rt.is_finite() && rt <= (1.0 - 1e-4 * lambda) * res {
                u = trial;
                f = ft;
                res = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < config.damping_min {
                // Accept a step to the floor only if it is not worse; else
                // try shifted steps before reporting stagnation.
                if !zero_jump && rt.is_finite() && rt < res {
                    u = trial;
                    f = ft;
                    res = rt;
                    break;
                }
                // Near-singular linearizations (routine at dead-core
                // amplitudes, where s^{q-1} is enormous) make the pure
                // Newton direction worthless: the step is huge and the
                // curvature of s^q destroys it at any damping. A diagonal
                // shift keeps the step short and descent-aligned.
                let dia_scale = jac.dia.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let mut nu = 1e-6 * dia_scale;
                let mut rescued = false;
                while nu <= 1e6 * dia_scale {
                    let mut shifted = jac.clone();
                    for d in shifted.dia.iter_mut() {
                        *d += nu;
                    }
                    if let Some(slu) = shifted.factor() {
                        let mut sd: Vec<f64> = f.iter().map(|v| -v).collect();
                        slu.solve_in_place(&mut sd);
                        if sd.iter().all(|v| v.is_finite()) {
                            let trial: Vec<f64> = u
                                .iter()
                                .zip(&sd)
                                .map(|(ui, si)| {
                                    let t = ui + si;
                                    if config.nonneg_projection {
                                        t.max(0.0)
                                    } else {
                                        t
                                    }
                                })
                                .collect();
                            let zj = u_sup > 1e3 * ABS_TOL && sup_norm(&trial) == 0.0;
                            let ft = residual_raw(problem, &trial, eps);
                            let rt = sup_norm(&ft);
                            if !zj && rt.is_finite() && rt < res {
                                u = trial;
                                f = ft;
                                res = rt;
                                rescued = true;
                                break;
                            }
                        }
                    }
                    nu *= 8.0;
                }
                if rescued {
                    break;
                }
                return Err(SolverError::Stagnation { residual_sup: res });
            }
        }
    }
    let tol_eff = config
        .newton_tol
        .max(residual_floor(&problem.mesh, sup_norm(&u)));
    if res <= tol_eff {
        Ok((u, res, config.max_iters))
    } else {
        Err(SolverError::MaxIters {
            iters: config.max_iters,
            residual_sup: res,
        })
    }
}

fn finish_solution(
    problem: &ProblemSpec,
    field: Vec<f64>,
    residual_sup: f64,
    iters: usize,
    epsilon_used: f64,
) -> Solution {
    let positivity = classify_positivity(problem, &field, POS_TOL, ABS_TOL);
    Solution {
        field,
        residual_sup,
        positivity,
        alpha: problem.alpha,
        epsilon_used,
        role: Role::Generic,
        newton_iters: iters,
    }
}

/// Solve the problem at the config's fixed ε by damped Newton.
pub fn solve_newton(
    problem: &ProblemSpec,
    seed: &[f64],
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_seed(problem, seed)?;
    let (u, res, iters) = newton_core(problem, seed, config)?;
    Ok(finish_solution(problem, u, res, iters, config.epsilon))
}

/// Chain Newton solves across a strictly decreasing ε schedule with warm
/// starts. On a stage failure the error carries the last successful stage.
pub fn deregularize(
    problem: &ProblemSpec,
    seed: &[f64],
    eps_schedule: &[f64],
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_seed(problem, seed)?;
    if eps_schedule.is_empty() {
        return Err(SolverError::BadProblem("empty ε schedule".into()));
    }
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) || eps_schedule[0] < 0.0 || *eps_schedule.last().unwrap() < 0.0 {
        return Err(SolverError::BadProblem(
            "ε schedule must be strictly decreasing and nonnegative".into(),
        ));
    }
    let mut last_ok: Option<Solution> = None;
    let mut u = seed.to_vec();
    let seed_nontrivial = sup_norm(seed) > ABS_TOL;
    for (k, &eps) in eps_schedule.iter().enumerate() {
        let terminal = k + 1 == eps_schedule.len();
        let cfg = config.with_epsilon(eps);
        match solve_newton(problem, &u, &cfg) {
            Ok(sol) => {
                // At large ε the regularized problem may only have the
                // trivial solution (the slope ε^{q-1} at zero is too small
                // for a nontrivial one to exist). Collapsing a nontrivial
                // seed to zero there would poison every later warm start,
                // so skip such stages and retry at the next smaller ε.
                if seed_nontrivial && sol.is_trivial() && !terminal {
                    continue;
                }
                u = sol.field.clone();
                last_ok = Some(sol);
            }
            Err(e) => {
                return Err(SolverError::DeregFailed {
                    stage_epsilon: eps,
                    source: Box::new(e),
                    last_ok: last_ok.map(Box::new),
                });
            }
        }
    }
    Ok(last_ok.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableChange {
    UToW,
    WToU,
}

/// Rescale between the two formulations: `w = α^{1/(1-q)} u`.
pub fn change_of_variables(
    field: &[f64],
    alpha: f64,
    q: f64,
    direction: VariableChange,
) -> Result<Vec<f64>, SolverError> {
    if !(0.0..1.0).contains(&q) {
        return Err(SolverError::BadProblem(format!("q = {q} not in [0, 1)")));
    }
    let expo = 1.0 / (1.0 - q);
    let factor = match direction {
        VariableChange::UToW => {
            if alpha < 0.0 || !alpha.is_finite() {
                return Err(SolverError::BadProblem(
                    "u -> w rescaling needs alpha >= 0".into(),
                ));
            }
            alpha.powf(expo)
        }
        VariableChange::WToU => {
            if alpha <= 0.0 || !alpha.is_finite() {
                return Err(SolverError::BadProblem(
                    "w -> u rescaling needs alpha > 0".into(),
                ));
            }
            alpha.powf(-expo)
        }
    };
    Ok(field.iter().map(|v| v * factor).collect())
}

/// Sine arch over the whole domain, amplitude `amp`.
pub fn sine_bump(mesh: &Mesh, amp: f64) -> Vec<f64> {
    let l = mesh.measure();
    let xl = mesh.x_left();
    mesh.sample(|x| amp * (std::f64::consts::PI * (x - xl) / l).sin())
}

pub fn constant_field(mesh: &Mesh, c: f64) -> Vec<f64> {
    vec![c; mesh.n_nodes()]
}

/// Piecewise-linear hat centered at fraction `center` of the domain with
/// half-width fraction `half_width`.
pub fn hat_field(mesh: &Mesh, center: f64, half_width: f64, amp: f64) -> Vec<f64> {
    let l = mesh.measure();
    let xc = mesh.x_left() + center * l;
    let w = half_width * l;
    mesh.sample(|x| {
        let t = 1.0 - (x - xc).abs() / w;
        amp * t.max(0.0)
    })
}

/// Solve the Dirichlet problem (`alpha = -∞`), deregularizing from the seed
/// down to the config's ε. Tags the result `u_D` when nontrivial.
pub fn solve_dirichlet(
    problem: &ProblemSpec,
    seed: &[f64],
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    if !problem.is_dirichlet() {
        return Err(SolverError::BadProblem(
            "solve_dirichlet needs alpha = -inf".into(),
        ));
    }
    let schedule = eps_schedule_to(config.epsilon);
    let mut sol = deregularize(problem, seed, &schedule, config)?;
    // Damped steps can leave a subnormal residue on the pinned rows; the
    // boundary condition is exact, so enforce it exactly.
    let n = problem.mesh.n_cells();
    sol.field[0] = 0.0;
    sol.field[n] = 0.0;
    sol.positivity = classify_positivity(problem, &sol.field, POS_TOL, ABS_TOL);
    if !sol.is_trivial() {
        sol.role = Role::Ud;
    }
    Ok(sol)
}

/// Solve the Neumann problem (`alpha = 0`, `PForm`), deregularizing from the
/// seed. Tags the result `u_N` when nontrivial.
pub fn solve_neumann(
    problem: &ProblemSpec,
    seed: &[f64],
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    if problem.alpha != 0.0 || problem.formulation != Formulation::PForm {
        return Err(SolverError::BadProblem(
            "solve_neumann needs alpha = 0 in the unscaled formulation".into(),
        ));
    }
    let schedule = eps_schedule_to(config.epsilon);
    let mut sol = deregularize(problem, seed, &schedule, config)?;
    if sol.is_trivial() {
        // A nontrivial flux-free solution balances ∫ a u^q = 0, so it dies
        // out where the weight is negative; seeds without that structure
        // often collapse. Retry shaped to the weight's positive runs.
        if let Ok(shaped) = positive_run_seed(problem) {
            if let Ok(retry) = deregularize(problem, &shaped, &schedule, config) {
                if !retry.is_trivial() {
                    sol = retry;
                }
            }
        }
    }
    if !sol.is_trivial() {
        sol.role = Role::Un;
    }
    Ok(sol)
}

/// Monotone iteration between an ordered sub/supersolution pair.
///
/// Verifies the ordering and the discrete residual signs (within
/// `sign_tol`), then iterates `(L + K) u_{k+1} = c_w a g(u_k) + K u_k` from
/// the subsolution with a shift `K` large enough that the right side is
/// nondecreasing in `u` on the order interval. Monotonicity of the iterates
/// is verified numerically; `K` is increased tenfold (up to 3 times) if it
/// fails. The limit is polished by Newton and the polish drift is required
/// to stay below `1e-6 * (1 + sup)`.
pub fn monotone_iteration(
    problem: &ProblemSpec,
    sub: &[f64],
    sup: &[f64],
    config: &SolverConfig,
    sign_tol: f64,
) -> Result<Solution, SolverError> {
    check_seed(problem, sub)?;
    check_seed(problem, sup)?;
    let eps = config.epsilon;
    let n = problem.mesh.n_cells();
    for i in 0..=n {
        if sub[i] > sup[i] {
            return Err(SolverError::OrderingViolated { node: i });
        }
    }
    let f_sub = residual_raw(problem, sub, eps);
    let f_sup = residual_raw(problem, sup, eps);
    for i in 0..=n {
        if f_sub[i] > sign_tol {
            return Err(SolverError::WrongResidualSign {
                which: "subsolution",
                node: i,
                value: f_sub[i],
            });
        }
        if f_sup[i] < -sign_tol {
            return Err(SolverError::WrongResidualSign {
                which: "supersolution",
                node: i,
                value: f_sup[i],
            });
        }
    }

    // Shift bound: g_ε' is decreasing, so its sup over [sub_i, sup_i] is
    // g_ε'(sub_i). Only nodes where the effective weight is negative need
    // the shift; at ε = 0 such a node with sub = 0 < sup has no finite
    // bound.
    let cw = problem.weight_factor();
    let mut k_shift = 0.0f64;
    for i in 0..=n {
        let w = cw * problem.a[i];
        if w < 0.0 && sup[i] > sub[i] {
            if eps == 0.0 && sub[i] <= 0.0 {
                return Err(SolverError::UnboundedShift);
            }
            k_shift = k_shift.max(-w * g_eps_prime(sub[i], problem.q, eps));
        }
    }
    // Keep the shifted operator inverse-positive also for alpha > 0.
    if problem.alpha.is_finite() && problem.alpha > 0.0 {
        k_shift = k_shift.max(4.0 * problem.alpha / problem.mesh.h());
    }
    k_shift = k_shift.max(1.0);

    let scale = 1.0 + sup_norm(sup);
    let step_tol = 1e-13 * scale;
    let mono_slack = 1e-11 * scale;
    let max_sweeps = 400_000usize;

    'retry: for _attempt in 0..4 {
        let mut op = if problem.is_dirichlet() {
            jacobian_raw(problem, &vec![0.0; n + 1], 0.0)
        } else {
            robin_tridiag(&problem.mesh, problem.alpha)
        };
        let (lo, hi) = if problem.is_dirichlet() { (1, n - 1) } else { (0, n) };
        for i in lo..=hi {
            op.dia[i] += k_shift;
        }
        let lu = match op.factor() {
            Some(lu) => lu,
            None => {
                k_shift *= 10.0;
                continue 'retry;
            }
        };
        let mut u = sub.to_vec();
        let mut rhs = vec![0.0; n + 1];
        for _sweep in 0..max_sweeps {
            for i in 0..=n {
                rhs[i] = cw * problem.a[i] * g_eps(u[i], problem.q, eps) + k_shift * u[i];
            }
            if problem.is_dirichlet() {
                rhs[0] = 0.0;
                rhs[n] = 0.0;
            }
            let next = lu.solve(&rhs);
            let mut max_step = 0.0f64;
            for i in 0..=n {
                if next[i] < u[i] - mono_slack || next[i] > sup[i] + mono_slack {
                    k_shift *= 10.0;
                    continue 'retry;
                }
                max_step = max_step.max((next[i] - u[i]).abs());
            }
            u = next;
            if max_step <= step_tol {
                // Newton polish; the iteration limit is a fixed point up to
                // the linear-solve tolerance, so the polish must not move.
                let before = u.clone();
                let (polished, res, iters) = newton_core(problem, &u, config)?;
                let drift = before
                    .iter()
                    .zip(&polished)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if drift > 1e-6 * scale {
                    return Err(SolverError::Stagnation { residual_sup: res });
                }
                return Ok(finish_solution(problem, polished, res, iters, eps));
            }
        }
        let res = sup_norm(&residual_raw(problem, &u, eps));
        return Err(SolverError::MaxIters {
            iters: max_sweeps,
            residual_sup: res,
        });
    }
    Err(SolverError::Stagnation { residual_sup: f64::NAN })
}

/// Exact discrete subsolution supported on the largest positive run of the
/// weight: a scaled discrete sine on the run. The discrete sine is an exact
/// eigenvector of the interior second-difference operator, so the residual
/// sign condition holds nodewise up to rounding.
pub fn dirichlet_bump_subsolution(problem: &ProblemSpec) -> Result<Vec<f64>, SolverError> {
    let n = problem.mesh.n_cells();
    let tol = TOL_ZERO_REL * sup_norm(&problem.a);
    let cw = problem.weight_factor();
    // Largest run of nodes with effective weight strictly positive.
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for i in 0..=n + 1 {
        let is_pos = i <= n && cw * problem.a[i] > tol;
        if is_pos {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            let e = i - 1;
            if best.map_or(true, |(bs, be)| e - s > be - bs) {
                best = Some((s, e));
            }
        }
    }
    let (i0, i1) = best.ok_or_else(|| {
        SolverError::SeedInfeasible("weight has no positive run".into())
    })?;
    if i1 - i0 < 4 {
        return Err(SolverError::SeedInfeasible(
            "positive run of the weight is too short for a bump".into(),
        ));
    }
    // Shrink one node on physical-boundary sides so the bump vanishes at
    // the Robin rows.
    let i0 = if i0 == 0 { 1 } else { i0 };
    let i1 = if i1 == n { n - 1 } else { i1 };
    // The weight vanishes at the run edges, and the bump amplitude scales
    // with the run minimum, so trim to the part where the weight is at
    // least half its peak. Keeps the amplitude physically meaningful.
    let peak_at = (i0..=i1)
        .max_by(|&i, &j| {
            (cw * problem.a[i]).partial_cmp(&(cw * problem.a[j])).unwrap()
        })
        .unwrap();
    let half_peak = 0.5 * cw * problem.a[peak_at];
    let mut i0 = i0;
    let mut i1 = i1;
    while i0 < peak_at && cw * problem.a[i0] < half_peak {
        i0 += 1;
    }
    while i1 > peak_at && cw * problem.a[i1] < half_peak {
        i1 -= 1;
    }
    if i1 - i0 < 4 {
        return Err(SolverError::SeedInfeasible(
            "positive run of the weight is too short for a bump".into(),
        ));
    }
    let m = i1 - i0;
    let h = problem.mesh.h();
    // Smallest eigenvalue of the (-1, 2, -1)/h² operator with zero ends.
    let lam = 2.0 * (1.0 - (std::f64::consts::PI / m as f64).cos()) / (h * h);
    let a_min = (i0..=i1)
        .map(|i| cw * problem.a[i])
        .fold(f64::INFINITY, f64::min);
    if a_min <= 0.0 {
        return Err(SolverError::SeedInfeasible(
            "positive run lost positivity after shrinking".into(),
        ));
    }
    // s^{1-q} λ φ^{1-q} ≤ a on the run suffices; take half the allowed size.
    let s = (0.5 * a_min / lam).powf(1.0 / (1.0 - problem.q));
    let mut field = vec![0.0; n + 1];
    for i in i0..=i1 {
        field[i] = s * (std::f64::consts::PI * (i - i0) as f64 / m as f64).sin();
    }
    Ok(field)
}

/// Seed shaped to the sign structure of the effective weight: a half-sine
/// on every maximal positive run, scaled to the run's natural amplitude
/// `((L/π)² a_peak)^{1/(1-q)}`, zero elsewhere. Runs touching a physical
/// boundary peak there instead of vanishing (natural under a flux
/// condition, skipped for Dirichlet problems). Newton basins of dead-core
/// solutions are narrow, and constants far from this scale collapse onto
/// the trivial solution.
pub fn positive_run_seed(problem: &ProblemSpec) -> Result<Vec<f64>, SolverError> {
    use std::f64::consts::PI;
    let n = problem.mesh.n_cells();
    let h = problem.mesh.h();
    let cw = problem.weight_factor();
    let tol = TOL_ZERO_REL * sup_norm(&problem.a);
    let mut seed = vec![0.0; n + 1];
    let mut start: Option<usize> = None;
    let mut any = false;
    for i in 0..=n + 1 {
        let is_pos = i <= n && cw * problem.a[i] > tol;
        if is_pos {
            start.get_or_insert(i);
            continue;
        }
        let Some(s) = start.take() else { continue };
        let e = i - 1;
        if e == s {
            continue;
        }
        let peak = (s..=e).map(|j| cw * problem.a[j]).fold(0.0, f64::max);
        let len = (e - s) as f64 * h;
        let amp = ((len / PI).powi(2) * peak).powf(1.0 / (1.0 - problem.q));
        if !(amp > 0.0) {
            continue;
        }
        any = true;
        let span = (e - s) as f64;
        for j in s..=e {
            let t = (j - s) as f64 / span;
            let mut v = (PI * t).sin().max(0.0);
            if !problem.is_dirichlet() {
                if s == 0 {
                    v = v.max((0.5 * PI * (1.0 - t)).sin());
                }
                if e == n {
                    v = v.max((0.5 * PI * t).sin());
                }
            }
            seed[j] = amp * v;
        }
    }
    if !any {
        return Err(SolverError::SeedInfeasible(
            "weight has no positive run wide enough to seed".into(),
        ));
    }
    Ok(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedEnd {
    Low,
    High,
}

/// Mixed sub-problem on `(d_low, d_high)`: the solution vanishes at the
/// `dirichlet_end`, and the opposite end carries a zero-flux condition and
/// must coincide with a physical boundary point of the mesh.
#[derive(Debug, Clone)]
pub struct MixedProblemSpec {
    pub d_low: f64,
    pub d_high: f64,
    pub dirichlet_end: MixedEnd,
}

/// Solve the mixed problem on the witness interval. The weight must be
/// nonnegative (within rounding) on the interval. The returned field lives
/// on the full mesh, extended by zero outside the interval.
pub fn solve_mixed_q(
    problem: &ProblemSpec,
    mixed: &MixedProblemSpec,
    seed: &[f64],
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_seed(problem, seed)?;
    let mesh = &problem.mesh;
    let n = mesh.n_cells();
    let h = mesh.h();
    let snap = |x: f64, name: &str| -> Result<usize, SolverError> {
        let t = (x - mesh.x_left()) / h;
        let i = t.round();
        if (t - i).abs() > 1e-8 || i < 0.0 || i > n as f64 {
            return Err(SolverError::BadMixed(format!(
                "{name} = {x} is not a mesh node"
            )));
        }
        Ok(i as usize)
    };
    let j_lo = snap(mixed.d_low, "d_low")?;
    let j_hi = snap(mixed.d_high, "d_high")?;
    if j_hi < j_lo + 2 {
        return Err(SolverError::BadMixed("interval too short".into()));
    }
    let neumann_at_low = mixed.dirichlet_end == MixedEnd::High;
    let neumann_node = if neumann_at_low { j_lo } else { j_hi };
    if neumann_node != 0 && neumann_node != n {
        return Err(SolverError::BadMixed(
            "zero-flux end must be a physical boundary point".into(),
        ));
    }
    let tol = TOL_ZERO_REL * sup_norm(&problem.a);
    if (j_lo..=j_hi).any(|i| problem.a[i] < -tol) {
        return Err(SolverError::BadMixed(
            "weight is negative inside the interval".into(),
        ));
    }

    let m = j_hi - j_lo; // unknowns indexed 0..=m over nodes j_lo..=j_hi
    let q = problem.q;
    let h2 = h * h;
    let a_sub: Vec<f64> = problem.a[j_lo..=j_hi].to_vec();
    let dirichlet_idx = if neumann_at_low { m } else { 0 };
    let neumann_idx = m - dirichlet_idx;

    let res_fn = |v: &[f64], eps: f64| -> Vec<f64> {
        let mut f = vec![0.0; m + 1];
        for i in 1..m {
            f[i] = (-v[i - 1] + 2.0 * v[i] - v[i + 1]) / h2 - a_sub[i] * g_eps(v[i], q, eps);
        }
        f[dirichlet_idx] = v[dirichlet_idx];
        let j = neumann_idx;
        let inner = if j == 0 { 1 } else { m - 1 };
        f[j] = 2.0 * (v[j] - v[inner]) / h2 - a_sub[j] * g_eps(v[j], q, eps);
        f
    };
    let jac_fn = |v: &[f64], eps: f64| -> Tridiag {
        let mut t = Tridiag::zeros(m + 1);
        for i in 1..m {
            t.sub[i - 1] = -1.0 / h2;
            t.dia[i] = 2.0 / h2 - a_sub[i] * g_eps_prime(v[i], q, eps);
            t.sup[i] = -1.0 / h2;
        }
        let j = neumann_idx;
        t.dia[j] = 2.0 / h2 - a_sub[j] * g_eps_prime(v[j], q, eps);
        if j == 0 {
            t.sup[0] = -2.0 / h2;
        } else {
            t.sub[m - 1] = -2.0 / h2;
        }
        let d = dirichlet_idx;
        t.dia[d] = 1.0;
        if d == 0 {
            t.sup[0] = 0.0;
        } else {
            t.sub[m - 1] = 0.0;
        }
        t
    };

    let mut v: Vec<f64> = seed[j_lo..=j_hi].iter().map(|x| x.max(0.0)).collect();
    v[dirichlet_idx] = 0.0;
    let seed_nontrivial = sup_norm(&v) > ABS_TOL;
    let schedule = eps_schedule_to(config.epsilon);
    let mut last: Option<(Vec<f64>, f64, usize)> = None;
    for (k, &eps) in schedule.iter().enumerate() {
        let terminal = k + 1 == schedule.len();
        match mixed_newton(&res_fn, &jac_fn, &v, eps, config, h) {
            Ok((vv, res, iters)) => {
                // Same stage-skipping as deregularize: do not let a
                // too-large ε collapse a nontrivial seed to zero.
                if seed_nontrivial && sup_norm(&vv) < ABS_TOL && !terminal {
                    continue;
                }
                v = vv.clone();
                last = Some((vv, res, iters));
            }
            Err(e) => {
                return Err(SolverError::DeregFailed {
                    stage_epsilon: eps,
                    source: Box::new(e),
                    last_ok: None,
                })
            }
        }
    }
    let (v, res, iters) = last.unwrap();
    let mut field = vec![0.0; n + 1];
    field[j_lo..=j_hi].copy_from_slice(&v);
    let positivity = classify_range(
        mesh,
        &field,
        j_lo,
        j_hi,
        dirichlet_idx == 0,
        dirichlet_idx == m,
        POS_TOL,
        ABS_TOL,
    );
    Ok(Solution {
        field,
        residual_sup: res,
        positivity,
        alpha: problem.alpha,
        epsilon_used: *schedule.last().unwrap(),
        role: Role::Generic,
        newton_iters: iters,
    })
}

fn mixed_newton(
    res_fn: &dyn Fn(&[f64], f64) -> Vec<f64>,
    jac_fn: &dyn Fn(&[f64], f64) -> Tridiag,
    seed: &[f64],
    eps: f64,
    config: &SolverConfig,
    h: f64,
) -> Result<(Vec<f64>, f64, usize), SolverError> {
    let mut u = seed.to_vec();
    let mut f = res_fn(&u, eps);
    let mut res = sup_norm(&f);
    let floor = |u: &[f64]| 16.0 * f64::EPSILON * (1.0 + sup_norm(u)) / (h * h);
    for iter in 0..config.max_iters {
        if res <= config.newton_tol.max(floor(&u)) {
            return Ok((u, res, iter));
        }
        let lu = jac_fn(&u, eps)
            .factor()
            .ok_or(SolverError::SingularJacobian { residual_sup: res })?;
        let mut step: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut step);
        let u_sup = sup_norm(&u);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u
                .iter()
                .zip(&step)
                .map(|(ui, si)| (ui + lambda * si).max(0.0))
                .collect();
            let zero_jump = u_sup > 1e3 * ABS_TOL && sup_norm(&trial) == 0.0;
            let ft = res_fn(&trial, eps);
            let rt = sup_norm(&ft);
            if !zero_jump && rt.is_finite() && rt <= (1.0 - 1e-4 * lambda) * res {
                u = trial;
                f = ft;
                res = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < config.damping_min {
                if !zero_jump && rt.is_finite() && rt < res {
                    u = trial;
                    f = ft;
                    res = rt;
                    break;
                }
                return Err(SolverError::Stagnation { residual_sup: res });
            }
        }
    }
    if res <= config.newton_tol.max(floor(&u)) {
        Ok((u, res, config.max_iters))
    } else {
        Err(SolverError::MaxIters {
            iters: config.max_iters,
            residual_sup: res,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::weights::WeightKind;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn oracle_problem(n: usize, alpha: f64) -> ProblemSpec {
        let mesh = build_mesh(0.0, PI, n).unwrap();
        ProblemSpec::new(
            mesh,
            WeightSpec::new(WeightKind::BuiltinAq { q: 0.5 }),
            0.5,
            alpha,
            Formulation::RForm,
        )
        .unwrap()
    }

    fn dip_problem(n: usize, alpha: f64, form: Formulation) -> ProblemSpec {
        let mesh = build_mesh(0.0, 1.0, n).unwrap();
        ProblemSpec::new(
            mesh,
            WeightSpec::new(WeightKind::CosineDip { c: 0.1 }),
            0.5,
            alpha,
            form,
        )
        .unwrap()
    }

    fn oracle_field(mesh: &Mesh, alpha: f64, q: f64) -> Vec<f64> {
        let r = 2.0 / (1.0 - q);
        let s = alpha.powf(1.0 / (1.0 - q));
        mesh.sample(|x| {
            if (0.0..=PI).contains(&x) {
                s * x.sin().powf(r)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn residual_zero_for_trivial_and_constants() {
        let p = dip_problem(100, 0.7, Formulation::RForm);
        let cfg = SolverConfig::default();
        let z = residual(&p, &vec![0.0; 101], &cfg).unwrap();
        assert_eq!(sup_norm(&z), 0.0);
        // Constants solve the rescaled formulation exactly at alpha = 0.
        let p0 = p.with_alpha(0.0);
        let c = residual(&p0, &constant_field(&p0.mesh, 0.37), &cfg).unwrap();
        assert_eq!(sup_norm(&c), 0.0);
    }

    #[test]
    fn residual_rejects_negative_values() {
        let p = dip_problem(50, 1.0, Formulation::PForm);
        let mut f = constant_field(&p.mesh, 1.0);
        f[3] = -1e-9;
        assert!(matches!(
            residual(&p, &f, &SolverConfig::default()),
            Err(SolverError::SeedInfeasible(_))
        ));
    }

    #[test]
    fn closed_form_solution_has_small_residual() {
        // -w'' = a_q w^(1/2) with w = sin^4 x, so the nodal residual is
        // pure discretization error, O(h²) including the boundary rows.
        let p = oracle_problem(800, 1.0);
        let w = oracle_field(&p.mesh, 1.0, 0.5);
        let f = residual(&p, &w, &SolverConfig::default()).unwrap();
        assert!(sup_norm(&f) < 5e-4, "residual {}", sup_norm(&f));
    }

    #[test]
    fn newton_recovers_oracle_from_perturbed_seed() {
        let p = oracle_problem(800, 1.0);
        let w = oracle_field(&p.mesh, 1.0, 0.5);
        let seed: Vec<f64> = w.iter().map(|v| v + 0.01).collect();
        let sol = solve_newton(&p, &seed, &SolverConfig::default()).unwrap();
        let dist = sol
            .field
            .iter()
            .zip(&w)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dist < 5e-4, "distance to closed form {dist}");
        assert_eq!(sol.positivity.tag, PositivityTag::BoundaryZero);
    }

    #[test]
    fn trivial_seed_returns_trivial_solution() {
        let p = dip_problem(100, 0.3, Formulation::RForm);
        let sol = solve_newton(&p, &vec![0.0; 101], &SolverConfig::default()).unwrap();
        assert_eq!(sol.positivity.tag, PositivityTag::Trivial);
        assert_eq!(sol.newton_iters, 0);
    }

    #[test]
    fn constant_seed_is_fixed_at_alpha_zero_rform() {
        // Any nonnegative constant lies on the trivial line of the
        // rescaled problem at alpha = 0.
        let p = dip_problem(100, 0.0, Formulation::RForm);
        let c = 0.0025;
        let sol = solve_newton(&p, &constant_field(&p.mesh, c), &SolverConfig::default()).unwrap();
        assert_eq!(sol.newton_iters, 0);
        for v in &sol.field {
            assert_abs_diff_eq!(*v, c, epsilon = 0.0);
        }
        assert_eq!(sol.positivity.tag, PositivityTag::InteriorPositive);
    }

    #[test]
    fn deregularized_padded_oracle_is_a_dead_core() {
        let mesh = build_mesh(-0.1, PI + 0.1, 420).unwrap();
        let p = ProblemSpec::new(
            mesh,
            WeightSpec::new(WeightKind::BuiltinAq { q: 0.5 }),
            0.5,
            1.0,
            Formulation::RForm,
        )
        .unwrap();
        let seed = oracle_field(&p.mesh, 1.0, 0.5);
        let sol = deregularize(
            &p,
            &seed,
            &DEFAULT_EPS_SCHEDULE,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.positivity.tag, PositivityTag::DeadCore);
        // The reported intervals must cover the two zero-extension pads.
        let h = p.mesh.h();
        let covers = |x: f64| {
            sol.positivity
                .dead_core_intervals
                .iter()
                .any(|(s, e)| p.mesh.node(*s) <= x + h && x - h <= p.mesh.node(*e))
        };
        assert!(covers(-0.05), "left pad not covered");
        assert!(covers(PI + 0.05), "right pad not covered");
        // Inside the hump it stays close to the closed form.
        let mid = p.mesh.n_cells() / 2;
        let x = p.mesh.node(mid);
        assert_abs_diff_eq!(sol.field[mid], x.sin().powi(4), epsilon = 5e-4);
    }

    #[test]
    fn change_of_variables_examples() {
        let u = vec![1.0, 2.0];
        let w = change_of_variables(&u, 4.0, 0.5, VariableChange::UToW).unwrap();
        assert_abs_diff_eq!(w[0], 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 32.0, epsilon = 1e-12);
        let back = change_of_variables(&w, 4.0, 0.5, VariableChange::WToU).unwrap();
        assert_abs_diff_eq!(back[0], 1.0, epsilon = 1e-14);
        assert!(change_of_variables(&u, 0.0, 0.5, VariableChange::WToU).is_err());
        assert!(change_of_variables(&u, -1.0, 0.5, VariableChange::UToW).is_err());
    }

    #[test]
    fn scaling_equivariance_between_formulations() {
        // A converged solution of the unscaled problem maps to a solution
        // of the rescaled one under w = α^{1/(1-q)} u.
        let alpha = 0.02;
        let p = dip_problem(400, alpha, Formulation::PForm);
        let seed = constant_field(&p.mesh, 1.0);
        let sol = deregularize(&p, &seed, &DEFAULT_EPS_SCHEDULE, &SolverConfig::default()).unwrap();
        assert!(!sol.is_trivial());
        let w = change_of_variables(&sol.field, alpha, 0.5, VariableChange::UToW).unwrap();
        let pr = dip_problem(400, alpha, Formulation::RForm);
        // At ε = 0 the rescaled residual is exactly α^{2/(1-q)} times the
        // unscaled one, so only rounding is left.
        let cfg0 = SolverConfig::default().with_epsilon(0.0);
        let f = residual(&pr, &w, &cfg0).unwrap();
        assert!(sup_norm(&f) <= 1e-9, "rescaled residual {}", sup_norm(&f));
    }

    #[test]
    fn dirichlet_solution_exists_and_vanishes_at_ends() {
        let mesh = build_mesh(0.0, 1.0, 400).unwrap();
        let p = ProblemSpec::new(
            mesh,
            WeightSpec::new(WeightKind::CosineDip { c: 0.1 }),
            0.5,
            f64::NEG_INFINITY,
            Formulation::PForm,
        )
        .unwrap();
        // The Dirichlet solution is the large-negative-alpha limit of the
        // Robin family, so seed it by walking alpha down the curve.
        let cfg = SolverConfig {
            epsilon: 1e-8,
            ..SolverConfig::default()
        };
        let mut seed = deregularize(
            &p.with_alpha(-1.0),
            &constant_field(&p.mesh, 0.5),
            &eps_schedule_to(1e-8),
            &cfg,
        )
        .unwrap()
        .field;
        for alpha in [-3.0, -10.0, -30.0, -100.0, -1000.0] {
            let sol = solve_newton(&p.with_alpha(alpha), &seed, &cfg).unwrap();
            assert!(!sol.is_trivial(), "collapsed at alpha = {alpha}");
            seed = sol.field;
        }
        let sol = solve_dirichlet(&p, &seed, &cfg).unwrap();
        assert_eq!(sol.role, Role::Ud);
        assert_eq!(sol.field[0], 0.0);
        assert_eq!(sol.field[400], 0.0);
        assert_eq!(sol.positivity.tag, PositivityTag::InteriorPositive);
        // The narrow positive bumps of this weight force small amplitudes;
        // nontrivial here means well clear of the trivial threshold.
        assert!(sol.sup_norm() > 1e-8, "sup = {}", sol.sup_norm());
    }

    #[test]
    fn monotone_iteration_from_zero_returns_zero() {
        let p = dip_problem(200, -1.0, Formulation::PForm);
        let cfg = SolverConfig {
            epsilon: 1e-6,
            ..SolverConfig::default()
        };
        let seed = constant_field(&p.mesh, 0.5);
        let sup_sol = deregularize(&p, &seed, &eps_schedule_to(1e-6), &cfg).unwrap();
        assert!(!sup_sol.is_trivial());
        let zero = vec![0.0; 201];
        let sol = monotone_iteration(&p, &zero, &sup_sol.field, &cfg, 1e-7).unwrap();
        assert_eq!(sol.positivity.tag, PositivityTag::Trivial);
    }

    #[test]
    fn monotone_iteration_finds_the_solution_from_a_bump() {
        let p = dip_problem(200, -1.0, Formulation::PForm);
        let cfg = SolverConfig {
            epsilon: 1e-6,
            ..SolverConfig::default()
        };
        let seed = constant_field(&p.mesh, 0.5);
        let target = deregularize(&p, &seed, &eps_schedule_to(1e-6), &cfg).unwrap();
        assert!(!target.is_trivial());
        let sub = dirichlet_bump_subsolution(&p).unwrap();
        // The bump must sit below the solution for the bracket to hold.
        for i in 0..=200 {
            assert!(
                sub[i] <= target.field[i] + 1e-12,
                "bump exceeds solution at node {i}"
            );
        }
        let sol = monotone_iteration(&p, &sub, &target.field, &cfg, 1e-7).unwrap();
        assert!(!sol.is_trivial());
        let dist = sol
            .field
            .iter()
            .zip(&target.field)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dist < 1e-6, "monotone limit differs from Newton by {dist}");
    }

    #[test]
    fn monotone_iteration_rejects_bad_ordering() {
        let p = dip_problem(50, -1.0, Formulation::PForm);
        let sub = constant_field(&p.mesh, 1.0);
        let sup = constant_field(&p.mesh, 0.5);
        assert!(matches!(
            monotone_iteration(&p, &sub, &sup, &SolverConfig::default(), 1e-8),
            Err(SolverError::OrderingViolated { .. })
        ));
    }

    #[test]
    fn mixed_problem_two_seeds_agree() {
        let p = dip_problem(200, 0.0, Formulation::PForm);
        let mixed = MixedProblemSpec {
            d_low: 0.0,
            d_high: 0.2,
            dirichlet_end: MixedEnd::High,
        };
        let cfg = SolverConfig {
            epsilon: 0.0,
            ..SolverConfig::default()
        };
        let s1 = constant_field(&p.mesh, 1.0);
        let s2 = hat_field(&p.mesh, 0.1, 0.1, 2.0);
        let v1 = solve_mixed_q(&p, &mixed, &s1, &cfg).unwrap();
        let v2 = solve_mixed_q(&p, &mixed, &s2, &cfg).unwrap();
        assert!(!v1.is_trivial());
        let dist = v1
            .field
            .iter()
            .zip(&v2.field)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dist < 1e-8, "seeds disagree by {dist}");
        // Zero-flux end keeps a strictly positive value, comparable to the peak.
        assert!(
            v1.field[0] > 0.1 * v1.sup_norm(),
            "v(0) = {}, sup = {}",
            v1.field[0],
            v1.sup_norm()
        );
    }

    #[test]
    fn mixed_problem_rejects_negative_weight_interval() {
        let p = dip_problem(200, 0.0, Formulation::PForm);
        let mixed = MixedProblemSpec {
            d_low: 0.0,
            d_high: 0.5,
            dirichlet_end: MixedEnd::High,
        };
        let s = constant_field(&p.mesh, 1.0);
        assert!(matches!(
            solve_mixed_q(&p, &mixed, &s, &SolverConfig::default()),
            Err(SolverError::BadMixed(_))
        ));
    }

    #[test]
    fn classification_thresholds() {
        let p = dip_problem(100, 1.0, Formulation::PForm);
        let zero = vec![0.0; 101];
        assert_eq!(
            classify_positivity(&p, &zero, POS_TOL, ABS_TOL).tag,
            PositivityTag::Trivial
        );
        let c = constant_field(&p.mesh, 0.0025);
        assert_eq!(
            classify_positivity(&p, &c, POS_TOL, ABS_TOL).tag,
            PositivityTag::InteriorPositive
        );
        // A field with a macroscopic low plateau is a dead core.
        let mut dc = constant_field(&p.mesh, 1.0);
        for i in 40..=60 {
            dc[i] = 1e-9;
        }
        let cls = classify_positivity(&p, &dc, POS_TOL, ABS_TOL);
        assert_eq!(cls.tag, PositivityTag::DeadCore);
        assert_eq!(cls.dead_core_intervals, vec![(40, 60)]);
        // A single small endpoint value is boundary contact, not a core.
        let mut bz = constant_field(&p.mesh, 1.0);
        bz[0] = 1e-9;
        assert_eq!(
            classify_positivity(&p, &bz, POS_TOL, ABS_TOL).tag,
            PositivityTag::BoundaryZero
        );
    }

    #[test]
    fn eps_schedule_construction() {
        let s = eps_schedule_to(1e-8);
        assert_eq!(s.len(), 8);
        assert_eq!(*s.last().unwrap(), 1e-8);
        let s0 = eps_schedule_to(0.0);
        assert_eq!(s0.len(), 9);
        assert_eq!(*s0.last().unwrap(), 0.0);
        let s3 = eps_schedule_to(2e-3);
        assert_eq!(s3, vec![1e-1, 1e-2, 2e-3]);
    }
}
