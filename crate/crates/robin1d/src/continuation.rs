//! Pseudo-arclength continuation of solution branches in the (alpha, field)
//! space: secant predictor, bordered Newton corrector, fold-capable step
//! control, and contact detection against the trivial line (alpha > 0,
//! field = 0) and the constant line at alpha = 0. Also the regularized
//! branch family over a decreasing epsilon list and multistart solution
//! counting at fixed alpha.

use crate::linalg::DenseLu;
use crate::mesh::{integrate_domain, min_value, robin_tridiag, sup_norm, Mesh};
use crate::solver::{
    classify_positivity, constant_field, deregularize, eps_schedule_to, g_eps, g_eps_prime,
    residual, Formulation, PositivityClass, ProblemSpec, Role, Solution,
    SolverConfig, SolverError, ABS_TOL, POS_TOL,
};
use crate::spectral::{alpha_one_eps, SpectralError, ALPHA_BRACKET_DEFAULT};
use crate::weights::TOL_ZERO_REL;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute closeness for declaring contact with the trivial or constant
/// lines, in the branch variables.
pub const CONTACT_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("bad continuation input: {0}")]
    BadInput(String),
    #[error("branch start failed: {0}")]
    StartFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    /// Endpoint on the trivial line (positive alpha, vanishing field).
    Gamma0Contact,
    /// Endpoint on the nonnegative constants at alpha = 0.
    Gamma1Contact,
    /// Left the configured alpha window (also used for branches entered
    /// mid-window, where the start is no contact point at all).
    AlphaLimit,
    /// Corrector breakdown at the minimal step, or step budget exhausted.
    Failure,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub alpha: f64,
    pub epsilon: f64,
    pub field: Vec<f64>,
    pub sup_norm: f64,
    pub min_value: f64,
    pub gamma1: Option<f64>,
    pub arclength: f64,
    pub positivity: PositivityClass,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub start_tag: BranchTag,
    pub end_tag: BranchTag,
    pub turning_points: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ContinuationConfig {
    pub step_min: f64,
    pub step_max: f64,
    pub step_init: f64,
    pub max_points: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub contact_tol: f64,
    pub solver: SolverConfig,
    pub compute_gamma1: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            step_min: 1e-5,
            step_max: 5e-2,
            step_init: 5e-3,
            max_points: 4000,
            alpha_min: -10.0,
            alpha_max: 10.0,
            contact_tol: CONTACT_TOL,
            solver: SolverConfig::default(),
            compute_gamma1: false,
        }
    }
}

/// Inner product weighting for arclength: quadrature on the field part,
/// amplitude rescaled so weights with large constants do not drown alpha.
struct Metric {
    quad: Vec<f64>,
    amp_scale: f64,
}

impl Metric {
    fn new(mesh: &Mesh, a: &[f64], q: f64) -> Metric {
        // Amplitudes are measured against the balance constant so branches
        // whose fields live at the scale of a small constant still span an
        // O(1) coordinate range next to alpha.
        let mass = integrate_domain(mesh, a);
        let amp_scale = if mass < 0.0 {
            (-mass / 2.0).powf(1.0 / (1.0 - q))
        } else {
            1.0
        };
        Metric {
            quad: (0..mesh.n_nodes()).map(|i| mesh.quad_weight(i)).collect(),
            amp_scale,
        }
    }

    fn dot_field(&self, f: &[f64], g: &[f64]) -> f64 {
        let s: f64 = self
            .quad
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (x, y))| w * x * y)
            .sum();
        s / (self.amp_scale * self.amp_scale)
    }

    fn norm(&self, f: &[f64], da: f64) -> f64 {
        (self.dot_field(f, f) + da * da).sqrt()
    }
}

fn residual_floor(mesh: &Mesh, field_sup: f64) -> f64 {
    16.0 * f64::EPSILON * (1.0 + field_sup) / (mesh.h() * mesh.h())
}

/// Jacobian of the residual in the field, and its alpha-derivative column.
fn branch_jacobian(
    problem: &ProblemSpec,
    w: &[f64],
    eps: f64,
) -> (crate::linalg::Tridiag, Vec<f64>) {
    let mesh = &problem.mesh;
    let n = mesh.n_cells();
    let cw = problem.weight_factor();
    let mut j = robin_tridiag(mesh, problem.alpha);
    for i in 0..=n {
        j.dia[i] -= cw * problem.a[i] * g_eps_prime(w[i], problem.q, eps);
    }
    let mut ja = vec![0.0; n + 1];
    // Robin rows depend on alpha through the ghost elimination.
    ja[0] = -2.0 * w[0] / mesh.h();
    ja[n] = -2.0 * w[n] / mesh.h();
    if problem.formulation == Formulation::RForm {
        // The weight factor is alpha itself.
        for i in 0..=n {
            ja[i] -= problem.a[i] * g_eps(w[i], problem.q, eps);
        }
    }
    (j, ja)
}

/// One bordered Newton correction to (field, alpha) against the linear
/// normalization <dir_w, z - z_pred> + dir_a (alpha - alpha_pred) = 0.
/// Solves by block elimination through the tridiagonal Jacobian, falling
/// back to a dense bordered factorization when that pivots to nothing.
#[allow(clippy::too_many_arguments)]
fn bordered_corrector(
    problem: &ProblemSpec,
    eps: f64,
    metric: &Metric,
    w_pred: &[f64],
    a_pred: f64,
    dir_w: &[f64],
    dir_a: f64,
    config: &SolverConfig,
) -> Result<(Vec<f64>, f64, f64), String> {
    let mesh = &problem.mesh;
    let cfg_eps = config.with_epsilon(eps);
    let mut w: Vec<f64> = w_pred.iter().map(|x| x.max(0.0)).collect();
    let mut alpha = a_pred;

    let eval = |w: &[f64], alpha: f64| -> Result<Vec<f64>, String> {
        let p = problem.with_alpha(alpha);
        residual(&p, w, &cfg_eps).map_err(|e| e.to_string())
    };
    let norm_res = |w: &[f64], alpha: f64| -> f64 {
        let dz: Vec<f64> = w.iter().zip(w_pred).map(|(x, y)| x - y).collect();
        metric.dot_field(dir_w, &dz) + dir_a * (alpha - a_pred)
    };

    let mut f = eval(&w, alpha)?;
    let mut merit = sup_norm(&f) + norm_res(&w, alpha).abs() / mesh.h();
    for _ in 0..config.max_iters {
        let tol = config.newton_tol.max(residual_floor(mesh, sup_norm(&w)));
        if sup_norm(&f) <= tol && norm_res(&w, alpha).abs() <= 1e-10 * (1.0 + alpha.abs()) {
            return Ok((w, alpha, sup_norm(&f)));
        }
        let p = problem.with_alpha(alpha);
        let (jac, ja) = branch_jacobian(&p, &w, eps);
        let nr = norm_res(&w, alpha);
        let (dw, da) = {
            let solved = jac.factor().and_then(|lu| {
                let mrhs: Vec<f64> = f.iter().map(|x| -x).collect();
                let z1 = lu.solve(&mrhs);
                let z2 = lu.solve(&ja);
                let denom = dir_a - metric.dot_field(dir_w, &z2);
                if !denom.is_finite() || denom.abs() < 1e-13 {
                    return None;
                }
                let da = (-nr - metric.dot_field(dir_w, &z1)) / denom;
                if !da.is_finite() {
                    return None;
                }
                let dw: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - da * b).collect();
                Some((dw, da))
            });
            match solved {
                Some(s) => s,
                None => dense_bordered_step(mesh, metric, &jac, &ja, dir_w, dir_a, &f, nr)?,
            }
        };
        let mut lambda = 1.0;
        let mut stepped = false;
        while lambda >= config.damping_min {
            let tw: Vec<f64> = w
                .iter()
                .zip(&dw)
                .map(|(x, d)| (x + lambda * d).max(0.0))
                .collect();
            let ta = alpha + lambda * da;
            if let Ok(ft) = eval(&tw, ta) {
                let mt = sup_norm(&ft) + norm_res(&tw, ta).abs() / mesh.h();
                if mt < merit || lambda <= config.damping_min {
                    w = tw;
                    alpha = ta;
                    f = ft;
                    merit = mt;
                    stepped = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !stepped {
            return Err("no acceptable damped step".into());
        }
    }
    let tol = config.newton_tol.max(residual_floor(mesh, sup_norm(&w)));
    if sup_norm(&f) <= tol {
        Ok((w, alpha, sup_norm(&f)))
    } else {
        Err(format!("corrector stalled at residual {:.3e}", sup_norm(&f)))
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_bordered_step(
    mesh: &Mesh,
    metric: &Metric,
    jac: &crate::linalg::Tridiag,
    ja: &[f64],
    dir_w: &[f64],
    dir_a: f64,
    f: &[f64],
    nr: f64,
) -> Result<(Vec<f64>, f64), String> {
    let n = mesh.n_cells();
    let m = n + 2;
    let mut a = vec![0.0; m * m];
    for i in 0..=n {
        a[i * m + i] = jac.dia[i];
        if i > 0 {
            a[i * m + i - 1] = jac.sub[i - 1];
        }
        if i < n {
            a[i * m + i + 1] = jac.sup[i];
        }
        a[i * m + n + 1] = ja[i];
        a[(n + 1) * m + i] =
            metric.quad[i] * dir_w[i] / (metric.amp_scale * metric.amp_scale);
    }
    a[(n + 1) * m + n + 1] = dir_a;
    let mut rhs = vec![0.0; m];
    for i in 0..=n {
        rhs[i] = -f[i];
    }
    rhs[n + 1] = -nr;
    let lu = DenseLu::factor(a, m).ok_or("singular bordered system")?;
    let sol = lu.solve(&rhs);
    Ok((sol[..=n].to_vec(), sol[n + 1]))
}

/// Indices where the alpha increment reverses sign between consecutive
/// steps. Zero increments inherit the preceding direction.
pub fn detect_turning_points(alphas: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last_sign = 0.0f64;
    for k in 1..alphas.len() {
        let d = alphas[k] - alphas[k - 1];
        if d == 0.0 {
            continue;
        }
        let s = d.signum();
        if last_sign != 0.0 && s != last_sign {
            out.push(k - 1);
        }
        last_sign = s;
    }
    out
}

fn make_point(
    problem: &ProblemSpec,
    w: &[f64],
    alpha: f64,
    eps: f64,
    arclength: f64,
    compute_gamma1: bool,
) -> BranchPoint {
    let p = problem.with_alpha(alpha);
    let positivity = classify_positivity(&p, w, POS_TOL, ABS_TOL);
    let gamma1 = if compute_gamma1 {
        let sol = Solution {
            field: w.to_vec(),
            residual_sup: 0.0,
            positivity: positivity.clone(),
            alpha,
            epsilon_used: eps,
            role: Role::Generic,
            newton_iters: 0,
        };
        crate::spectral::gamma1_linearized(&p, &sol)
            .ok()
            .map(|r| r.gamma1)
    } else {
        None
    };
    BranchPoint {
        alpha,
        epsilon: eps,
        field: w.to_vec(),
        sup_norm: sup_norm(w),
        min_value: min_value(w),
        gamma1,
        arclength,
        positivity,
    }
}

fn near_constant(w: &[f64]) -> bool {
    let s = sup_norm(w);
    s > 0.0 && (s - min_value(w)) < 1e-2 * s
}

/// Bisect the step fraction until the corrected point lands inside the
/// alpha contact window. The corrector is re-run from the same base point
/// along the same secant direction, so the result stays on the branch.
#[allow(clippy::too_many_arguments)]
fn refine_zero_crossing(
    problem: &ProblemSpec,
    eps: f64,
    metric: &Metric,
    w_base: &[f64],
    a_base: f64,
    dir_w: &[f64],
    dir_a: f64,
    ds: f64,
    solver: &SolverConfig,
    contact_tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..48 {
        let f = 0.5 * (lo + hi);
        let w_pred: Vec<f64> = w_base
            .iter()
            .zip(dir_w)
            .map(|(x, d)| x + f * ds * d)
            .collect();
        let a_pred = a_base + f * ds * dir_a;
        let (w_f, a_f, _) = bordered_corrector(
            problem, eps, metric, &w_pred, a_pred, dir_w, dir_a, solver,
        )
        .ok()?;
        if a_f.abs() <= 0.9 * contact_tol {
            return Some((w_f, a_f));
        }
        if a_f.signum() == a_base.signum() {
            lo = f;
        } else {
            hi = f;
        }
    }
    None
}

/// Continue a branch from a converged start by secant predictor and
/// bordered corrector. `direction` only orients the first step: +1 moves
/// toward increasing alpha when the initial tangent is alpha-dominant,
/// toward increasing amplitude otherwise. Termination: contact with the
/// trivial line, contact with the constants at alpha = 0, leaving the
/// alpha window, corrector breakdown at the minimal step, or the point
/// budget (tagged as failure).
pub fn continue_branch(
    problem: &ProblemSpec,
    start: &Solution,
    direction: i32,
    config: &ContinuationConfig,
) -> Branch {
    let eps = start.epsilon_used;
    let mesh = &problem.mesh;
    let metric = Metric::new(mesh, &problem.a, problem.q);
    let fail_now = |points: Vec<BranchPoint>, start_tag: BranchTag| Branch {
        turning_points: Vec::new(),
        points,
        start_tag,
        end_tag: BranchTag::Failure,
    };

    let start_point = make_point(
        problem,
        &start.field,
        start.alpha,
        eps,
        0.0,
        config.compute_gamma1,
    );
    let start_tag = if start_point.sup_norm < config.contact_tol {
        BranchTag::Gamma0Contact
    } else if start.alpha.abs() < config.contact_tol && near_constant(&start.field) {
        BranchTag::Gamma1Contact
    } else {
        BranchTag::AlphaLimit
    };
    if problem.is_dirichlet() || !start.alpha.is_finite() {
        return fail_now(vec![start_point], start_tag);
    }
    // The start must actually solve its own equation.
    let cfg_eps = config.solver.with_epsilon(eps);
    let p0 = problem.with_alpha(start.alpha);
    match residual(&p0, &start.field, &cfg_eps) {
        Ok(f) => {
            let tol = config
                .solver
                .newton_tol
                .max(residual_floor(mesh, start.sup_norm()));
            if sup_norm(&f) > 10.0 * tol {
                return fail_now(vec![start_point], start_tag);
            }
        }
        Err(_) => return fail_now(vec![start_point], start_tag),
    }

    // First direction: tangent through the bordered Jacobian, or the pure
    // amplitude direction when the Jacobian is too close to singular (as
    // at a bifurcation from the trivial line).
    let sgn = if direction >= 0 { 1.0 } else { -1.0 };
    let (mut dir_w, mut dir_a): (Vec<f64>, f64) = {
        let (jac, ja) = branch_jacobian(&p0, &start.field, eps);
        let tangent = jac.factor().and_then(|lu| {
            let z2: Vec<f64> = lu.solve(&ja).iter().map(|x| -x).collect();
            let nrm = metric.norm(&z2, 1.0);
            if nrm.is_finite() && nrm > 0.0 {
                Some((z2, nrm))
            } else {
                None
            }
        });
        match tangent {
            Some((z2, nrm)) => {
                let da = 1.0 / nrm;
                let tw: Vec<f64> = z2.iter().map(|x| x / nrm).collect();
                if da.abs() >= 0.1 {
                    // Alpha-dominant: direction is the alpha sense.
                    (tw.iter().map(|x| sgn * x).collect(), sgn * da)
                } else {
                    // Amplitude-dominant: direction is the mass sense.
                    let mass: f64 = tw
                        .iter()
                        .enumerate()
                        .map(|(i, x)| metric.quad[i] * x)
                        .sum();
                    let s = sgn * mass.signum();
                    (tw.iter().map(|x| s * x).collect(), s * da)
                }
            }
            None => {
                let nrm = metric.norm(&start.field, 0.0);
                if nrm <= 0.0 {
                    return fail_now(vec![start_point], start_tag);
                }
                (start.field.iter().map(|x| sgn * x / nrm).collect(), 0.0)
            }
        }
    };

    let mut points = vec![start_point];
    let mut w = start.field.clone();
    let mut alpha = start.alpha;
    let mut arclength = 0.0;
    let mut ds = config.step_init.clamp(config.step_min, config.step_max);
    let mut consec_ok = 0usize;
    let mut max_sup_seen = sup_norm(&w);
    let start_sup = max_sup_seen;
    let mut alpha_armed = alpha.abs() >= 2.0 * config.contact_tol;
    // Set after passing transversally through alpha = 0, so the crossing
    // is not re-refined every subsequent step; rearmed away from zero.
    let mut zero_passed = false;
    let end_tag;

    loop {
        if points.len() >= config.max_points {
            end_tag = BranchTag::Failure;
            break;
        }
        let w_pred: Vec<f64> = w.iter().zip(&dir_w).map(|(x, d)| x + ds * d).collect();
        let a_pred = alpha + ds * dir_a;
        match bordered_corrector(
            problem,
            eps,
            &metric,
            &w_pred,
            a_pred,
            &dir_w,
            dir_a,
            &config.solver,
        ) {
            Ok((w_new, a_new, _res)) => {
                let dz: Vec<f64> = w_new.iter().zip(&w).map(|(x, y)| x - y).collect();
                let dist = metric.norm(&dz, a_new - alpha);
                if dist < 0.05 * config.step_min || dist > config.step_max {
                    // Either the corrector fell back onto the current point
                    // or curvature carried it past the step ceiling; both
                    // are resolved by shrinking the step.
                    ds *= 0.5;
                    if ds < config.step_min {
                        end_tag = BranchTag::Failure;
                        break;
                    }
                    consec_ok = 0;
                    continue;
                }
                // A full step can carry alpha across zero without any point
                // landing inside the contact window; bisect the step fraction
                // to place one there, then let the contact checks decide.
                // A crossing where the field is not near-constant is
                // transversal and the branch continues through it.
                let (mut w_new, mut a_new) = (w_new, a_new);
                if alpha_armed
                    && !zero_passed
                    && alpha.abs() > config.contact_tol
                    && a_new != 0.0
                    && alpha.signum() != a_new.signum()
                {
                    if let Some((w_m, a_m)) = refine_zero_crossing(
                        problem,
                        eps,
                        &metric,
                        &w,
                        alpha,
                        &dir_w,
                        dir_a,
                        ds,
                        &config.solver,
                        config.contact_tol,
                    ) {
                        w_new = w_m;
                        a_new = a_m;
                    }
                    zero_passed = true;
                }
                let dz: Vec<f64> = w_new.iter().zip(&w).map(|(x, y)| x - y).collect();
                let dist = metric.norm(&dz, a_new - alpha);
                if !(dist > 0.0) {
                    end_tag = BranchTag::Failure;
                    break;
                }
                // Secant direction for the next predictor.
                dir_w = dz.iter().map(|x| x / dist).collect();
                dir_a = (a_new - alpha) / dist;
                w = w_new;
                alpha = a_new;
                arclength += dist;
                points.push(make_point(
                    problem,
                    &w,
                    alpha,
                    eps,
                    arclength,
                    config.compute_gamma1,
                ));
                consec_ok += 1;
                if consec_ok >= 2 {
                    ds = (ds * 1.3).min(config.step_max);
                }
                let sup = sup_norm(&w);
                max_sup_seen = max_sup_seen.max(sup);
                if alpha.abs() >= 2.0 * config.contact_tol {
                    alpha_armed = true;
                    zero_passed = false;
                }
                if sup < config.contact_tol && sup < 0.25 * max_sup_seen && points.len() >= 3 {
                    end_tag = BranchTag::Gamma0Contact;
                    break;
                }
                if alpha_armed
                    && alpha.abs() < config.contact_tol
                    && sup > 10.0 * start_sup
                    && near_constant(&w)
                {
                    end_tag = BranchTag::Gamma1Contact;
                    break;
                }
                if alpha > config.alpha_max || alpha < config.alpha_min {
                    end_tag = BranchTag::AlphaLimit;
                    break;
                }
            }
            Err(_) => {
                ds *= 0.5;
                if ds < config.step_min {
                    end_tag = BranchTag::Failure;
                    break;
                }
                consec_ok = 0;
            }
        }
    }
    let alphas: Vec<f64> = points.iter().map(|p| p.alpha).collect();
    Branch {
        points,
        start_tag,
        end_tag,
        turning_points: detect_turning_points(&alphas),
    }
}

/// Solve the bordered start system near a bifurcation from the trivial
/// line: the field is pinned to a small amplitude at the eigenfunction
/// peak and alpha is freed.
fn pinned_start(
    problem: &ProblemSpec,
    epsilon: f64,
    alpha1: f64,
    eigenfunction: &[f64],
    pin: f64,
    config: &ContinuationConfig,
) -> Result<Solution, ContinuationError> {
    let mesh = &problem.mesh;
    let metric = Metric::new(mesh, &problem.a, problem.q);
    let istar = (0..eigenfunction.len())
        .max_by(|&i, &j| eigenfunction[i].partial_cmp(&eigenfunction[j]).unwrap())
        .unwrap();
    // Normalization row <dir_w, w - w_pred> = 0 reduces to w[istar] = pin
    // exactly when dir_w is the metric inverse of the istar indicator.
    let mut dir_w = vec![0.0; mesh.n_nodes()];
    dir_w[istar] = metric.amp_scale * metric.amp_scale / metric.quad[istar];
    let w_pred: Vec<f64> = eigenfunction.iter().map(|x| pin * x).collect();
    debug_assert!((w_pred[istar] - pin).abs() <= 1e-12 * pin);
    let (w, alpha, res) = bordered_corrector(
        problem,
        epsilon,
        &metric,
        &w_pred,
        alpha1,
        &dir_w,
        0.0,
        &config.solver,
    )
    .map_err(ContinuationError::StartFailed)?;
    let p = problem.with_alpha(alpha);
    let positivity = classify_positivity(&p, &w, POS_TOL, ABS_TOL);
    Ok(Solution {
        field: w,
        residual_sup: res,
        positivity,
        alpha,
        epsilon_used: epsilon,
        role: Role::Generic,
        newton_iters: 0,
    })
}

/// Start a regularized branch at its bifurcation point from the trivial
/// line and continue it toward growing amplitude. Returns the branch and
/// the linearized crossing value it emanates from.
pub fn branch_from_bifurcation(
    problem: &ProblemSpec,
    epsilon: f64,
    config: &ContinuationConfig,
) -> Result<(Branch, f64), ContinuationError> {
    if problem.formulation != Formulation::RForm {
        return Err(ContinuationError::BadInput(
            "regularized branches live in the rescaled formulation".into(),
        ));
    }
    let spec = alpha_one_eps(problem, epsilon, ALPHA_BRACKET_DEFAULT)?;
    let alpha1 = spec.alpha1_eps;
    if alpha1.abs() < 2.0 * config.contact_tol {
        // Starting inside the contact window cannot arm the constants-line
        // check; the corrector may then slide onto the exact alpha = 0
        // solution line and walk it indefinitely.
        return Err(ContinuationError::StartFailed(format!(
            "bifurcation value {alpha1:.3e} sits inside the contact window; \
             enlarge epsilon or shrink contact_tol"
        )));
    }
    let mass = integrate_domain(&problem.mesh, &problem.a);
    let ca = if mass < 0.0 {
        (-mass / 2.0).powf(1.0 / (1.0 - problem.q))
    } else {
        1.0
    };
    let pin = (1e-4 * (ca - epsilon).abs()).max(1e-9);
    let start = pinned_start(problem, epsilon, alpha1, &spec.eigenfunction, pin, config)?;
    if start.sup_norm() >= config.contact_tol {
        return Err(ContinuationError::StartFailed(format!(
            "pinned start amplitude {} is not a trivial-line contact",
            start.sup_norm()
        )));
    }
    let mut branch = continue_branch(problem, &start, 1, config);
    branch.start_tag = BranchTag::Gamma0Contact;
    Ok((branch, alpha1))
}

/// Family of regularized branches over a strictly decreasing epsilon list.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonFamily {
    pub epsilons: Vec<f64>,
    pub alpha1s: Vec<f64>,
    pub branches: Vec<Branch>,
    /// Symmetrized Hausdorff distance between consecutive branches in the
    /// (alpha, sup/amp_scale) plane.
    pub consecutive_distances: Vec<f64>,
    /// First failing member, if the family is partial.
    pub failure: Option<(f64, String)>,
}

fn branch_plane_distance(b1: &Branch, b2: &Branch, amp_scale: f64) -> f64 {
    let pts = |b: &Branch| -> Vec<(f64, f64)> {
        b.points
            .iter()
            .map(|p| (p.alpha, p.sup_norm / amp_scale))
            .collect()
    };
    let p1 = pts(b1);
    let p2 = pts(b2);
    let one_sided = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
        from.iter()
            .map(|(a, s)| {
                to.iter()
                    .map(|(b, t)| ((a - b).powi(2) + (s - t).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    one_sided(&p1, &p2).max(one_sided(&p2, &p1))
}

/// One branch per epsilon, each from its own bifurcation point. A member
/// failure truncates the family; what was computed is still returned.
pub fn epsilon_family(
    problem: &ProblemSpec,
    eps_list: &[f64],
    config: &ContinuationConfig,
) -> Result<EpsilonFamily, ContinuationError> {
    epsilon_family_jobs(problem, eps_list, config, 1)
}

/// `epsilon_family` with up to `jobs` members continued concurrently.
/// Members are independent, so the assembled family is identical to the
/// sequential one (a sequential run just skips the members past the first
/// failure instead of discarding them).
pub fn epsilon_family_jobs(
    problem: &ProblemSpec,
    eps_list: &[f64],
    config: &ContinuationConfig,
    jobs: usize,
) -> Result<EpsilonFamily, ContinuationError> {
    if eps_list.is_empty() {
        return Err(ContinuationError::BadInput("empty epsilon list".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|e| *e <= 0.0) {
        return Err(ContinuationError::BadInput(
            "epsilon list must be strictly decreasing and positive".into(),
        ));
    }
    let results: Vec<Result<(Branch, f64), ContinuationError>> = if jobs <= 1 {
        let mut out = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let r = branch_from_bifurcation(problem, eps, config);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    } else {
        std::thread::scope(|scope| {
            let mut pending = Vec::with_capacity(eps_list.len());
            for chunk in eps_list.chunks(jobs) {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&eps| scope.spawn(move || branch_from_bifurcation(problem, eps, config)))
                    .collect();
                for h in handles {
                    pending.push(h.join().unwrap_or_else(|_| {
                        Err(ContinuationError::StartFailed(
                            "continuation worker panicked".into(),
                        ))
                    }));
                }
            }
            pending
        })
    };

    let metric = Metric::new(&problem.mesh, &problem.a, problem.q);
    let mut fam = EpsilonFamily {
        epsilons: Vec::new(),
        alpha1s: Vec::new(),
        branches: Vec::new(),
        consecutive_distances: Vec::new(),
        failure: None,
    };
    for (&eps, result) in eps_list.iter().zip(results) {
        match result {
            Ok((branch, alpha1)) => {
                if let Some(prev) = fam.branches.last() {
                    fam.consecutive_distances.push(branch_plane_distance(
                        prev,
                        &branch,
                        metric.amp_scale,
                    ));
                }
                fam.epsilons.push(eps);
                fam.alpha1s.push(alpha1);
                fam.branches.push(branch);
            }
            Err(e) => {
                fam.failure = Some((eps, e.to_string()));
                break;
            }
        }
    }
    Ok(fam)
}

/// Deregularized multistart solve-and-count at fixed alpha. Seeds are the
/// deterministic multistart fields scaled to the problem amplitude, plus
/// the balance constant and the scaled Neumann solution. Converged
/// nontrivial solutions that do not vanish on the positive set of the
/// weight are deduplicated by sup-norm distance and returned ordered by
/// amplitude.
pub fn count_solutions_multistart(
    problem: &ProblemSpec,
    alpha: f64,
    config: &SolverConfig,
    n_seeds: usize,
) -> Result<(usize, Vec<Solution>), ContinuationError> {
    if n_seeds < 8 {
        return Err(ContinuationError::BadInput(format!(
            "need at least 8 seeds, got {n_seeds}"
        )));
    }
    if !alpha.is_finite() {
        return Err(ContinuationError::BadInput(
            "counting needs a finite alpha".into(),
        ));
    }
    let p = problem.with_alpha(alpha);
    let mesh = &problem.mesh;
    let mass = integrate_domain(mesh, &problem.a);
    let ca = if mass < 0.0 {
        Some((-mass / 2.0).powf(1.0 / (1.0 - problem.q)))
    } else {
        None
    };
    // In the unscaled variables at alpha > 0 the solution pair lives at
    // amplitudes between the flux-free solution and c_a / alpha^(1/(1-q));
    // in the rescaled variables (and at alpha <= 0) everything sits at the
    // c_a scale.
    let unscaled_up = problem.formulation == Formulation::PForm && alpha > 1e-8;
    let scale = match ca {
        Some(c) if unscaled_up => c * alpha.powf(-1.0 / (1.0 - problem.q)),
        Some(c) => c,
        None => 1.0,
    };
    let mut seeds: Vec<Vec<f64>> = crate::variational::multistart_seeds(mesh)
        .into_iter()
        .take(n_seeds)
        .map(|s| s.iter().map(|x| x * scale).collect())
        .collect();
    if ca.is_some() {
        // The large solution tracks the balance constant; near the fold
        // the pair sits at intermediate amplitudes, so ladder down from it.
        seeds.push(constant_field(mesh, scale));
        if unscaled_up {
            let mut amp = 0.5 * scale;
            for _ in 0..6 {
                seeds.push(constant_field(mesh, amp));
                amp *= 0.5;
            }
        }
    }
    // The small solution shadows the flux-free one, exactly in the
    // unscaled variables and through the change of variables otherwise.
    if let Ok(pn) = ProblemSpec::new(
        mesh.clone(),
        problem.weight.clone(),
        problem.q,
        0.0,
        Formulation::PForm,
    ) {
        if let Ok(un) = crate::variational::neumann_solution(&pn, config) {
            if !un.is_trivial() {
                let factor = match problem.formulation {
                    Formulation::RForm if alpha > 0.0 => {
                        alpha.powf(1.0 / (1.0 - problem.q))
                    }
                    _ => 1.0,
                };
                seeds.push(un.field.iter().map(|x| factor * x).collect());
                if unscaled_up {
                    for f in [2.0, 4.0] {
                        seeds.push(un.field.iter().map(|x| f * factor * x).collect());
                    }
                }
            }
        }
    }

    let schedule = eps_schedule_to(0.0);
    let pos_tol = TOL_ZERO_REL * sup_norm(&problem.a);
    let mut found: Vec<Solution> = Vec::new();
    for seed in &seeds {
        let Ok(sol) = deregularize(&p, seed, &schedule, config) else {
            continue;
        };
        if sol.is_trivial() {
            continue;
        }
        // Solutions supported away from the positive set do not count.
        let sup_on_pos = sol
            .field
            .iter()
            .zip(&problem.a)
            .filter(|(_, a)| **a > pos_tol)
            .map(|(u, _)| u.abs())
            .fold(0.0, f64::max);
        if sup_on_pos <= 1e3 * ABS_TOL * (1.0 + sol.sup_norm()) {
            continue;
        }
        let tol = 1e-4 * (1.0 + sol.sup_norm());
        let dup = found.iter().position(|k| {
            k.field
                .iter()
                .zip(&sol.field)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                < tol
        });
        match dup {
            Some(i) => {
                if sol.residual_sup < found[i].residual_sup {
                    found[i] = sol;
                }
            }
            None => found.push(sol),
        }
    }
    found.sort_by(|a, b| a.sup_norm().partial_cmp(&b.sup_norm()).unwrap());
    Ok((found.len(), found))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::solver::solve_newton;
    use crate::variational::alpha_s_upper_bound;
    use crate::weights::{WeightKind, WeightSpec};

    fn plateau_weight() -> WeightSpec {
        WeightSpec::new(WeightKind::Tabulated {
            points: vec![(0.0, 5.0), (0.35, 5.0), (0.45, -20.0 / 3.0), (1.0, -20.0 / 3.0)],
        })
    }

    fn plateau_problem(n: usize) -> ProblemSpec {
        ProblemSpec::new(
            build_mesh(0.0, 1.0, n).unwrap(),
            plateau_weight(),
            0.5,
            0.0,
            Formulation::RForm,
        )
        .unwrap()
    }

    fn dip_problem(n: usize, c: f64) -> ProblemSpec {
        ProblemSpec::new(
            build_mesh(0.0, 1.0, n).unwrap(),
            WeightSpec::new(WeightKind::CosineDip { c }),
            0.5,
            0.0,
            Formulation::RForm,
        )
        .unwrap()
    }

    fn assert_branch_wellformed(b: &Branch, cfg: &ContinuationConfig) {
        assert!(!b.points.is_empty());
        for k in 1..b.points.len() {
            let d = b.points[k].arclength - b.points[k - 1].arclength;
            assert!(d > 0.0, "arclength not increasing at {k}");
            assert!(
                d <= cfg.step_max * (1.0 + 1e-9),
                "step {d} above max at {k}"
            );
        }
    }

    #[test]
    fn turning_point_detection_rules() {
        assert_eq!(detect_turning_points(&[0.10, 0.12, 0.11]), vec![1]);
        assert_eq!(detect_turning_points(&[0.1, 0.2, 0.3, 0.4]), Vec::<usize>::new());
        assert_eq!(detect_turning_points(&[0.3, 0.2, 0.1]), Vec::<usize>::new());
        assert_eq!(detect_turning_points(&[0.1, 0.2, 0.2, 0.1]), vec![2]);
    }

    #[test]
    fn plateau_branch_runs_from_trivial_line_to_constants() {
        let p = plateau_problem(200);
        let cfg = ContinuationConfig::default();
        let (b, alpha1) = branch_from_bifurcation(&p, 1e-1, &cfg).unwrap();
        assert_branch_wellformed(&b, &cfg);
        assert_eq!(b.start_tag, BranchTag::Gamma0Contact);
        assert_eq!(b.end_tag, BranchTag::Gamma1Contact, "{:?}", b.end_tag);
        let first = b.points.first().unwrap();
        let last = b.points.last().unwrap();
        // The start sits on the trivial line at the linearized crossing.
        assert!(first.sup_norm < CONTACT_TOL);
        assert!((first.alpha - alpha1).abs() < 1e-3, "start alpha {} vs {alpha1}", first.alpha);
        // The end is the constant c_a - eps = 0.9 at alpha = 0.
        assert!(last.alpha.abs() < CONTACT_TOL);
        assert!(
            (last.sup_norm - 0.9).abs() < 0.9 * 5e-2,
            "end amplitude {}",
            last.sup_norm
        );
        assert!(last.sup_norm - last.min_value < 1e-2 * last.sup_norm);
    }

    #[test]
    fn stored_points_resolve_from_their_own_fields() {
        let p = plateau_problem(200);
        let cfg = ContinuationConfig::default();
        let (b, _) = branch_from_bifurcation(&p, 1e-1, &cfg).unwrap();
        let mid = &b.points[b.points.len() / 2];
        let pm = p.with_alpha(mid.alpha);
        let sol = solve_newton(
            &pm,
            &mid.field,
            &cfg.solver.with_epsilon(mid.epsilon),
        )
        .unwrap();
        assert!(sol.residual_sup <= 10.0 * cfg.solver.newton_tol.max(1e-9));
        let drift: f64 = sol
            .field
            .iter()
            .zip(&mid.field)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8 * (1.0 + mid.sup_norm), "drift {drift}");
    }

    #[test]
    fn dip_branch_runs_from_bifurcation_to_the_constants_line() {
        let p = dip_problem(400, 0.1);
        let mut cfg = ContinuationConfig::default();
        cfg.max_points = 6000;
        let (b, alpha1) = branch_from_bifurcation(&p, 1e-3, &cfg).unwrap();
        assert_branch_wellformed(&b, &cfg);
        assert_eq!(b.end_tag, BranchTag::Gamma1Contact, "{:?}", b.end_tag);
        let last = b.points.last().unwrap();
        assert!(last.alpha.abs() < cfg.contact_tol);
        // c_a - eps = 0.0025 - 0.001.
        assert!(
            (last.sup_norm - 0.0015).abs() < 0.0015 * 0.1 + 1e-4,
            "end amplitude {}",
            last.sup_norm
        );
        // At this regularization level the branch is monotone in alpha:
        // it slides from the bifurcation down to the constants without
        // folding back (folds appear at much smaller epsilon).
        assert!(b.turning_points.is_empty(), "{:?}", b.turning_points);
        for pt in &b.points {
            assert!(pt.alpha <= alpha1 + 1e-6 && pt.alpha >= -cfg.contact_tol);
        }
        // The rescaled Neumann-based bound dominates every alpha reached.
        let pn = ProblemSpec::new(
            p.mesh.clone(),
            p.weight.clone(),
            p.q,
            0.0,
            Formulation::PForm,
        )
        .unwrap();
        let un = crate::variational::neumann_solution(&pn, &SolverConfig::default()).unwrap();
        let bound = alpha_s_upper_bound(&pn, &un).unwrap();
        assert!(alpha1 <= bound, "bifurcation {alpha1} above bound {bound}");
    }

    #[test]
    fn lightly_regularized_dip_branch_folds_once_under_the_bound() {
        // At epsilon well below the balance constant the branch recovers
        // the fold: up from the bifurcation, one turning point, then back
        // down to the constants line.
        let p = dip_problem(400, 0.1);
        let mut cfg = ContinuationConfig::default();
        cfg.max_points = 6000;
        let (b, alpha1) = branch_from_bifurcation(&p, 1e-5, &cfg).unwrap();
        assert_branch_wellformed(&b, &cfg);
        assert_eq!(b.end_tag, BranchTag::Gamma1Contact, "{:?}", b.end_tag);
        let last = b.points.last().unwrap();
        assert!(
            (last.sup_norm - (0.0025 - 1e-5)).abs() < 2e-4,
            "end amplitude {}",
            last.sup_norm
        );
        assert_eq!(b.turning_points.len(), 1, "{:?}", b.turning_points);
        let fold = &b.points[b.turning_points[0]];
        assert!(fold.alpha > alpha1);
        // Frozen fold location for this mesh and epsilon.
        assert!(
            (fold.alpha - 0.1462).abs() < 2e-3,
            "fold alpha {}",
            fold.alpha
        );
        let pn = ProblemSpec::new(
            p.mesh.clone(),
            p.weight.clone(),
            p.q,
            0.0,
            Formulation::PForm,
        )
        .unwrap();
        let un = crate::variational::neumann_solution(&pn, &SolverConfig::default()).unwrap();
        let bound = alpha_s_upper_bound(&pn, &un).unwrap();
        assert!(fold.alpha <= bound, "fold {} above bound {bound}", fold.alpha);
    }

    #[test]
    fn start_inside_the_contact_window_is_refused() {
        let p = dip_problem(200, 0.1);
        let cfg = ContinuationConfig::default();
        // Bifurcation value at this epsilon is ~8e-4, under the tolerance.
        assert!(matches!(
            branch_from_bifurcation(&p, 1e-8, &cfg),
            Err(ContinuationError::StartFailed(_))
        ));
    }

    #[test]
    fn family_distances_and_crossings_shrink() {
        let p = plateau_problem(200);
        let cfg = ContinuationConfig::default();
        let fam = epsilon_family(&p, &[1e-1, 1e-2], &cfg).unwrap();
        assert!(fam.failure.is_none(), "{:?}", fam.failure);
        assert_eq!(fam.branches.len(), 2);
        assert!(fam.alpha1s[0] > fam.alpha1s[1]);
        assert_eq!(fam.consecutive_distances.len(), 1);
        assert!(fam.consecutive_distances[0].is_finite());
        // Gamma1 contacts approach c_a = 1 from below.
        let ends: Vec<f64> = fam
            .branches
            .iter()
            .map(|b| b.points.last().unwrap().sup_norm)
            .collect();
        assert!(ends[1] > ends[0]);
        // Bad lists are rejected.
        assert!(epsilon_family(&p, &[1e-2, 1e-1], &cfg).is_err());
        assert!(epsilon_family(&p, &[], &cfg).is_err());
    }

    #[test]
    fn solution_counts_by_alpha_regime() {
        // Counting runs in the unscaled formulation: the change of
        // variables needs alpha > 0, and at negative alpha only the
        // unscaled problem carries the unique solution.
        let p = ProblemSpec::new(
            build_mesh(0.0, 1.0, 200).unwrap(),
            WeightSpec::new(WeightKind::CosineDip { c: 0.1 }),
            0.5,
            0.0,
            Formulation::PForm,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let (n_neg, sols_neg) = count_solutions_multistart(&p, -0.5, &cfg, 18).unwrap();
        assert_eq!(n_neg, 1, "sup norms: {:?}", sols_neg.iter().map(|s| s.sup_norm()).collect::<Vec<_>>());

        // Comfortably inside the existence range (the fold sits near
        // 0.148 on this weight): exactly the ordered pair.
        let (n_pos, sols) = count_solutions_multistart(&p, 0.10, &cfg, 18).unwrap();
        assert_eq!(
            n_pos,
            2,
            "sup norms: {:?}",
            sols.iter().map(|s| s.sup_norm()).collect::<Vec<_>>()
        );
        // Ordered pair: the small solution sits below the large one.
        let (w1, w2) = (&sols[0], &sols[1]);
        assert!(w1.sup_norm() < w2.sup_norm());
        let interior_ordered = (1..p.mesh.n_cells())
            .all(|i| w1.field[i] < w2.field[i]);
        assert!(interior_ordered, "solutions not nodewise ordered");

        // The counting alpha is far under the explicit fold bound.
        let pn = ProblemSpec::new(
            p.mesh.clone(),
            p.weight.clone(),
            p.q,
            0.0,
            Formulation::PForm,
        )
        .unwrap();
        let un = crate::variational::neumann_solution(&pn, &cfg).unwrap();
        let bound = alpha_s_upper_bound(&pn, &un).unwrap();
        assert!(bound > 0.10, "bound {bound}");
    }

    #[test]
    fn seed_floor_is_enforced() {
        let p = dip_problem(100, 0.1);
        assert!(matches!(
            count_solutions_multistart(&p, -0.5, &SolverConfig::default(), 4),
            Err(ContinuationError::BadInput(_))
        ));
    }
}
