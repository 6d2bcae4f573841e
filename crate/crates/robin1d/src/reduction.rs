//! Splitting of the rescaled problem near the constant branch: the field is
//! written as w = t + psi with t the constant part and psi zero-mean, psi is
//! solved from the projected equation at fixed (alpha, t), and the remaining
//! scalar bifurcation function G(alpha, t) decides where nontrivial branches
//! cross the constants.
//!
//! The projected residual is
//!
//!   F_i = (L_alpha w)_i + (alpha/|O|)(w_0 + w_n)
//!         - alpha a_i w_i^q + (alpha/|O|) int_O a w^q
//!
//! where L_alpha is the Robin Laplacian (its ghost rows carry the
//! inhomogeneous flux alpha(t + psi) exactly). Weighted row sums vanish
//! identically, so the system is consistent on the zero-mean subspace and a
//! bordered solve with the quadrature mean row closes it.

use crate::linalg::DenseLu;
use crate::mesh::{
    apply_robin_laplacian, integrate_domain, mean_value, min_value, robin_tridiag, sup_norm, Mesh,
};
use crate::solver::ProblemSpec;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("bad reduction input: {0}")]
    BadInput(String),
    #[error("projected Newton stalled after {iters} iterations, residual {residual:.3e}")]
    NewtonFailure { iters: usize, residual: f64 },
    #[error("t + psi lost positivity (min {0:.3e})")]
    LostPositivity(f64),
    #[error("bordered Jacobian is singular")]
    SingularJacobian,
}

/// One solved point of the reduction: the constant part, the zero-mean
/// remainder, and the bifurcation function value.
#[derive(Debug, Clone, Serialize)]
pub struct LSReduction {
    pub t: f64,
    pub psi: Vec<f64>,
    pub g_value: f64,
    pub alpha: f64,
}

/// Projected residual at w = t + psi. Exposed for the consistency tests;
/// callers normally go through `ls_solve_psi`.
pub fn projected_residual(
    mesh: &Mesh,
    a: &[f64],
    q: f64,
    alpha: f64,
    t: f64,
    psi: &[f64],
) -> Result<Vec<f64>, ReductionError> {
    let n = mesh.n_cells();
    let w: Vec<f64> = psi.iter().map(|p| t + p).collect();
    let wmin = min_value(&w);
    if wmin <= 0.0 {
        return Err(ReductionError::LostPositivity(wmin));
    }
    let lw = apply_robin_laplacian(mesh, &w, alpha);
    let gq: Vec<f64> = a.iter().zip(&w).map(|(ai, wi)| ai * wi.powf(q)).collect();
    let int_gq = integrate_domain(mesh, &gq);
    let bsum = w[0] + w[n];
    let len = mesh.measure();
    Ok((0..=n)
        .map(|i| lw[i] + alpha / len * bsum - alpha * gq[i] + alpha / len * int_gq)
        .collect())
}

/// Solve the projected equation for psi at fixed (alpha, t) by Newton on
/// the bordered system (Jacobian plus quadrature column and mean row). The
/// zero-mean constraint is re-imposed exactly after every update.
pub fn ls_solve_psi(
    problem: &ProblemSpec,
    alpha: f64,
    t: f64,
    config: &crate::solver::SolverConfig,
) -> Result<LSReduction, ReductionError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(ReductionError::BadInput(format!(
            "constant part t = {t} must be positive"
        )));
    }
    if !alpha.is_finite() {
        return Err(ReductionError::BadInput(
            "reduction needs a finite alpha".into(),
        ));
    }
    let mesh = &problem.mesh;
    let a = &problem.a;
    let q = problem.q;
    let n = mesh.n_cells();
    let m = n + 2; // psi nodes plus the multiplier
    let len = mesh.measure();

    let mut psi = vec![0.0; n + 1];
    let mut f = projected_residual(mesh, a, q, alpha, t, &psi)?;
    let mut res = sup_norm(&f);
    for iter in 0..config.max_iters {
        if res <= config.newton_tol {
            let g_value = bifurcation_value(mesh, a, q, t, &psi);
            debug_assert!(mean_value(mesh, &psi).abs() <= 1e-10 * sup_norm(&psi) + 1e-14);
            let _ = iter;
            return Ok(LSReduction {
                t,
                psi,
                g_value,
                alpha,
            });
        }
        // Assemble the bordered Jacobian row-major. Base: Robin rows.
        let tri = robin_tridiag(mesh, alpha);
        let mut jac = vec![0.0; m * m];
        for i in 0..=n {
            jac[i * m + i] = tri.dia[i];
            if i > 0 {
                jac[i * m + i - 1] = tri.sub[i - 1];
            }
            if i < n {
                jac[i * m + i + 1] = tri.sup[i];
            }
        }
        // Boundary-sum and power-mass couplings.
        let w: Vec<f64> = psi.iter().map(|p| t + p).collect();
        for i in 0..=n {
            jac[i * m] += alpha / len;
            jac[i * m + n] += alpha / len;
            let gp = a[i] * q * w[i].powf(q - 1.0);
            jac[i * m + i] -= alpha * gp;
            for j in 0..=n {
                jac[i * m + j] += alpha / len * mesh.quad_weight(j) * a[j] * q * w[j].powf(q - 1.0);
            }
        }
        // Border: quadrature column spans the consistent defect, mean row
        // pins the update to the zero-mean subspace.
        for i in 0..=n {
            jac[i * m + n + 1] = mesh.quad_weight(i);
            jac[(n + 1) * m + i] = mesh.quad_weight(i) / len;
        }
        let mut rhs = vec![0.0; m];
        for i in 0..=n {
            rhs[i] = -f[i];
        }
        let lu = DenseLu::factor(jac, m).ok_or(ReductionError::SingularJacobian)?;
        let delta = lu.solve(&rhs);

        // Damped update with exact re-centering.
        let mut lambda = 1.0;
        loop {
            let mut trial: Vec<f64> = (0..=n).map(|i| psi[i] + lambda * delta[i]).collect();
            let mv = mean_value(mesh, &trial);
            trial.iter_mut().for_each(|p| *p -= mv);
            match projected_residual(mesh, a, q, alpha, t, &trial) {
                Ok(ft) => {
                    let rt = sup_norm(&ft);
                    if rt < res || lambda <= config.damping_min {
                        psi = trial;
                        f = ft;
                        res = rt;
                        break;
                    }
                }
                Err(ReductionError::LostPositivity(mv)) if lambda > config.damping_min => {
                    let _ = mv;
                }
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
            if lambda < config.damping_min / 2.0 {
                return Err(ReductionError::NewtonFailure {
                    iters: iter,
                    residual: res,
                });
            }
        }
    }
    Err(ReductionError::NewtonFailure {
        iters: config.max_iters,
        residual: res,
    })
}

fn bifurcation_value(mesh: &Mesh, a: &[f64], q: f64, t: f64, psi: &[f64]) -> f64 {
    let n = mesh.n_cells();
    let gq: Vec<f64> = a
        .iter()
        .zip(psi)
        .map(|(ai, p)| ai * (t + p).powf(q))
        .collect();
    integrate_domain(mesh, &gq) + (t + psi[0]) + (t + psi[n])
}

/// Bifurcation function G(alpha, t): weighted power mass of t + psi plus
/// its boundary sum, with psi from `ls_solve_psi`.
pub fn ls_g(
    problem: &ProblemSpec,
    alpha: f64,
    t: f64,
    config: &crate::solver::SolverConfig,
) -> Result<f64, ReductionError> {
    Ok(ls_solve_psi(problem, alpha, t, config)?.g_value)
}

/// Central-difference t-derivative of G with step `dt`.
pub fn ls_g_dt(
    problem: &ProblemSpec,
    alpha: f64,
    t: f64,
    dt: f64,
    config: &crate::solver::SolverConfig,
) -> Result<f64, ReductionError> {
    if !(dt > 0.0) || dt >= t {
        return Err(ReductionError::BadInput(format!(
            "difference step {dt} must lie in (0, t)"
        )));
    }
    let hi = ls_g(problem, alpha, t + dt, config)?;
    let lo = ls_g(problem, alpha, t - dt, config)?;
    Ok((hi - lo) / (2.0 * dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::solver::{hat_field, Formulation, SolverConfig};
    use crate::variational::compute_c_a;
    use crate::weights::{WeightKind, WeightSpec};

    fn dip_problem(n: usize, c: f64, q: f64) -> ProblemSpec {
        let mesh = build_mesh(0.0, 1.0, n).unwrap();
        ProblemSpec::new(
            mesh,
            WeightSpec::new(WeightKind::CosineDip { c }),
            q,
            0.0,
            Formulation::RForm,
        )
        .unwrap()
    }

    #[test]
    fn psi_vanishes_at_alpha_zero() {
        let p = dip_problem(400, 0.1, 0.5);
        let ca = compute_c_a(&p.weight, &p.mesh, p.q).unwrap();
        let r = ls_solve_psi(&p, 0.0, ca, &SolverConfig::default()).unwrap();
        assert_eq!(sup_norm(&r.psi), 0.0);
        // G(0, c_a) = 0 by the definition of c_a from the same quadrature.
        assert!(r.g_value.abs() < 1e-13, "G(0, c_a) = {:e}", r.g_value);
        // Past the root the boundary term dominates.
        let g2 = ls_g(&p, 0.0, 2.0 * ca, &SolverConfig::default()).unwrap();
        assert!(g2 > 0.0);
    }

    #[test]
    fn g_slope_at_the_bifurcation_point() {
        for q in [1.0 / 3.0, 0.5] {
            let p = dip_problem(400, 0.1, q);
            let ca = compute_c_a(&p.weight, &p.mesh, q).unwrap();
            let d = ls_g_dt(&p, 0.0, ca, 1e-5 * ca.max(1e-3), &SolverConfig::default()).unwrap();
            let expected = 2.0 * (1.0 - q);
            assert!(
                (d - expected).abs() < 1e-4,
                "q = {q}: dG/dt = {d}, expected {expected}"
            );
        }
    }

    #[test]
    fn psi_is_small_zero_mean_at_small_alpha() {
        let p = dip_problem(400, 0.1, 0.5);
        let ca = compute_c_a(&p.weight, &p.mesh, p.q).unwrap();
        let r = ls_solve_psi(&p, 0.005, ca, &SolverConfig::default()).unwrap();
        let s = sup_norm(&r.psi);
        assert!(s > 0.0, "psi unexpectedly exactly zero");
        assert!(s < ca, "psi sup {s} not small against t = {ca}");
        assert!(
            mean_value(&p.mesh, &r.psi).abs() <= 1e-12 * s.max(1e-30),
            "psi mean not centered"
        );
        let f = projected_residual(&p.mesh, &p.a, p.q, 0.005, ca, &r.psi).unwrap();
        assert!(sup_norm(&f) <= 1e-10);
    }

    #[test]
    fn projected_rows_sum_to_zero_weighted() {
        let p = dip_problem(200, 0.1, 0.5);
        let mesh = &p.mesh;
        let mut psi = hat_field(mesh, 0.3, 0.1, 1e-3);
        let mv = mean_value(mesh, &psi);
        psi.iter_mut().for_each(|x| *x -= mv);
        let f = projected_residual(mesh, &p.a, p.q, 0.01, 0.01, &psi).unwrap();
        let weighted: Vec<f64> = (0..f.len()).map(|i| mesh.quad_weight(i) * f[i]).collect();
        let total: f64 = weighted.iter().sum();
        let scale: f64 = weighted.iter().map(|v| v.abs()).sum();
        assert!(
            total.abs() <= 1e-13 * scale.max(1e-30),
            "weighted row sum {total:e} vs scale {scale:e}"
        );
    }

    #[test]
    fn nonpositive_t_is_rejected() {
        let p = dip_problem(100, 0.1, 0.5);
        assert!(matches!(
            ls_solve_psi(&p, 0.0, 0.0, &SolverConfig::default()),
            Err(ReductionError::BadInput(_))
        ));
        assert!(matches!(
            ls_solve_psi(&p, 0.0, -1.0, &SolverConfig::default()),
            Err(ReductionError::BadInput(_))
        ));
    }
}
