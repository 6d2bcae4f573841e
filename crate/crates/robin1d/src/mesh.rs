//! Uniform 1D meshes, trapezoid quadrature and the finite-difference
//! Robin Laplacian.
//!
//! The flux condition `∂ν u = α u` is eliminated with ghost nodes: a
//! central difference for the outward normal derivative gives the ghost
//! value `u[-1] = u[1] + 2 h α u[0]` on the left (mirrored on the right),
//! so the boundary rows of the operator become
//! `2(u[0] - u[1])/h² - 2 α u[0]/h`. Weighted by the trapezoid rule the
//! operator induces exactly the piecewise-linear stiffness form, so the
//! discrete Green identity
//! `Σ w_i (Lu)_i v_i = Σ_cells Δu Δv / h - α (u v |_left + u v |_right)`
//! holds to machine precision, not just O(h²). Tests pin this down.

use crate::linalg::Tridiag;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least 2 cells, got {0}")]
    TooFewCells(usize),
    #[error("mesh interval is empty or not finite: ({0}, {1})")]
    BadInterval(f64, f64),
}

/// Uniform mesh on `(x_left, x_right)` with `n_cells` cells and
/// `n_cells + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    x_left: f64,
    x_right: f64,
    n_cells: usize,
    h: f64,
}

pub fn build_mesh(x_left: f64, x_right: f64, n_cells: usize) -> Result<Mesh, MeshError> {
    if !(x_left.is_finite() && x_right.is_finite()) || x_right <= x_left {
        return Err(MeshError::BadInterval(x_left, x_right));
    }
    if n_cells < 2 {
        return Err(MeshError::TooFewCells(n_cells));
    }
    Ok(Mesh {
        x_left,
        x_right,
        n_cells,
        h: (x_right - x_left) / n_cells as f64,
    })
}

impl Mesh {
    pub fn x_left(&self) -> f64 {
        self.x_left
    }

    pub fn x_right(&self) -> f64 {
        self.x_right
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn measure(&self) -> f64 {
        self.x_right - self.x_left
    }

    /// Node coordinate; the last node is exactly `x_right`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_cells);
        if i == self.n_cells {
            self.x_right
        } else {
            self.x_left + i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }

    /// Trapezoid quadrature weight of node `i`.
    pub fn quad_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_cells {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Sample a function at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| f(self.node(i))).collect()
    }
}

/// Apply the Robin Laplacian (`-Δ` with the flux condition folded into the
/// boundary rows) to nodal values. `alpha` must be finite; the Dirichlet
/// limit is handled by the solver through identity rows instead.
pub fn apply_robin_laplacian(mesh: &Mesh, u: &[f64], alpha: f64) -> Vec<f64> {
    let t = robin_tridiag(mesh, alpha);
    let mut out = vec![0.0; u.len()];
    t.matvec(u, &mut out);
    out
}

/// Matrix form of [`apply_robin_laplacian`].
pub fn robin_tridiag(mesh: &Mesh, alpha: f64) -> Tridiag {
    assert!(alpha.is_finite(), "Robin rows need finite alpha");
    let n = mesh.n_cells();
    let h = mesh.h();
    let h2 = h * h;
    let mut t = Tridiag::zeros(n + 1);
    t.dia[0] = 2.0 / h2 - 2.0 * alpha / h;
    t.sup[0] = -2.0 / h2;
    for i in 1..n {
        t.sub[i - 1] = -1.0 / h2;
        t.dia[i] = 2.0 / h2;
        t.sup[i] = -1.0 / h2;
    }
    t.sub[n - 1] = -2.0 / h2;
    t.dia[n] = 2.0 / h2 - 2.0 * alpha / h;
    t
}

/// Trapezoid rule over the domain.
pub fn integrate_domain(mesh: &Mesh, f: &[f64]) -> f64 {
    let n = mesh.n_cells();
    assert_eq!(f.len(), n + 1);
    let inner: f64 = f[1..n].iter().sum();
    mesh.h() * (0.5 * (f[0] + f[n]) + inner)
}

/// Boundary "integral": in 1D the boundary is two points with counting
/// measure, so this is just the sum of the endpoint values.
pub fn integrate_boundary(mesh: &Mesh, f: &[f64]) -> f64 {
    assert_eq!(f.len(), mesh.n_nodes());
    f[0] + f[mesh.n_cells()]
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn min_value(f: &[f64]) -> f64 {
    f.iter().fold(f64::INFINITY, |m, v| m.min(*v))
}

/// Weighted mean over the domain.
pub fn mean_value(mesh: &Mesh, f: &[f64]) -> f64 {
    integrate_domain(mesh, f) / mesh.measure()
}

/// Squared H1 seminorm: forward differences per cell.
pub fn h1_seminorm_sq(mesh: &Mesh, f: &[f64]) -> f64 {
    assert_eq!(f.len(), mesh.n_nodes());
    let h = mesh.h();
    f.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0]) / h).sum()
}

pub fn l2_norm_sq(mesh: &Mesh, f: &[f64]) -> f64 {
    let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
    integrate_domain(mesh, &sq)
}

/// Full H1 norm `sqrt(|f'|² + |f|²)` with the forward-difference gradient
/// and trapezoid mass.
pub fn h1_norm(mesh: &Mesh, f: &[f64]) -> f64 {
    (h1_seminorm_sq(mesh, f) + l2_norm_sq(mesh, f)).sqrt()
}

pub fn h1_distance(mesh: &Mesh, f: &[f64], g: &[f64]) -> f64 {
    assert_eq!(f.len(), g.len());
    let diff: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
    h1_norm(mesh, &diff)
}

/// Symmetric bilinear form induced by the Robin operator under trapezoid
/// weights: `a(u, v) = Σ w_i (Lu)_i v_i`.
pub fn robin_form(mesh: &Mesh, u: &[f64], v: &[f64], alpha: f64) -> f64 {
    let lu = apply_robin_laplacian(mesh, u, alpha);
    lu.iter()
        .zip(v)
        .enumerate()
        .map(|(i, (a, b))| mesh.quad_weight(i) * a * b)
        .sum()
}
