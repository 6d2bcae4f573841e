//! Numerical continuation and verification toolkit for the indefinite
//! sublinear problem
//!
//! ```text
//! -u'' = a(x) u^q   in (x_left, x_right),      0 <= q < 1,
//! ∂ν u = α u        at both endpoints,         α in [-∞, ∞),
//! ```
//!
//! with a sign-changing weight `a`. The crate discretizes the problem on
//! uniform 1D meshes, solves it by damped Newton iteration with an
//! ε-regularized nonlinearity, computes the variational thresholds that
//! organize the solution set, and traces solution branches in `(α, u)` by
//! pseudo-arclength continuation, including the rescaled formulation
//! `-w'' = α a(x) w^q` used for branches that bifurcate from zero at
//! small positive α.
//!
//! Module map:
//! - [`mesh`]: meshes, quadrature, norms, the Robin Laplacian.
//! - [`linalg`]: tridiagonal and dense pivoted LU solvers.
//! - [`weights`]: weight families, sampling, structural hypothesis checks.
//! - [`solver`]: residuals, Newton, ε-continuation, monotone iteration,
//!   the Dirichlet/Neumann limits and a mixed Dirichlet/Neumann problem.
//! - [`spectral`]: smallest eigenvalues of linearizations; the principal
//!   eigenvalue pair of the ε-regularized bifurcation eigenproblem.
//! - [`variational`]: the constant `c_a`, the thresholds `α̃`, `α_p`, `σ`,
//!   and the constrained minimization behind `μ(α)`.
//! - [`continuation`]: branch objects, pseudo-arclength continuation,
//!   ε-families, turning points, multistart solution counting.
//! - [`reduction`]: the one-dimensional bifurcation-function reduction
//!   (`ψ(α, t)` solve and `G(α, t)` evaluation).
//! - [`config`], [`io`], [`report`]: run configuration, text formats and
//!   the aggregated run report backing the CLI.

pub mod config;
pub mod continuation;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod reduction;
pub mod report;
pub mod solver;
pub mod spectral;
pub mod variational;
pub mod weights;

pub use mesh::{build_mesh, Mesh};
pub use solver::{Formulation, ProblemSpec, Solution, SolverConfig};
pub use weights::WeightSpec;
