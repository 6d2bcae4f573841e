//! Weight families `a(x)` and the structural checks on a sampled weight:
//! sign of the integral, number of components of the positive set, whether
//! the boundary touches the positive set, and a one-sided nonnegative
//! witness interval.
//!
//! All checks run on nodal samples with the relative zero tolerance
//! `tol_zero = 1e-12 * sup|a|`, so they are decisions about the discrete
//! weight, not the symbolic one.

use crate::mesh::{integrate_domain, sup_norm, Mesh};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Relative factor defining the numeric zero for weight sign decisions.
pub const TOL_ZERO_REL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("weight parameter out of range: {0}")]
    BadParameter(String),
    #[error("mesh/weight domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("sampled weight is not sign-changing (set allow_definite for deliberately definite weights)")]
    NotSignChanging,
    #[error("weight table line {line}: {msg}")]
    Table { line: usize, msg: String },
}

/// Weight family. `BuiltinAq` is the closed-form family
/// `a_q(x) = r (1 - r cos² x)` with `r = 2/(1-q)` on `[0, π]`, extended by
/// zero outside; `w = α^{1/(1-q)} sin^r x` solves the rescaled equation
/// against it exactly, which is what the oracle verification uses.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    BuiltinAq { q: f64 },
    CosineDip { c: f64 },
    Affine { slope: f64, intercept: f64 },
    /// Strictly increasing abscissas; values interpolated linearly.
    Tabulated { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    pub kind: WeightKind,
    /// Deliberately sign-definite weights (used by negative tests) must
    /// opt out of the sign-change validation.
    pub allow_definite: bool,
}

impl WeightSpec {
    pub fn new(kind: WeightKind) -> Self {
        WeightSpec {
            kind,
            allow_definite: false,
        }
    }

    pub fn definite(kind: WeightKind) -> Self {
        WeightSpec {
            kind,
            allow_definite: true,
        }
    }

    /// Short kind name used in file headers.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            WeightKind::BuiltinAq { .. } => "builtin_aq",
            WeightKind::CosineDip { .. } => "cosine_dip",
            WeightKind::Affine { .. } => "affine",
            WeightKind::Tabulated { .. } => "tabulated",
        }
    }
}

/// The closed-form weight `a_q` at a point, zero outside `[0, π]`.
pub fn builtin_aq_value(q: f64, x: f64) -> f64 {
    if !(0.0..=PI).contains(&x) {
        return 0.0;
    }
    let r = 2.0 / (1.0 - q);
    let c = x.cos();
    r * (1.0 - r * c * c)
}

/// Sample the weight at the mesh nodes.
///
/// Errors on invalid parameters, on meshes that do not match the weight's
/// domain (`builtin_aq` must cover `[0, π]`; tabulated weights must cover
/// the mesh), and on sign-definite samples unless `allow_definite` is set.
pub fn sample_weight(spec: &WeightSpec, mesh: &Mesh) -> Result<Vec<f64>, WeightError> {
    let a = match &spec.kind {
        WeightKind::BuiltinAq { q } => {
            if !(0.0..1.0).contains(q) {
                return Err(WeightError::BadParameter(format!("q = {q} not in [0, 1)")));
            }
            let pad = 1e-12;
            if mesh.x_left() > pad || mesh.x_right() < PI - pad {
                return Err(WeightError::DomainMismatch(format!(
                    "builtin_aq needs the mesh to cover [0, π], got ({}, {})",
                    mesh.x_left(),
                    mesh.x_right()
                )));
            }
            mesh.sample(|x| builtin_aq_value(*q, x))
        }
        WeightKind::CosineDip { c } => {
            if !c.is_finite() {
                return Err(WeightError::BadParameter("cosine_dip offset".into()));
            }
            mesh.sample(|x| (2.0 * PI * x).cos() - c)
        }
        WeightKind::Affine { slope, intercept } => {
            if !(slope.is_finite() && intercept.is_finite()) {
                return Err(WeightError::BadParameter("affine coefficients".into()));
            }
            mesh.sample(|x| intercept + slope * x)
        }
        WeightKind::Tabulated { points } => {
            validate_table(points)?;
            let (x0, x1) = (points[0].0, points[points.len() - 1].0);
            let pad = 1e-12 * (1.0 + x1.abs().max(x0.abs()));
            if mesh.x_left() < x0 - pad || mesh.x_right() > x1 + pad {
                return Err(WeightError::DomainMismatch(format!(
                    "table covers [{x0}, {x1}] but mesh is ({}, {})",
                    mesh.x_left(),
                    mesh.x_right()
                )));
            }
            mesh.sample(|x| interp_linear(points, x))
        }
    };
    if !spec.allow_definite {
        let tol = TOL_ZERO_REL * sup_norm(&a);
        let has_pos = a.iter().any(|v| *v > tol);
        let has_neg = a.iter().any(|v| *v < -tol);
        if !(has_pos && has_neg) {
            return Err(WeightError::NotSignChanging);
        }
    }
    Ok(a)
}

fn validate_table(points: &[(f64, f64)]) -> Result<(), WeightError> {
    if points.len() < 2 {
        return Err(WeightError::BadParameter(
            "tabulated weight needs at least two points".into(),
        ));
    }
    for (i, w) in points.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(WeightError::BadParameter(format!(
                "table abscissas not strictly increasing at entry {}",
                i + 1
            )));
        }
    }
    if points.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
        return Err(WeightError::BadParameter("table has non-finite entries".into()));
    }
    Ok(())
}

fn interp_linear(points: &[(f64, f64)], x: f64) -> f64 {
    let n = points.len();
    if x <= points[0].0 {
        return points[0].1;
    }
    if x >= points[n - 1].0 {
        return points[n - 1].1;
    }
    // Binary search for the cell containing x.
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if points[mid].0 <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (xa, ya) = points[lo];
    let (xb, yb) = points[hi];
    ya + (yb - ya) * (x - xa) / (xb - xa)
}

/// Parse a two-column text table: one `x value` pair per line, whitespace
/// separated, `#` comments and blank lines ignored.
pub fn parse_weight_table(text: &str) -> Result<Vec<(f64, f64)>, WeightError> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let mut it = s.split_whitespace();
        let x: f64 = it
            .next()
            .unwrap()
            .parse()
            .map_err(|_| WeightError::Table {
                line,
                msg: "first column is not a number".into(),
            })?;
        let v: f64 = it
            .next()
            .ok_or(WeightError::Table {
                line,
                msg: "missing second column".into(),
            })?
            .parse()
            .map_err(|_| WeightError::Table {
                line,
                msg: "second column is not a number".into(),
            })?;
        if it.next().is_some() {
            return Err(WeightError::Table {
                line,
                msg: "more than two columns".into(),
            });
        }
        if !x.is_finite() || !v.is_finite() {
            return Err(WeightError::Table {
                line,
                msg: "non-finite entry".into(),
            });
        }
        points.push((x, v));
    }
    validate_table(&points)?;
    Ok(points)
}

/// Structural facts about a sampled weight. `holds_a0` is the sign of the
/// integral; `holds_a1` asks for a nonempty (automatically finite) set of
/// positive components; `holds_a2` asks both endpoints to touch the
/// closure of the positive set; `holds_a3` asks for an endpoint-touching
/// interval on which the weight is nonnegative and somewhere positive,
/// reported as `d_witness`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub integral_a: f64,
    pub tol_zero: f64,
    pub holds_a0: bool,
    pub components_positive_set: usize,
    pub holds_a1: bool,
    pub holds_a2: bool,
    pub holds_a3: bool,
    /// Witness interval `(x_left, d)` or `(d, x_right)` for `holds_a3`.
    pub d_witness: Option<(f64, f64)>,
}

pub fn check_hypotheses(mesh: &Mesh, a: &[f64]) -> HypothesisReport {
    assert_eq!(a.len(), mesh.n_nodes());
    let n = mesh.n_cells();
    let tol = TOL_ZERO_REL * sup_norm(a);
    let integral = integrate_domain(mesh, a);
    let holds_a0 = integral < -tol * mesh.measure();

    let pos = |i: usize| a[i] > tol;
    let mut components = 0usize;
    let mut inside = false;
    for i in 0..=n {
        if pos(i) {
            if !inside {
                components += 1;
            }
            inside = true;
        } else {
            inside = false;
        }
    }
    let holds_a1 = components >= 1;

    // Endpoint adjacency: the endpoint value is positive, or it sits at
    // numeric zero with a positive value immediately inside.
    let end_touches = |end: usize, inner: usize| -> bool {
        pos(end) || (a[end] >= -tol && pos(inner))
    };
    let holds_a2 = end_touches(0, 1) && end_touches(n, n - 1);

    // Largest endpoint-touching run with a >= -tol that contains a
    // positive node; prefer the longer side, ties to the left.
    let left_run = {
        let mut k = 0usize;
        while k <= n && a[k] >= -tol {
            k += 1;
        }
        k // nodes 0..k-1 qualify
    };
    let left_valid = (0..left_run).any(pos);
    let right_run = {
        let mut k = 0usize;
        while k <= n && a[n - k] >= -tol {
            k += 1;
            if k > n {
                break;
            }
        }
        k // nodes n-k+1..n qualify
    };
    let right_valid = (0..right_run).any(|j| pos(n - j));

    let mut d_witness = None;
    if left_valid || right_valid {
        let use_left = match (left_valid, right_valid) {
            (true, false) => true,
            (false, true) => false,
            _ => left_run >= right_run,
        };
        d_witness = Some(if use_left {
            (mesh.x_left(), mesh.node(left_run - 1))
        } else {
            (mesh.node(n + 1 - right_run), mesh.x_right())
        });
    }

    HypothesisReport {
        integral_a: integral,
        tol_zero: tol,
        holds_a0,
        components_positive_set: components,
        holds_a1,
        holds_a2,
        holds_a3: d_witness.is_some(),
        d_witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn builtin_aq_pointwise_values() {
        // q = 1/2 gives r = 4: a(π/2) = 4, a(0) = 4(1-4) = -12.
        assert_abs_diff_eq!(builtin_aq_value(0.5, PI / 2.0), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(builtin_aq_value(0.5, 0.0), -12.0, epsilon = 1e-12);
        assert_eq!(builtin_aq_value(0.5, -0.05), 0.0);
        assert_eq!(builtin_aq_value(0.5, PI + 0.05), 0.0);
    }

    #[test]
    fn builtin_aq_integral_is_minus_four_pi() {
        // a_q = -4 - 8 cos 2x for q = 1/2; the cosine integrates to zero
        // on (0, π) so ∫ a_q = -4π (trapezoid is exact here by symmetry).
        let m = build_mesh(0.0, PI, 800).unwrap();
        let spec = WeightSpec::new(WeightKind::BuiltinAq { q: 0.5 });
        let a = sample_weight(&spec, &m).unwrap();
        assert_abs_diff_eq!(integrate_domain(&m, &a), -4.0 * PI, epsilon = 1e-9);
    }

    #[test]
    fn builtin_aq_rejects_non_covering_mesh() {
        let m = build_mesh(0.0, 1.0, 10).unwrap();
        let spec = WeightSpec::new(WeightKind::BuiltinAq { q: 0.5 });
        assert!(matches!(
            sample_weight(&spec, &m),
            Err(WeightError::DomainMismatch(_))
        ));
    }

    #[test]
    fn cosine_dip_sample_and_hypotheses() {
        let m = build_mesh(0.0, 1.0, 400).unwrap();
        let spec = WeightSpec::new(WeightKind::CosineDip { c: 0.1 });
        let a = sample_weight(&spec, &m).unwrap();
        assert_abs_diff_eq!(a[0], 0.9, epsilon = 1e-12);
        let rep = check_hypotheses(&m, &a);
        assert_abs_diff_eq!(rep.integral_a, -0.1, epsilon = 1e-12);
        assert!(rep.holds_a0);
        assert_eq!(rep.components_positive_set, 2);
        assert!(rep.holds_a1);
        assert!(rep.holds_a2);
        assert!(rep.holds_a3);
        // Independent oracle for the sign change of cos(2πx) - c:
        // bisection on (0, 1/2).
        let root = {
            let f = |x: f64| (2.0 * PI * x).cos() - 0.1;
            let (mut lo, mut hi) = (0.0f64, 0.5f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (lo, d) = rep.d_witness.unwrap();
        assert_eq!(lo, 0.0);
        assert!((d - root).abs() <= 2.0 * m.h(), "d = {d}, root = {root}");
    }

    #[test]
    fn zero_mean_cosine_fails_a0() {
        let m = build_mesh(0.0, 1.0, 400).unwrap();
        let spec = WeightSpec::new(WeightKind::CosineDip { c: 0.0 });
        let a = sample_weight(&spec, &m).unwrap();
        let rep = check_hypotheses(&m, &a);
        assert!(!rep.holds_a0, "integral = {}", rep.integral_a);
        assert_eq!(rep.components_positive_set, 2);
    }

    #[test]
    fn padded_oracle_weight_fails_a2() {
        // Zero extension beyond [0, π]: the weight vanishes identically
        // near both endpoints and is negative just inside the support.
        let m = build_mesh(-0.1, PI + 0.1, 420).unwrap();
        let spec = WeightSpec::new(WeightKind::BuiltinAq { q: 0.5 });
        let a = sample_weight(&spec, &m).unwrap();
        let rep = check_hypotheses(&m, &a);
        assert!(!rep.holds_a2);
        assert!(!rep.holds_a3);
        assert!(rep.holds_a0);
    }

    #[test]
    fn affine_weight_hypotheses() {
        // a = 1 - 3x on (0, 1): positive near 0 only.
        let m = build_mesh(0.0, 1.0, 300).unwrap();
        let spec = WeightSpec::new(WeightKind::Affine {
            slope: -3.0,
            intercept: 1.0,
        });
        let a = sample_weight(&spec, &m).unwrap();
        let rep = check_hypotheses(&m, &a);
        assert_abs_diff_eq!(rep.integral_a, -0.5, epsilon = 1e-10);
        assert_eq!(rep.components_positive_set, 1);
        assert!(!rep.holds_a2);
        assert!(rep.holds_a3);
        let (lo, d) = rep.d_witness.unwrap();
        assert_eq!(lo, 0.0);
        assert!((d - 1.0 / 3.0).abs() <= 2.0 * m.h());
    }

    #[test]
    fn definite_weight_needs_flag() {
        let m = build_mesh(0.0, 1.0, 20).unwrap();
        let kind = WeightKind::Affine {
            slope: 0.0,
            intercept: -1.0,
        };
        assert_eq!(
            sample_weight(&WeightSpec::new(kind.clone()), &m),
            Err(WeightError::NotSignChanging)
        );
        assert!(sample_weight(&WeightSpec::definite(kind), &m).is_ok());
    }

    #[test]
    fn table_parse_roundtrip_and_interpolation() {
        let text = "# weight table\n0.0  1.0\n0.5 -0.25   # midpoint\n\n1.0  0.5\n";
        let pts = parse_weight_table(text).unwrap();
        assert_eq!(pts.len(), 3);
        let m = build_mesh(0.0, 1.0, 8).unwrap();
        let spec = WeightSpec::new(WeightKind::Tabulated { points: pts });
        let a = sample_weight(&spec, &m).unwrap();
        assert_abs_diff_eq!(a[2], 0.375, epsilon = 1e-12); // x = 0.25
        assert_abs_diff_eq!(a[6], 0.125, epsilon = 1e-12); // x = 0.75
    }

    #[test]
    fn table_parse_errors() {
        assert!(matches!(
            parse_weight_table("0 1\n0 2\n"),
            Err(WeightError::BadParameter(_))
        ));
        assert!(matches!(
            parse_weight_table("0 1\nbad 2\n"),
            Err(WeightError::Table { line: 2, .. })
        ));
        assert!(matches!(
            parse_weight_table("0\n"),
            Err(WeightError::Table { line: 1, .. })
        ));
        assert!(matches!(
            parse_weight_table("0 1 2\n"),
            Err(WeightError::Table { line: 1, .. })
        ));
        assert!(matches!(
            parse_weight_table("0 1\n"),
            Err(WeightError::BadParameter(_))
        ));
    }

    #[test]
    fn tabulated_domain_mismatch() {
        let pts = vec![(0.0, 1.0), (0.5, -1.0)];
        let m = build_mesh(0.0, 1.0, 10).unwrap();
        let spec = WeightSpec::new(WeightKind::Tabulated { points: pts });
        assert!(matches!(
            sample_weight(&spec, &m),
            Err(WeightError::DomainMismatch(_))
        ));
    }

    proptest! {
        /// Component counts are stable under mesh refinement once the mesh
        /// resolves the sign structure.
        #[test]
        fn components_stable_under_refinement(c in 0.05f64..0.9) {
            let spec = WeightSpec::new(WeightKind::CosineDip { c });
            let mut counts = Vec::new();
            for n in [200usize, 400, 800] {
                let m = build_mesh(0.0, 1.0, n).unwrap();
                let a = sample_weight(&spec, &m).unwrap();
                counts.push(check_hypotheses(&m, &a).components_positive_set);
            }
            prop_assert_eq!(counts[0], counts[1]);
            prop_assert_eq!(counts[1], counts[2]);
            prop_assert_eq!(counts[0], 2);
        }
    }
}
