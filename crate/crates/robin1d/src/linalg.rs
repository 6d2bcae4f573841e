//! Direct solvers for the small linear systems the toolkit produces:
//! tridiagonal systems from the 1D finite-difference operator, and dense
//! systems for bordered Newton corrections. Both use partial pivoting;
//! the tridiagonal factorization follows the classical LU scheme with
//! adjacent-row interchanges, which preserves the banded structure with
//! one extra superdiagonal.

/// Tridiagonal matrix. `sub[i]` sits at (i+1, i), `dia[i]` at (i, i),
/// `sup[i]` at (i, i+1).
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub sub: Vec<f64>,
    pub dia: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 2, "tridiagonal system needs at least 2 rows");
        Tridiag {
            sub: vec![0.0; n - 1],
            dia: vec![0.0; n],
            sup: vec![0.0; n - 1],
        }
    }

    pub fn n(&self) -> usize {
        self.dia.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        assert_eq!(x.len(), n);
        assert_eq!(out.len(), n);
        for i in 0..n {
            let mut v = self.dia[i] * x[i];
            if i > 0 {
                v += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.sup[i] * x[i + 1];
            }
            out[i] = v;
        }
    }

    /// LU factorization with partial pivoting. Returns `None` when a pivot
    /// vanishes exactly (numerically singular matrix).
    pub fn factor(&self) -> Option<TridiagLu> {
        let n = self.n();
        let mut d = self.dia.clone();
        let mut du = self.sup.clone();
        let mut dl = self.sub.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n - 1];

        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                // No interchange.
                if d[i] == 0.0 {
                    return None;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if d[n - 1] == 0.0 {
            return None;
        }
        Some(TridiagLu {
            dl,
            d,
            du,
            du2,
            swapped,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let lu = self.factor()?;
        let mut x = rhs.to_vec();
        lu.solve_in_place(&mut x);
        Some(x)
    }
}

/// Pivoted LU factors of a tridiagonal matrix, reusable across solves.
#[derive(Debug, Clone)]
pub struct TridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    /// Smallest pivot magnitude; a cheap conditioning indicator for
    /// callers that want to fall back to a denser method near folds.
    pub fn min_pivot(&self) -> f64 {
        self.d.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        for i in 0..n - 1 {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense LU with partial pivoting, row-major storage. Used for the
/// bordered systems whose border rows/columns destroy bandedness.
pub struct DenseLu {
    a: Vec<f64>,
    piv: Vec<usize>,
    n: usize,
}

impl DenseLu {
    /// Factor the row-major `n x n` matrix `a`. Returns `None` when a
    /// pivot column is exactly zero.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<DenseLu> {
        assert_eq!(a.len(), n * n);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for r in k + 1..n {
                let v = a[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return None;
            }
            piv[k] = p;
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let m = a[r * n + k] / pivot;
                a[r * n + k] = m;
                if m != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= m * a[k * n + c];
                    }
                }
            }
        }
        Some(DenseLu { a, piv, n })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        // The stored multiplier rows carry every interchange, so all swaps
        // must be applied to the right side before the triangular solves.
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..n {
                    b[r] -= self.a[r * n + k] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut v = b[k];
            for c in k + 1..n {
                v -= self.a[k * n + c] * b[c];
            }
            b[k] = v / self.a[k * n + k];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
