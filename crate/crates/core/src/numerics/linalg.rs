//! Dense linear algebra used by the estimators.
//!
//! Small-matrix routines (Cholesky, LU) are hand-written on flat column-major
//! slices because they sit inside likelihood recursions evaluated millions of
//! times per fit. Householder QR and the symmetric eigensolver come from
//! `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// In-place lower Cholesky factorisation of a column-major `n x n` buffer.
///
/// Only the lower triangle is read; on success it holds `L` and the strict
/// upper triangle is left untouched. Returns `false` when a pivot is not
/// strictly positive.
#[inline]
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let l = a[k * n + j];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[j * n + i];
            for k in 0..j {
                s -= a[k * n + i] * a[k * n + j];
            }
            a[j * n + i] = s / d;
        }
    }
    true
}

/// Log-determinant and quadratic form `x' S^{-1} x` of a positive definite
/// matrix given in column-major `sigma`. `work` must hold `n*n + n` values.
///
/// Returns `None` when `sigma` is not positive definite.
#[inline]
pub(crate) fn logdet_quad(sigma: &[f64], n: usize, x: &[f64], work: &mut [f64]) -> Option<(f64, f64)> {
    let (l, z) = work.split_at_mut(n * n);
    l.copy_from_slice(&sigma[..n * n]);
    if !cholesky_in_place(l, n) {
        return None;
    }
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[k * n + i] * z[k];
        }
        let lii = l[i * n + i];
        z[i] = s / lii;
        quad += z[i] * z[i];
        logdet += 2.0 * lii.ln();
    }
    Some((logdet, quad))
}

/// Cholesky factor `L` with `L L' = S`.
///
/// Fails with [`Error::Asymmetric`] when `S` deviates from symmetry by more
/// than `1e-10` (relative to its largest entry) and with
/// [`Error::NotPositiveDefinite`] when a pivot is non-positive.
pub fn cholesky(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(s, "cholesky input")?;
    let n = s.nrows();
    let scale = s.amax().max(1.0);
    let asym = max_asymmetry(s);
    if asym > 1e-10 * scale {
        return Err(Error::Asymmetric(asym));
    }
    let mut buf: Vec<f64> = s.as_slice().to_vec();
    if !cholesky_in_place(&mut buf, n) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut l = DMatrix::from_vec(n, n, buf);
    for j in 0..n {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Ok(l)
}

/// Spectral decomposition `Q W Q' = diag(values)` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Orthonormal matrix whose rows are eigenvectors.
    pub q: DMatrix<f64>,
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(w: &DMatrix<f64>) -> Result<SymEigen> {
    ensure_square(w, "eigen input")?;
    let asym = max_asymmetry(w);
    if asym > 1e-8 {
        return Err(Error::Asymmetric(asym));
    }
    let n = w.nrows();
    let sym = (w + w.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut q = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (row, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx]);
        for c in 0..n {
            q[(row, c)] = eig.eigenvectors[(c, idx)];
        }
    }
    Ok(SymEigen { q, values })
}

/// LU factorisation with partial pivoting, reusable across many solves.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    // column-major, L unit-lower below the diagonal, U on and above
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        ensure_square(a, "linear system")?;
        let n = a.nrows();
        let mut lu = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let norm = a.amax();
        if !norm.is_finite() {
            return Err(Error::SingularMatrix {
                condition: f64::INFINITY,
            });
        }
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0_f64;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[k * n + i].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            if best <= 1e-14 * norm.max(f64::MIN_POSITIVE) {
                let condition = if best == 0.0 {
                    f64::INFINITY
                } else {
                    max_pivot / best
                };
                return Err(Error::SingularMatrix { condition });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(j * n + k, j * n + p);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                lu[k * n + i] /= pivot;
            }
            for j in (k + 1)..n {
                let f = lu[j * n + k];
                if f != 0.0 {
                    for i in (k + 1)..n {
                        lu[j * n + i] -= lu[k * n + i] * f;
                    }
                }
            }
        }
        Ok(LuFactor { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place; `b` and `scratch` have length `n`.
    #[inline]
    pub fn solve_in_place(&self, b: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            scratch[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut s = scratch[i];
            for k in 0..i {
                s -= self.lu[k * n + i] * scratch[k];
            }
            scratch[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = scratch[i];
            for k in (i + 1)..n {
                s -= self.lu[k * n + i] * scratch[k];
            }
            scratch[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&scratch[..n]);
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        let mut scratch = vec![0.0; self.n];
        for c in 0..b.ncols() {
            let col = &mut out.as_mut_slice()[c * self.n..(c + 1) * self.n];
            self.solve_in_place(col, &mut scratch);
        }
        out
    }
}

/// Solves `A X = B` for square `A`.
pub fn solve_linear(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.nrows(),
            a.nrows()
        )));
    }
    Ok(LuFactor::new(a)?.solve(b))
}

/// Ordinary least squares fit of every column of `y` on the columns of `x`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// `k x m` coefficient matrix.
    pub coef: DMatrix<f64>,
    /// `rows x m` residuals.
    pub resid: DMatrix<f64>,
    /// Residual sum of squares per column of `y`.
    pub rss: Vec<f64>,
}

/// Householder-QR least squares. Fails with [`Error::SingularDesign`] when
/// `x` is numerically rank deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LeastSquares> {
    let (rows, k) = x.shape();
    if y.nrows() != rows {
        return Err(Error::Dimension(format!(
            "design has {rows} rows, response has {}",
            y.nrows()
        )));
    }
    if rows < k {
        return Err(Error::SingularDesign(format!(
            "{rows} observations for {k} regressors"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let mut max_diag = 0.0_f64;
    for i in 0..k {
        max_diag = max_diag.max(r[(i, i)].abs());
    }
    for i in 0..k {
        if !(r[(i, i)].abs() > 1e-12 * max_diag.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularDesign(format!("regressor {i} is collinear")));
        }
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, k).into_owned();
    let coef = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    let resid = y - x * &coef;
    let rss = (0..resid.ncols())
        .map(|c| resid.column(c).iter().map(|e| e * e).sum())
        .collect();
    Ok(LeastSquares { coef, resid, rss })
}
