//! Diagonal BEKK(1,1), optionally with an asymmetric news term on the
//! negative parts of the innovations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky_in_place, logdet_quad};
use crate::numerics::stats::sample_covariance;
use crate::numerics::{cholesky, minimize_multistart, FitOptions};
use crate::univariate::LN_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BekkDiagParams {
    /// Row-major lower-triangular `n x n`.
    pub c_lower: Vec<f64>,
    pub a_diag: Vec<f64>,
    pub b_diag: Vec<f64>,
    pub g_diag: Option<Vec<f64>>,
}

impl BekkDiagParams {
    pub fn n(&self) -> usize {
        self.a_diag.len()
    }

    pub fn c_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_row_slice(n, n, &self.c_lower)
    }

    /// `C C'`, column-major.
    pub fn intercept(&self) -> DMatrix<f64> {
        let c = self.c_matrix();
        &c * c.transpose()
    }
}

pub fn bekk_k(n: usize, asymmetric: bool) -> usize {
    n * (n + 1) / 2 + 2 * n + if asymmetric { n } else { 0 }
}

/// Full-matrix BEKK-type recursion shared by the diagonal and proximity
/// models: `Sigma_t = Cint + A e e' A' [+ G eta eta' G'] + B Sigma_{t-1} B'`.
/// `A`, `B`, `G` are dense `n x n` column-major matrices.
pub(crate) struct BekkRecursion<'a> {
    pub cint: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub g: Option<&'a [f64]>,
}

impl BekkRecursion<'_> {
    /// Calls `f(t, Sigma_t)` for `t = 0..=T` (0-based; `t = T` is the
    /// one-step forecast). `Sigma_0 = sigma1`. Stops when `f` returns false.
    pub fn run(&self, eps: &DMatrix<f64>, sigma1: &[f64], mut f: impl FnMut(usize, &[f64]) -> bool) {
        let (t_len, n) = eps.shape();
        let mut sigma = sigma1.to_vec();
        let mut next = vec![0.0; n * n];
        let mut ae = vec![0.0; n];
        let mut ge = vec![0.0; n];
        let mut bs = vec![0.0; n * n];
        for t in 0..=t_len {
            if t > 0 {
                for i in 0..n {
                    let mut s = 0.0;
                    let mut sg = 0.0;
                    for k in 0..n {
                        let e = eps[(t - 1, k)];
                        s += self.a[k * n + i] * e;
                        if let Some(g) = self.g {
                            sg += g[k * n + i] * e.min(0.0);
                        }
                    }
                    ae[i] = s;
                    ge[i] = sg;
                }
                // bs = B * Sigma
                for j in 0..n {
                    for i in 0..n {
                        let mut s = 0.0;
                        for k in 0..n {
                            s += self.b[k * n + i] * sigma[j * n + k];
                        }
                        bs[j * n + i] = s;
                    }
                }
                for j in 0..n {
                    for i in 0..=j {
                        // (B Sigma B')_{ij} = sum_k bs_{ik} b_{jk}
                        let mut s = 0.0;
                        for k in 0..n {
                            s += bs[k * n + i] * self.b[k * n + j];
                        }
                        let mut v = self.cint[j * n + i] + ae[i] * ae[j] + s;
                        if self.g.is_some() {
                            v += ge[i] * ge[j];
                        }
                        next[j * n + i] = v;
                        next[i * n + j] = v;
                    }
                }
                std::mem::swap(&mut sigma, &mut next);
            }
            if !f(t, &sigma) {
                return;
            }
        }
    }

    /// Gaussian negative log-likelihood over `t = 2..T`; `+inf` when some
    /// `Sigma_t` is not positive definite.
    pub fn nll(&self, eps: &DMatrix<f64>, sigma1: &[f64]) -> f64 {
        let (t_len, n) = eps.shape();
        let mut work = vec![0.0; n * n + n];
        let mut x = vec![0.0; n];
        let mut total = 0.0;
        let mut ok = true;
        self.run(eps, sigma1, |t, sigma| {
            if t == 0 || t == t_len {
                return true;
            }
            for i in 0..n {
                x[i] = eps[(t, i)];
            }
            match logdet_quad(sigma, n, &x, &mut work) {
                Some((ld, quad)) => {
                    total += 0.5 * (n as f64 * LN_2PI + ld + quad);
                    true
                }
                None => {
                    ok = false;
                    false
                }
            }
        });
        if ok && total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }

    /// Diagonal of `Sigma_1..Sigma_{T+1}`.
    pub fn variance_path(&self, eps: &DMatrix<f64>, sigma1: &[f64]) -> DMatrix<f64> {
        let (t_len, n) = eps.shape();
        let mut out = DMatrix::zeros(t_len + 1, n);
        self.run(eps, sigma1, |t, sigma| {
            for i in 0..n {
                out[(t, i)] = sigma[i * n + i];
            }
            true
        });
        out
    }

    pub fn all_pd(&self, eps: &DMatrix<f64>, sigma1: &[f64]) -> bool {
        let n = eps.ncols();
        let mut work = vec![0.0; n * n];
        let mut ok = true;
        self.run(eps, sigma1, |_, sigma| {
            work.copy_from_slice(sigma);
            ok = cholesky_in_place(&mut work, n);
            ok
        });
        ok
    }
}

fn diag(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = v[i];
    }
    m
}

struct DenseBekk {
    cint: DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    g: Option<Vec<f64>>,
}

impl DenseBekk {
    fn from_params(p: &BekkDiagParams) -> Self {
        DenseBekk {
            cint: p.intercept(),
            a: diag(&p.a_diag),
            b: diag(&p.b_diag),
            g: p.g_diag.as_deref().map(diag),
        }
    }

    fn recursion(&self) -> BekkRecursion<'_> {
        BekkRecursion {
            cint: self.cint.as_slice(),
            a: &self.a,
            b: &self.b,
            g: self.g.as_deref(),
        }
    }
}

pub fn bekk_loglik(eps: &DMatrix<f64>, p: &BekkDiagParams, sigma1: &DMatrix<f64>) -> f64 {
    -DenseBekk::from_params(p).recursion().nll(eps, sigma1.as_slice())
}

/// Diagonal of `Sigma_1..Sigma_{T+1}`.
pub fn bekk_variance_path(eps: &DMatrix<f64>, p: &BekkDiagParams, sigma1: &DMatrix<f64>) -> DMatrix<f64> {
    DenseBekk::from_params(p).recursion().variance_path(eps, sigma1.as_slice())
}

pub fn bekk_path_is_pd(eps: &DMatrix<f64>, p: &BekkDiagParams, sigma1: &DMatrix<f64>) -> bool {
    DenseBekk::from_params(p).recursion().all_pd(eps, sigma1.as_slice())
}

/// `diag(CC' + A e e' A' [+ G eta eta' G'] + B Sigma_T B')`.
pub fn bekk_forecast_var(p: &BekkDiagParams, eps_t: &[f64], sigma_t: &DMatrix<f64>) -> Vec<f64> {
    let cc = p.intercept();
    (0..p.n())
        .map(|i| {
            let mut v = cc[(i, i)] + (p.a_diag[i] * eps_t[i]).powi(2) + p.b_diag[i] * p.b_diag[i] * sigma_t[(i, i)];
            if let Some(g) = &p.g_diag {
                v += (g[i] * eps_t[i].min(0.0)).powi(2);
            }
            v
        })
        .collect()
}

/// Fixes the dynamic coefficients instead of estimating them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDynamics {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub g: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BekkFit {
    pub params: BekkDiagParams,
    pub loglik: f64,
    /// Column-major initial covariance `Sigma_1`.
    pub sigma1: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
}

impl BekkFit {
    pub fn sigma1_matrix(&self) -> DMatrix<f64> {
        let n = self.params.n();
        DMatrix::from_column_slice(n, n, &self.sigma1)
    }
}

fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn unpack(c: &[f64], n: usize, asymmetric: bool) -> BekkDiagParams {
    let mut lower = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            lower[i * n + j] = c[k];
            k += 1;
        }
    }
    let m = tri_len(n);
    BekkDiagParams {
        c_lower: lower,
        a_diag: c[m..m + n].to_vec(),
        b_diag: c[m + n..m + 2 * n].to_vec(),
        g_diag: asymmetric.then(|| c[m + 2 * n..m + 3 * n].to_vec()),
    }
}

/// Gaussian QMLE of the diagonal BEKK with `Sigma_1` at the sample
/// covariance. The search runs on columns scaled to unit variance and the
/// intercept factor is mapped back with `C = D C_scaled`. Bounds: `a, b, g
/// in [0, 0.999]`, diagonal of `C` at least `1e-6`; evaluations whose
/// `Sigma_t` fails Cholesky, or with `a_i^2 + b_i^2 + g_i^2 / 2 >= 1`, are
/// rejected.
pub fn bekk_fit(eps: &DMatrix<f64>, asymmetric: bool, opts: &FitOptions) -> Result<BekkFit> {
    bekk_fit_with(eps, asymmetric, None, opts)
}

pub fn bekk_fit_with(eps: &DMatrix<f64>, asymmetric: bool, fixed: Option<&FixedDynamics>, opts: &FitOptions) -> Result<BekkFit> {
    let (t, n) = eps.shape();
    let k = bekk_k(n, asymmetric);
    if n < 1 || (t as f64) < 10.0 * k as f64 / n as f64 {
        return Err(Error::fit("diagonal BEKK", format!("T = {t} is too short for k = {k}")));
    }
    if let Some(f) = fixed {
        if f.a.len() != n || f.b.len() != n || f.g.as_ref().map(|g| g.len()) != asymmetric.then_some(n) {
            return Err(Error::Dimension("fixed dynamics do not match the model".into()));
        }
    }
    let s_orig = sample_covariance(eps);
    let d: Vec<f64> = (0..n).map(|i| s_orig[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateSeries("diagonal BEKK input".into()));
    }
    let scaled = DMatrix::from_fn(t, n, |r, c| eps[(r, c)] / d[c]);
    let s = sample_covariance(&scaled);

    let (a0, b0, g0) = match fixed {
        Some(f) => (f.a.clone(), f.b.clone(), f.g.clone()),
        None => (vec![0.3; n], vec![0.9; n], asymmetric.then(|| vec![0.15; n])),
    };
    let persistence: Vec<f64> = (0..n)
        .map(|i| a0[i] * a0[i] + b0[i] * b0[i] + g0.as_ref().map_or(0.0, |g| 0.5 * g[i] * g[i]))
        .collect();
    let mut target = s.clone();
    for i in 0..n {
        for j in 0..n {
            let shrink = ((1.0 - persistence[i]) * (1.0 - persistence[j])).max(1e-4).sqrt();
            target[(i, j)] *= shrink;
        }
    }
    let chol = cholesky(&target).or_else(|_| cholesky(&DMatrix::from_diagonal(&target.diagonal())))?;

    let m = tri_len(n);
    let dim = m + n * if asymmetric { 3 } else { 2 };
    let mut start = vec![0.0; dim];
    let mut lower = vec![0.0; dim];
    let mut upper = vec![0.0; dim];
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            start[idx] = chol[(i, j)];
            if i == j {
                lower[idx] = 1e-6;
                upper[idx] = 10.0;
                start[idx] = start[idx].max(1e-3);
            } else {
                lower[idx] = -10.0;
                upper[idx] = 10.0;
            }
            idx += 1;
        }
    }
    let mut dynamic = a0.clone();
    dynamic.extend(&b0);
    if let Some(g) = &g0 {
        dynamic.extend(g);
    }
    for (j, v) in dynamic.iter().enumerate() {
        start[m + j] = *v;
        if fixed.is_some() {
            lower[m + j] = *v;
            upper[m + j] = *v;
        } else {
            lower[m + j] = 0.0;
            upper[m + j] = 0.999;
        }
    }

    let sigma1 = s.as_slice().to_vec();
    let objective = |c: &[f64]| {
        if fixed.is_none() {
            for i in 0..n {
                let mut p = c[m + i].powi(2) + c[m + n + i].powi(2);
                if asymmetric {
                    p += 0.5 * c[m + 2 * n + i].powi(2);
                }
                if p >= 1.0 {
                    return f64::INFINITY;
                }
            }
        }
        let p = unpack(c, n, asymmetric);
        DenseBekk::from_params(&p).recursion().nll(&scaled, &sigma1)
    };
    let r = minimize_multistart(&objective, &lower, &upper, &start, &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "diagonal BEKK".into(),
            iterations: r.best.iterations,
        });
    }
    let mut params = unpack(&r.best.argmin, n, asymmetric);
    for i in 0..n {
        for j in 0..=i {
            params.c_lower[i * n + j] *= d[i];
        }
    }
    Ok(BekkFit {
        loglik: bekk_loglik(eps, &params, &s_orig),
        params,
        sigma1: s_orig.as_slice().to_vec(),
        converged: r.best.converged,
        seeds: r.seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, t: usize, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng))
    }

    fn params(n: usize, asym: bool, rng: &mut ChaCha8Rng) -> BekkDiagParams {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                c[i * n + j] = if i == j { rng.random_range(0.2..0.5) } else { rng.random_range(-0.1..0.1) };
            }
        }
        BekkDiagParams {
            c_lower: c,
            a_diag: (0..n).map(|_| rng.random_range(0.1..0.4)).collect(),
            b_diag: (0..n).map(|_| rng.random_range(0.7..0.9)).collect(),
            g_diag: asym.then(|| (0..n).map(|_| rng.random_range(0.0..0.3)).collect()),
        }
    }

    #[test]
    fn parameter_counts_at_sixteen() {
        assert_eq!(bekk_k(16, false), 168);
        assert_eq!(bekk_k(16, true), 184);
    }

    #[test]
    fn path_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = params(3, true, &mut rng);
        let eps = noise(2, 40, 3);
        let s1 = sample_covariance(&eps);
        let path = bekk_variance_path(&eps, &p, &s1);
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.a_diag.clone()));
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.b_diag.clone()));
        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(p.g_diag.clone().unwrap()));
        let cc = p.intercept();
        let mut sigma = s1.clone();
        for t in 0..=40 {
            if t > 0 {
                let e = eps.row(t - 1).transpose();
                let eta = e.map(|v| v.min(0.0));
                sigma = &cc + &a * &e * e.transpose() * &a + &g * &eta * eta.transpose() * &g + &b * &sigma * &b;
            }
            for i in 0..3 {
                assert!((path[(t, i)] - sigma[(i, i)]).abs() < 1e-12 * sigma[(i, i)].max(1.0));
            }
            if t == 39 {
                let e: Vec<f64> = eps.row(39).iter().copied().collect();
                let f = bekk_forecast_var(&p, &e, &sigma);
                for i in 0..3 {
                    assert!((f[i] - path[(40, i)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_dynamics_forecast_is_intercept() {
        let p = BekkDiagParams {
            c_lower: vec![0.5, 0.0, 0.1, 0.3],
            a_diag: vec![0.0, 0.0],
            b_diag: vec![0.0, 0.0],
            g_diag: None,
        };
        let f = bekk_forecast_var(&p, &[3.0, -2.0], &DMatrix::identity(2, 2));
        assert!((f[0] - 0.25).abs() < 1e-15);
        assert!((f[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn positive_innovations_skip_news_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(2, true, &mut rng);
        let q = BekkDiagParams { g_diag: Some(vec![0.0, 0.0]), ..p.clone() };
        let s = DMatrix::identity(2, 2);
        assert_eq!(bekk_forecast_var(&p, &[0.5, 1.2], &s), bekk_forecast_var(&q, &[0.5, 1.2], &s));
    }

    #[test]
    fn constant_covariance_recovery() {
        let n = 3;
        let t = 20000;
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 1.2]);
        let z = noise(4, t, n);
        let eps = &z * l.transpose();
        let fixed = FixedDynamics {
            a: vec![0.0; n],
            b: vec![0.0; n],
            g: None,
        };
        let fit = bekk_fit_with(&eps, false, Some(&fixed), &FitOptions::single_start()).unwrap();
        let chol = cholesky(&sample_covariance(&eps)).unwrap();
        let c = fit.params.c_matrix();
        for i in 0..n {
            for j in 0..=i {
                let denom = chol[(i, i)];
                assert!((c[(i, j)] - chol[(i, j)]).abs() <= 0.02 * denom, "{c} vs {chol}");
            }
        }
    }

    #[test]
    fn fitted_path_stays_positive_definite() {
        let eps = noise(6, 800, 2);
        let fit = bekk_fit(&eps, true, &FitOptions::single_start()).unwrap();
        assert!(bekk_path_is_pd(&eps, &fit.params, &fit.sigma1_matrix()));
        assert!(fit.params.c_lower[0] > 0.0 && fit.params.c_lower[3] > 0.0);
    }
}
