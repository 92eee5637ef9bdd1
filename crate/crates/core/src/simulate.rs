//! Seeded data-generating processes for every model, driven by standard
//! normal innovations from a ChaCha8 stream. Each draw discards a 500
//! period burn-in.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgarch::bekk::BekkDiagParams;
use crate::mgarch::dcc::DccParams;
use crate::mgarch::proximity::{prox_matrices, ProxBekkParams};
use crate::networks::WeightMatrix;
use crate::numerics::{cholesky, LuFactor};
use crate::spatial::spgarchx::SpGarchXParams;
use crate::spatial::stegarch::{StEgarchParams, StEgarchWeights};
use crate::spatial::stgarch::StGarchParams;
use crate::univariate::{Egarch11Params, Garch11Params, E_ABS_Z};

pub const BURN_IN: usize = 500;

struct Normals(ChaCha8Rng);

impl Normals {
    fn new(seed: u64) -> Self {
        Normals(ChaCha8Rng::seed_from_u64(seed))
    }

    fn draw(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.draw())
    }
}

fn check_len(t: usize, n: usize) -> Result<()> {
    if t == 0 || n == 0 {
        return Err(Error::InvalidParam(format!("cannot simulate a {t} x {n} panel")));
    }
    Ok(())
}

fn diverged(what: &str) -> Error {
    Error::InvalidParam(format!("{what} simulation produced non-finite values"))
}

/// `n` independent GARCH(1,1) series of length `t`.
pub fn simulate_garch(p: &Garch11Params, n: usize, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_len(t, n)?;
    p.validate()?;
    let mut rng = Normals::new(seed);
    let mut out = DMatrix::zeros(t, n);
    for i in 0..n {
        let mut h = p.unconditional_variance();
        for s in 0..(t + BURN_IN) {
            let e = h.sqrt() * rng.draw();
            if s >= BURN_IN {
                out[(s - BURN_IN, i)] = e;
            }
            h = p.omega + p.alpha * e * e + p.beta * h;
        }
    }
    Ok(out)
}

/// `n` independent EGARCH(1,1) series of length `t`.
pub fn simulate_egarch(p: &Egarch11Params, n: usize, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_len(t, n)?;
    p.validate()?;
    let mut rng = Normals::new(seed);
    let mut out = DMatrix::zeros(t, n);
    for i in 0..n {
        let mut lh = (p.omega + p.alpha * E_ABS_Z) / (1.0 - p.beta);
        for s in 0..(t + BURN_IN) {
            let z = rng.draw();
            if s >= BURN_IN {
                out[(s - BURN_IN, i)] = (0.5 * lh).exp() * z;
            }
            lh = p.omega + p.beta * lh + p.alpha * z.abs() + p.gamma * z;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(diverged("EGARCH"));
    }
    Ok(out)
}

pub fn simulate_dcc(p: &DccParams, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = p.n();
    check_len(t, n)?;
    for g in &p.univariate {
        g.validate()?;
    }
    if !(p.lambda1 >= 0.0 && p.lambda2 >= 0.0 && p.lambda1 + p.lambda2 < 1.0) {
        return Err(Error::InvalidParam("DCC needs lambda1, lambda2 >= 0 with sum below 1".into()));
    }
    let qbar = p.qbar_matrix();
    cholesky(&qbar).map_err(|_| Error::InvalidParam("DCC target correlation is not positive definite".into()))?;
    let mut rng = Normals::new(seed);
    let mut h: Vec<f64> = p.univariate.iter().map(|g| g.unconditional_variance()).collect();
    let mut q = qbar.clone();
    let mut out = DMatrix::zeros(t, n);
    for s in 0..(t + BURN_IN) {
        let d = DVector::from_fn(n, |i, _| q[(i, i)].sqrt());
        let r = DMatrix::from_fn(n, n, |i, j| q[(i, j)] / (d[i] * d[j]));
        let l = cholesky(&r)?;
        let u = l * rng.vector(n);
        let e = DVector::from_fn(n, |i, _| h[i].sqrt() * u[i]);
        if s >= BURN_IN {
            out.row_mut(s - BURN_IN).copy_from(&e.transpose());
        }
        for (i, g) in p.univariate.iter().enumerate() {
            h[i] = g.omega + g.alpha * e[i] * e[i] + g.beta * h[i];
        }
        q = &qbar * (1.0 - p.lambda1 - p.lambda2) + &u * u.transpose() * p.lambda1 + &q * p.lambda2;
    }
    Ok(out)
}

/// Draws from `Sigma_t = Cint + A e e' A' [+ G eta eta' G'] + B Sigma B'`
/// started at `sigma0`.
fn simulate_bekk_dense(
    cint: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    g: Option<&DMatrix<f64>>,
    sigma0: DMatrix<f64>,
    t: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = cint.nrows();
    let mut rng = Normals::new(seed);
    let mut sigma = sigma0;
    let mut out = DMatrix::zeros(t, n);
    for s in 0..(t + BURN_IN) {
        let l = cholesky(&sigma).map_err(|_| diverged("BEKK"))?;
        let e = l * rng.vector(n);
        if s >= BURN_IN {
            out.row_mut(s - BURN_IN).copy_from(&e.transpose());
        }
        let ae = a * &e;
        let mut next = cint + &ae * ae.transpose() + b * &sigma * b.transpose();
        if let Some(g) = g {
            let ge = g * e.map(|v| v.min(0.0));
            next += &ge * ge.transpose();
        }
        sigma = next;
    }
    Ok(out)
}

pub fn simulate_bekk(p: &BekkDiagParams, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = p.n();
    check_len(t, n)?;
    let diag = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    let a = diag(&p.a_diag);
    let b = diag(&p.b_diag);
    let g = p.g_diag.as_deref().map(diag);
    for i in 0..n {
        let gi = p.g_diag.as_ref().map_or(0.0, |g| g[i]);
        if p.a_diag[i].powi(2) + p.b_diag[i].powi(2) + 0.5 * gi * gi >= 1.0 {
            return Err(Error::InvalidParam(format!("BEKK asset {i} is not covariance stationary")));
        }
    }
    let cint = p.intercept();
    // Unconditional covariance: cint_ij / (1 - a_i a_j - b_i b_j - g_i g_j / 2).
    let sigma0 = DMatrix::from_fn(n, n, |i, j| {
        let gg = p.g_diag.as_ref().map_or(0.0, |g| 0.5 * g[i] * g[j]);
        cint[(i, j)] / (1.0 - p.a_diag[i] * p.a_diag[j] - p.b_diag[i] * p.b_diag[j] - gg)
    });
    simulate_bekk_dense(&cint, &a, &b, g.as_ref(), sigma0, t, seed)
}

pub fn simulate_proxbekk(p: &ProxBekkParams, w: &WeightMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = w.n();
    check_len(t, n)?;
    let m = prox_matrices(p, &w.w)?;
    // vec(Sigma) = (I - A(x)A - B(x)B)^-1 vec(C)
    let kron = m.a.kronecker(&m.a) + m.b.kronecker(&m.b);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let lu = LuFactor::new(&lhs).map_err(|_| Error::InvalidParam("proximity BEKK is not covariance stationary".into()))?;
    let vec_c = DMatrix::from_column_slice(n * n, 1, m.cint.as_slice());
    let sigma0 = DMatrix::from_column_slice(n, n, lu.solve(&vec_c).as_slice());
    cholesky(&sigma0).map_err(|_| Error::InvalidParam("proximity BEKK has no positive definite stationary covariance".into()))?;
    simulate_bekk_dense(&m.cint, &m.a, &m.b, None, sigma0, t, seed)
}

/// DST-ARCH with per-asset baseline `omega`:
/// `ln h_t = omega + Gamma e*_{t-1} + rho W e*_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstarchDgp {
    pub rho: f64,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
}

pub fn simulate_dstarch(p: &DstarchDgp, w: &WeightMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = w.n();
    check_len(t, n)?;
    if p.gamma.len() != n || p.omega.len() != n {
        return Err(Error::Dimension(format!("DST-ARCH parameters do not match {n} assets")));
    }
    if p.rho.abs() >= 1.0 || p.gamma.iter().any(|g| g.abs() >= 1.0) {
        return Err(Error::InvalidParam("DST-ARCH needs |rho| < 1 and |gamma_i| < 1".into()));
    }
    let lu = LuFactor::new(&(DMatrix::identity(n, n) - &w.w * p.rho))?;
    let mut rng = Normals::new(seed);
    let mut y = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut out = DMatrix::zeros(t, n);
    for s in 0..(t + BURN_IN) {
        let z: Vec<f64> = (0..n).map(|_| rng.draw()).collect();
        for i in 0..n {
            b[i] = p.omega[i] + p.gamma[i] * y[i] + (z[i] * z[i]).ln();
        }
        lu.solve_in_place(&mut b, &mut scratch);
        y.copy_from_slice(&b);
        if s >= BURN_IN {
            for i in 0..n {
                out[(s - BURN_IN, i)] = (0.5 * y[i]).exp().copysign(z[i]);
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(diverged("DST-ARCH"));
    }
    Ok(out)
}

/// Joint recursion `H_{t+1} = a0 + (A1 + A2 W) e_t^2 + (B1 + B2 W) H_t`,
/// started at its fixed point.
fn simulate_spatial_garch(
    a0: &[f64],
    a_self: &[f64],
    a_sp: &[f64],
    b_self: &[f64],
    b_sp: &[f64],
    w: &WeightMatrix,
    t: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = w.n();
    let coef = |s: &[f64], sp: &[f64]| DMatrix::from_fn(n, n, |i, j| if i == j { s[i] } else { sp[i] * w.w[(i, j)] });
    let a = coef(a_self, a_sp);
    let b = coef(b_self, b_sp);
    let lu = LuFactor::new(&(DMatrix::identity(n, n) - &a - &b))?;
    let h_bar = lu.solve(&DMatrix::from_column_slice(n, 1, a0));
    if h_bar.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParam("spatial GARCH has no positive stationary variance".into()));
    }
    let mut h = DVector::from_column_slice(h_bar.as_slice());
    let a0 = DVector::from_column_slice(a0);
    let mut rng = Normals::new(seed);
    let mut out = DMatrix::zeros(t, n);
    for s in 0..(t + BURN_IN) {
        let e = DVector::from_fn(n, |i, _| h[i].sqrt() * rng.draw());
        if s >= BURN_IN {
            out.row_mut(s - BURN_IN).copy_from(&e.transpose());
        }
        h = &a0 + &a * e.map(|v| v * v) + &b * &h;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(diverged("spatial GARCH"));
    }
    Ok(out)
}

pub fn simulate_spgarchx(p: &SpGarchXParams, w: &WeightMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_len(t, w.n())?;
    p.validate()?;
    if p.n() != w.n() {
        return Err(Error::Dimension(format!("{} parameter sets, {} assets", p.n(), w.n())));
    }
    simulate_spatial_garch(&p.a0, &p.a1, &p.a2, &p.b1, &p.b2, w, t, seed)
}

pub fn simulate_stgarch(p: &StGarchParams, w: &WeightMatrix, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = w.n();
    check_len(t, n)?;
    p.validate()?;
    let v = |x: f64| vec![x; n];
    simulate_spatial_garch(&v(p.omega), &v(p.a_self), &v(p.a_sp), &v(p.b_self), &v(p.b_sp), w, t, seed)
}

/// STEGARCH draws. With `g` on the standardised innovations the period
/// equation is explicit: `H*_t = (I - l0 W2)^-1 (a1 + r0 W1 g(z_t) +
/// r1 g(z_{t-1}) + l1 H*_{t-1})`.
pub fn simulate_stegarch(p: &StEgarchParams, w: StEgarchWeights<'_>, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    let n = w.w1.n();
    check_len(t, n)?;
    p.validate()?;
    if w.w2.n() != n {
        return Err(Error::Dimension("W1 and W2 differ in size".into()));
    }
    let lu = LuFactor::new(&(DMatrix::identity(n, n) - &w.w2.w * p.lambda0))?;
    let mut rng = Normals::new(seed);
    let rowsum: Vec<f64> = (0..n).map(|i| w.w2.w.row(i).sum()).collect();
    let mut h: Vec<f64> = rowsum.iter().map(|r| p.alpha1 / (1.0 - p.lambda0 * r - p.lambda1)).collect();
    let mut z_prev = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut out = DMatrix::zeros(t, n);
    for s in 0..(t + BURN_IN) {
        let z: Vec<f64> = (0..n).map(|_| rng.draw()).collect();
        for i in 0..n {
            let spatial: f64 = (0..n).map(|j| w.w1.w[(i, j)] * p.g(z[j])).sum();
            b[i] = p.alpha1 + p.rho0 * spatial + p.rho1 * p.g(z_prev[i]) + p.lambda1 * h[i];
        }
        lu.solve_in_place(&mut b, &mut scratch);
        h.copy_from_slice(&b);
        if s >= BURN_IN {
            for i in 0..n {
                out[(s - BURN_IN, i)] = (0.5 * h[i]).exp() * z[i];
            }
        }
        z_prev = z;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(diverged("STEGARCH"));
    }
    Ok(out)
}
