//! BEKK with proximity-structured coefficient matrices:
//! `C = S^-1 V S^-1'` with `S = I - diag(s1) W`, `A = diag(a0) + diag(a1) W`
//! and `B = diag(b0) + diag(b1) W`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bekk::BekkRecursion;
use crate::error::{Error, Result};
use crate::networks::WeightMatrix;
use crate::numerics::stats::sample_covariance;
use crate::numerics::{minimize_multistart, FitOptions, LuFactor};

/// Six coefficient vectors, each of length 1 (homogeneous) or `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxBekkParams {
    pub s1: Vec<f64>,
    pub v: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
}

impl ProxBekkParams {
    pub fn homogeneous(s1: f64, v: f64, alpha0: f64, alpha1: f64, beta0: f64, beta1: f64) -> Self {
        ProxBekkParams {
            s1: vec![s1],
            v: vec![v],
            alpha0: vec![alpha0],
            alpha1: vec![alpha1],
            beta0: vec![beta0],
            beta1: vec![beta1],
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.s1.len() == 1
    }

    fn at(v: &[f64], i: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[i]
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        [&self.s1, &self.v, &self.alpha0, &self.alpha1, &self.beta0, &self.beta1]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    fn from_slice(c: &[f64], m: usize) -> Self {
        let part = |k: usize| c[k * m..(k + 1) * m].to_vec();
        ProxBekkParams {
            s1: part(0),
            v: part(1),
            alpha0: part(2),
            alpha1: part(3),
            beta0: part(4),
            beta1: part(5),
        }
    }
}

pub fn proxbekk_k(n: usize, homogeneous: bool) -> usize {
    if homogeneous {
        6
    } else {
        6 * n
    }
}

pub(crate) struct ProxMatrices {
    pub cint: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Builds `C`, `A`, `B`; fails when `I - diag(s1) W` is singular.
pub(crate) fn prox_matrices(p: &ProxBekkParams, w: &DMatrix<f64>) -> Result<ProxMatrices> {
    let n = w.nrows();
    let at = ProxBekkParams::at;
    let s = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - at(&p.s1, i) * w[(i, j)]);
    let lu = LuFactor::new(&s)?;
    let sinv = lu.solve(&DMatrix::identity(n, n));
    let v = DMatrix::from_fn(n, n, |i, j| if i == j { at(&p.v, i) } else { 0.0 });
    let cint = &sinv * v * sinv.transpose();
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { at(&p.alpha0, i) } else { at(&p.alpha1, i) * w[(i, j)] });
    let b = DMatrix::from_fn(n, n, |i, j| if i == j { at(&p.beta0, i) } else { at(&p.beta1, i) * w[(i, j)] });
    Ok(ProxMatrices { cint, a, b })
}

impl ProxMatrices {
    fn recursion(&self) -> BekkRecursion<'_> {
        BekkRecursion {
            cint: self.cint.as_slice(),
            a: self.a.as_slice(),
            b: self.b.as_slice(),
            g: None,
        }
    }
}

pub fn proxbekk_loglik(eps: &DMatrix<f64>, p: &ProxBekkParams, w: &WeightMatrix, sigma1: &DMatrix<f64>) -> Result<f64> {
    Ok(-prox_matrices(p, &w.w)?.recursion().nll(eps, sigma1.as_slice()))
}

/// Diagonal of `Sigma_1..Sigma_{T+1}`.
pub fn proxbekk_variance_path(
    eps: &DMatrix<f64>,
    p: &ProxBekkParams,
    w: &WeightMatrix,
    sigma1: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(prox_matrices(p, &w.w)?.recursion().variance_path(eps, sigma1.as_slice()))
}

pub fn proxbekk_path_is_pd(eps: &DMatrix<f64>, p: &ProxBekkParams, w: &WeightMatrix, sigma1: &DMatrix<f64>) -> Result<bool> {
    Ok(prox_matrices(p, &w.w)?.recursion().all_pd(eps, sigma1.as_slice()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxBekkFit {
    pub params: ProxBekkParams,
    pub loglik: f64,
    /// Column-major `Sigma_1`.
    pub sigma1: Vec<f64>,
    pub converged: bool,
    pub seeds: Vec<u64>,
}

impl ProxBekkFit {
    pub fn sigma1_matrix(&self) -> DMatrix<f64> {
        let n = (self.sigma1.len() as f64).sqrt() as usize;
        DMatrix::from_column_slice(n, n, &self.sigma1)
    }
}

/// Gaussian QMLE. Data are divided by one common scale `c` (the root mean
/// sample variance), so only `v` changes on mapping back (`v c^2`).
pub fn proxbekk_fit(eps: &DMatrix<f64>, w: &WeightMatrix, homogeneous: bool, opts: &FitOptions) -> Result<ProxBekkFit> {
    let (t, n) = eps.shape();
    if w.n() != n {
        return Err(Error::Dimension(format!("{n} assets, {}x{} weights", w.n(), w.n())));
    }
    let k = proxbekk_k(n, homogeneous);
    if (t as f64) < 10.0 * k as f64 / n as f64 || t < 20 {
        return Err(Error::fit("proximity BEKK", format!("T = {t} is too short")));
    }
    let s_orig = sample_covariance(eps);
    let c2 = s_orig.diagonal().iter().sum::<f64>() / n as f64;
    if !(c2 > 0.0) {
        return Err(Error::DegenerateSeries("proximity BEKK input".into()));
    }
    let scaled = eps / c2.sqrt();
    let sigma1 = sample_covariance(&scaled);
    let m = if homogeneous { 1 } else { n };
    let start = ProxBekkParams {
        s1: vec![0.0; m],
        v: vec![1.0 - 0.3f64.powi(2) - 0.9f64.powi(2); m],
        alpha0: vec![0.3; m],
        alpha1: vec![0.0; m],
        beta0: vec![0.9; m],
        beta1: vec![0.0; m],
    }
    .to_vec();
    let bounds = [(-0.99, 0.99), (1e-8, 100.0), (0.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (-1.0, 1.0)];
    let lower: Vec<f64> = bounds.iter().flat_map(|b| std::iter::repeat_n(b.0, m)).collect();
    let upper: Vec<f64> = bounds.iter().flat_map(|b| std::iter::repeat_n(b.1, m)).collect();
    let wm = &w.w;
    let objective = |c: &[f64]| {
        let p = ProxBekkParams::from_slice(c, m);
        match prox_matrices(&p, wm) {
            Ok(mats) => mats.recursion().nll(&scaled, sigma1.as_slice()),
            Err(_) => f64::INFINITY,
        }
    };
    let r = minimize_multistart(&objective, &lower, &upper, &start, &opts.multistart, &opts.opt)?;
    if !r.best.converged {
        return Err(Error::Convergence {
            model: "proximity BEKK".into(),
            iterations: r.best.iterations,
        });
    }
    let mut params = ProxBekkParams::from_slice(&r.best.argmin, m);
    params.v.iter_mut().for_each(|v| *v *= c2);
    Ok(ProxBekkFit {
        loglik: proxbekk_loglik(eps, &params, w, &s_orig)?,
        params,
        sigma1: s_orig.as_slice().to_vec(),
        converged: r.best.converged,
        seeds: r.seeds,
    })
}

/// `diag(C + A e e' A' + B Sigma_T B')`.
pub fn proxbekk_forecast_var(p: &ProxBekkParams, w: &WeightMatrix, eps_t: &[f64], sigma_t: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mats = prox_matrices(p, &w.w)?;
    let e = nalgebra::DVector::from_column_slice(eps_t);
    let ae = &mats.a * e;
    let bsb = &mats.b * sigma_t * mats.b.transpose();
    Ok((0..eps_t.len()).map(|i| mats.cint[(i, i)] + ae[i] * ae[i] + bsb[(i, i)]).collect())
}
