//! Box-constrained quasi-Newton minimisation with finite-difference
//! gradients.
//!
//! Every likelihood and moment-based fit in the crate goes through
//! [`minimize`], so fits of different models are directly comparable.
//! Constraints that are not simple boxes are expressed by the objective
//! returning a non-finite value; such points are treated as `+inf` and the
//! line search never accepts them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A minimisation problem over a box.
pub struct OptProblem<F>
where
    F: Fn(&[f64]) -> f64,
{
    pub objective: F,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective after each iteration, starting with the value at the
    /// initial point.
    pub trace: Vec<f64>,
}

/// Stopping rule shared by all fits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptOptions {
    /// Relative objective improvement (and projected-gradient norm) below
    /// which an iteration counts as stalled.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            tol: 1e-7,
            max_iter: 2000,
        }
    }
}

const STALL_ITERATIONS: usize = 5;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[inline]
fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Finite-difference step used for coordinate `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central-difference gradient, falling back to one-sided differences at
/// the box boundary or where the objective is infinite on one side.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    lower: &[f64],
    upper: &[f64],
    grad: &mut [f64],
) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        let up = x[i] + h;
        let down = x[i] - h;
        let fp = if up <= upper[i] {
            probe[i] = up;
            eval(f, &probe)
        } else {
            f64::INFINITY
        };
        let fm = if down >= lower[i] {
            probe[i] = down;
            eval(f, &probe)
        } else {
            f64::INFINITY
        };
        probe[i] = x[i];
        grad[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
}

fn reset_identity(h: &mut [f64], n: usize) {
    h.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
}

/// Projected BFGS with backtracking line search.
///
/// Converges when the relative objective improvement stays below `tol` for
/// five consecutive iterations, when the projected gradient drops below
/// `tol` in the infinity norm, or when not even a steepest-descent step
/// improves the objective.
pub fn minimize<F>(p: &OptProblem<F>, tol: f64, max_iter: usize) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = p.start.len();
    if p.lower.len() != n || p.upper.len() != n {
        return Err(Error::Dimension("bounds and start differ in length".into()));
    }
    if p.lower.iter().zip(&p.upper).any(|(l, u)| l > u) {
        return Err(Error::InvalidParam("lower bound exceeds upper bound".into()));
    }
    let f = &p.objective;
    let (lower, upper) = (&p.lower[..], &p.upper[..]);
    let mut x = p.start.clone();
    clamp_into(&mut x, lower, upper);
    let mut fx = eval(f, &x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut g = vec![0.0; n];
    numerical_gradient(f, &x, fx, lower, upper, &mut g);
    let mut hinv = vec![0.0; n * n];
    reset_identity(&mut hinv, n);
    let mut fresh = true;
    let mut scaled = false;

    let mut trace = vec![fx];
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut free = vec![false; n];

    while iterations < max_iter {
        iterations += 1;
        let mut pg = 0.0_f64;
        for i in 0..n {
            let pinned = lower[i] == upper[i]
                || (x[i] <= lower[i] && g[i] > 0.0)
                || (x[i] >= upper[i] && g[i] < 0.0);
            free[i] = !pinned;
            if free[i] {
                pg = pg.max(g[i].abs());
            }
        }
        if pg < tol {
            converged = true;
            break;
        }

        let direction = |hinv: &[f64], d: &mut [f64]| {
            for i in 0..n {
                d[i] = 0.0;
                if !free[i] {
                    continue;
                }
                let mut s = 0.0;
                for j in 0..n {
                    if free[j] {
                        s -= hinv[j * n + i] * g[j];
                    }
                }
                d[i] = s;
            }
        };
        direction(&hinv, &mut d);
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            reset_identity(&mut hinv, n);
            fresh = true;
            scaled = false;
            direction(&hinv, &mut d);
        }
        if fresh {
            let big = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if big > 1.0 {
                d.iter_mut().for_each(|v| *v /= big);
            }
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            clamp_into(&mut xn, lower, upper);
            if xn == x {
                break;
            }
            let fnew = eval(f, &xn);
            let decrease: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fnew < fx && fnew <= fx + ARMIJO * decrease.min(0.0) {
                accepted = Some(fnew);
                break;
            }
            t *= 0.5;
        }

        let Some(fnew) = accepted else {
            if fresh {
                // no descent even along the projected gradient
                converged = true;
                break;
            }
            reset_identity(&mut hinv, n);
            fresh = true;
            scaled = false;
            continue;
        };

        numerical_gradient(f, &xn, fnew, lower, upper, &mut gn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy.is_finite() {
            if !scaled {
                let gamma = sy / yy;
                hinv.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut hinv, &s, &y, sy, n);
            fresh = false;
        }

        let rel = (fx - fnew) / fx.abs().max(1.0);
        fx = fnew;
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        trace.push(fx);
        if rel < tol {
            stalled += 1;
            if stalled >= STALL_ITERATIONS {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(OptResult {
        argmin: x,
        value: fx,
        iterations,
        converged,
        trace,
    })
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    // hy = H y
    let mut hy = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += h[j * n + i] * y[j];
        }
        hy[i] = acc;
    }
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let coef = (1.0 + rho * yhy) * rho;
    for j in 0..n {
        for i in 0..n {
            h[j * n + i] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Multi-start configuration: the default start plus `count - 1` seeded
/// perturbations of it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiStart {
    pub count: usize,
    pub seed: u64,
}

impl Default for MultiStart {
    fn default() -> Self {
        MultiStart { count: 3, seed: 0 }
    }
}

impl MultiStart {
    pub fn single() -> Self {
        MultiStart { count: 1, seed: 0 }
    }

    /// Seeds used for the perturbed starts, in order.
    pub fn seeds(&self) -> Vec<u64> {
        (1..self.count.max(1)).map(|k| self.seed.wrapping_add(k as u64)).collect()
    }
}

/// Optimiser settings carried by every model fit.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub multistart: MultiStart,
    pub opt: OptOptions,
}

impl FitOptions {
    pub fn single_start() -> Self {
        FitOptions {
            multistart: MultiStart::single(),
            opt: OptOptions::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.multistart.seed = seed;
        self
    }
}

/// Best of several [`minimize`] runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiStartResult {
    pub best: OptResult,
    pub best_start: usize,
    pub starts: Vec<Vec<f64>>,
    pub start_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Builds perturbed starting points around `base`. Points where the
/// objective is not finite are pulled back towards `base`.
pub fn perturbed_starts<F: Fn(&[f64]) -> f64>(
    f: &F,
    base: &[f64],
    lower: &[f64],
    upper: &[f64],
    ms: &MultiStart,
) -> Vec<Vec<f64>> {
    let mut out = vec![base.to_vec()];
    for seed in ms.seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if lower[i] == upper[i] {
                    return b;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                let width = 0.25 * b.abs().max(0.05);
                let lo = lower[i] + 1e-6 * (upper[i] - lower[i]).min(1.0);
                let hi = upper[i] - 1e-6 * (upper[i] - lower[i]).min(1.0);
                (b + width * z).clamp(lo.min(b), hi.max(b))
            })
            .collect();
        for _ in 0..20 {
            if eval(f, &x).is_finite() {
                break;
            }
            for (xi, bi) in x.iter_mut().zip(base) {
                *xi = bi + 0.5 * (*xi - bi);
            }
        }
        out.push(x);
    }
    out
}

/// Runs [`minimize`] from every start and keeps the lowest objective.
/// Starts at which the objective is not finite are skipped.
pub fn minimize_multistart<F>(
    f: &F,
    lower: &[f64],
    upper: &[f64],
    base: &[f64],
    ms: &MultiStart,
    opts: &OptOptions,
) -> Result<MultiStartResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let starts = perturbed_starts(f, base, lower, upper, ms);
    let runs: Vec<Option<OptResult>> = starts
        .par_iter()
        .map(|s| {
            let problem = OptProblem {
                objective: |x: &[f64]| f(x),
                lower: lower.to_vec(),
                upper: upper.to_vec(),
                start: s.clone(),
            };
            minimize(&problem, opts.tol, opts.max_iter).ok()
        })
        .collect();
    let start_values: Vec<f64> = starts
        .iter()
        .map(|s| {
            let mut c = s.clone();
            clamp_into(&mut c, lower, upper);
            eval(f, &c)
        })
        .collect();
    let mut best: Option<(usize, OptResult)> = None;
    for (i, r) in runs.into_iter().enumerate() {
        if let Some(r) = r {
            let better = match &best {
                None => true,
                Some((_, b)) => r.value < b.value,
            };
            if better {
                best = Some((i, r));
            }
        }
    }
    let (best_start, best) = best.ok_or(Error::NonFiniteObjective)?;
    Ok(MultiStartResult {
        best,
        best_start,
        starts,
        start_values,
        seeds: ms.seeds(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F: Fn(&[f64]) -> f64>(f: F, lower: Vec<f64>, upper: Vec<f64>, start: Vec<f64>) -> OptResult {
        let p = OptProblem {
            objective: f,
            lower,
            upper,
            start,
        };
        minimize(&p, 1e-12, 5000).unwrap()
    }

    #[test]
    fn quadratic_interior_minimum() {
        let r = run(|x| (x[0] - 3.0).powi(2), vec![0.0], vec![10.0], vec![7.0]);
        assert!((r.argmin[0] - 3.0).abs() < 1e-6, "{:?}", r.argmin);
        assert!(r.converged);
    }

    #[test]
    fn quadratic_active_upper_bound() {
        let r = run(|x| (x[0] - 3.0).powi(2), vec![0.0], vec![2.0], vec![0.5]);
        assert_eq!(r.argmin[0], 2.0);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let inf = f64::INFINITY;
        let r = run(rosen, vec![-inf, -inf], vec![inf, inf], vec![-1.2, 1.0]);
        assert!((r.argmin[0] - 1.0).abs() < 1e-4, "{:?}", r.argmin);
        assert!((r.argmin[1] - 1.0).abs() < 1e-4, "{:?}", r.argmin);
    }

    #[test]
    fn trace_is_non_increasing_and_bounds_hold() {
        let f = |x: &[f64]| (x[0] - 5.0).powi(2) + 3.0 * (x[1] + 1.0).powi(4) + x[0] * x[1];
        let r = run(f, vec![-2.0, -0.5], vec![4.0, 3.0], vec![0.0, 2.0]);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.argmin[0] >= -2.0 && r.argmin[0] <= 4.0);
        assert!(r.argmin[1] >= -0.5 && r.argmin[1] <= 3.0);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let p = OptProblem {
            objective: |x: &[f64]| if x[0] < 1.0 { f64::NAN } else { x[0] },
            lower: vec![0.0],
            upper: vec![2.0],
            start: vec![0.5],
        };
        assert!(matches!(minimize(&p, 1e-7, 100), Err(Error::NonFiniteObjective)));
    }

    #[test]
    fn interior_nans_are_rejected_steps() {
        // infeasible region x + y > 1 reported as NaN
        let f = |x: &[f64]| {
            if x[0] + x[1] > 1.0 {
                f64::NAN
            } else {
                (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2)
            }
        };
        let r = run(f, vec![0.0, 0.0], vec![5.0, 5.0], vec![0.1, 0.1]);
        assert!(r.argmin[0] + r.argmin[1] <= 1.0);
        assert!((r.argmin[0] - 0.5).abs() < 1e-3 && (r.argmin[1] - 0.5).abs() < 1e-3, "{:?}", r.argmin);
    }

    #[test]
    fn fixed_coordinates_do_not_move() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] - 4.0).powi(2);
        let r = run(f, vec![-5.0, 0.0], vec![5.0, 0.0], vec![3.0, 0.0]);
        assert_eq!(r.argmin[1], 0.0);
        assert!((r.argmin[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn central_difference_matches_analytic_gradient() {
        let a = [2.0, -1.0, 0.5];
        let f = |x: &[f64]| {
            (0..3).map(|i| a[i] * x[i] * x[i]).sum::<f64>() + x[0] * x[2] - 3.0 * x[1]
        };
        let x = [0.7, -1.3, 2.2];
        let mut g = [0.0; 3];
        let inf = f64::INFINITY;
        numerical_gradient(&f, &x, f(&x), &[-inf; 3], &[inf; 3], &mut g);
        let analytic = [2.0 * a[0] * x[0] + x[2], 2.0 * a[1] * x[1] - 3.0, 2.0 * a[2] * x[2] + x[0]];
        for i in 0..3 {
            assert!((g[i] - analytic[i]).abs() <= 1e-6 * analytic[i].abs().max(1.0));
        }
    }

    #[test]
    fn multistart_never_worse_than_any_start() {
        let f = |x: &[f64]| (x[0] * x[0] - 1.0).powi(2) + 0.1 * x[0] + x[1] * x[1];
        let ms = MultiStart { count: 4, seed: 9 };
        let r = minimize_multistart(&f, &[-3.0, -3.0], &[3.0, 3.0], &[0.9, 1.0], &ms, &OptOptions::default())
            .unwrap();
        assert_eq!(r.starts.len(), 4);
        assert_eq!(r.seeds, vec![10, 11, 12]);
        for v in &r.start_values {
            assert!(r.best.value <= *v);
        }
    }
}
