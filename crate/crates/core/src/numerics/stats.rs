//! Column statistics on `T x n` panels stored column-major.

use nalgebra::DMatrix;

pub fn column(x: &DMatrix<f64>, i: usize) -> &[f64] {
    let t = x.nrows();
    &x.as_slice()[i * t..(i + 1) * t]
}

/// Sample covariance with divisor `T - 1`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = x.shape();
    let means: Vec<f64> = (0..n).map(|i| column(x, i).iter().sum::<f64>() / t as f64).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (a, b) = (column(x, i), column(x, j));
            let v: f64 = a.iter().zip(b).map(|(p, q)| (p - means[i]) * (q - means[j])).sum::<f64>() / (t as f64 - 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

pub fn sample_variances(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols()).map(|i| crate::univariate::sample_variance(column(x, i))).collect()
}
