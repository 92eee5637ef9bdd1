//! Tail probabilities for the test statistics used in the crate.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    /// Standard normal, two-sided.
    Normal,
    /// Chi-squared with the given degrees of freedom, upper tail.
    ChiSquared(f64),
    /// F distribution `F(d1, d2)`, upper tail.
    F(f64, f64),
    /// Student t with the given degrees of freedom, two-sided.
    StudentT(f64),
}

/// p-value of `x` under `dist`: two-sided for the symmetric distributions,
/// upper tail for chi-squared and F.
pub fn tail_prob(dist: Dist, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("statistic is NaN".into()));
    }
    let p = match dist {
        Dist::Normal => {
            let n = Normal::standard();
            2.0 * n.sf(x.abs())
        }
        Dist::StudentT(df) => {
            let t = StudentsT::new(0.0, 1.0, df)
                .map_err(|e| Error::Domain(format!("student t df {df}: {e}")))?;
            2.0 * t.sf(x.abs())
        }
        Dist::ChiSquared(df) => {
            let c = ChiSquared::new(df).map_err(|e| Error::Domain(format!("chi2 df {df}: {e}")))?;
            if x <= 0.0 {
                1.0
            } else {
                c.sf(x)
            }
        }
        Dist::F(d1, d2) => {
            let f = FisherSnedecor::new(d1, d2)
                .map_err(|e| Error::Domain(format!("F({d1}, {d2}): {e}")))?;
            if x <= 0.0 {
                1.0
            } else {
                f.sf(x)
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}
