use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{MtoError, Result};

/// Coarse significance level, reported instead of an exact tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PBucket {
    #[serde(rename = "p<0.001")]
    Below001,
    #[serde(rename = "p<0.01")]
    Below01,
    #[serde(rename = "p<0.05")]
    Below05,
    #[serde(rename = "n.s.")]
    NotSignificant,
}

impl PBucket {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            PBucket::Below001
        } else if p < 0.01 {
            PBucket::Below01
        } else if p < 0.05 {
            PBucket::Below05
        } else {
            PBucket::NotSignificant
        }
    }

    /// Bucket for a χ² statistic with one degree of freedom.
    pub fn from_chi2_df1(chi2: f64) -> Self {
        if chi2 > 10.828 {
            PBucket::Below001
        } else if chi2 > 6.635 {
            PBucket::Below01
        } else if chi2 > 3.841 {
            PBucket::Below05
        } else {
            PBucket::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PBucket::Below001 => "p<0.001",
            PBucket::Below01 => "p<0.01",
            PBucket::Below05 => "p<0.05",
            PBucket::NotSignificant => "n.s.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub chi2: f64,
    pub p_bucket: PBucket,
}

/// Pearson χ² for a 2×2 contingency table, no continuity correction.
pub fn chi_square_2x2(table: [[f64; 2]; 2]) -> Result<ChiSquare> {
    if table.iter().flatten().any(|&c| !(c >= 0.0)) {
        return Err(MtoError::Contract("contingency counts must be >= 0".into()));
    }
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let total = rows[0] + rows[1];
    if rows.iter().chain(&cols).any(|&m| m == 0.0) {
        return Err(MtoError::Undefined("chi-square with an empty margin".into()));
    }
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / total;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    Ok(ChiSquare {
        chi2,
        p_bucket: PBucket::from_chi2_df1(chi2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchT {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub p_bucket: PBucket,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test, two-sided.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<WelchT> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MtoError::Contract("t-test needs >= 2 samples per group".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else {
            ((ma - mb).signum() * f64::INFINITY, 0.0)
        };
        return Ok(WelchT {
            t,
            df: (a.len() + b.len() - 2) as f64,
            p_two_sided: p,
            p_bucket: PBucket::from_p(p),
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| MtoError::Numeric(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(WelchT {
        t,
        df,
        p_two_sided: p,
        p_bucket: PBucket::from_p(p),
    })
}
