use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Significance level used for the `significant` flag.
pub const ALPHA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least 2 values (got {0} and {1})")]
    TooFewValues(usize, usize),
    #[error("paired test needs equal lengths (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    /// Two-sample, unequal variances.
    #[default]
    Welch,
    /// One-sample test on the per-index differences.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub metric: String,
    pub test: TestKind,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Zero standard error: `p = 1` when the means agree, `p = 0` otherwise.
    pub degenerate_variance: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn result(metric: &str, test: TestKind, mean_a: f64, mean_b: f64, diff: f64, se2: f64, df: f64) -> ComparisonResult {
    let (t, p, degenerate) = if se2 == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0, true)
        } else {
            (diff.signum() * f64::INFINITY, 0.0, true)
        }
    } else {
        let t = diff / se2.sqrt();
        (t, two_sided_p(t, df), false)
    };
    ComparisonResult {
        metric: metric.to_string(),
        test,
        mean_a,
        mean_b,
        t_statistic: t,
        df,
        p_value: p,
        significant: p < ALPHA,
        degenerate_variance: degenerate,
    }
}

/// Two-sided t-test of `a` against `b`.
pub fn significance(metric: &str, a: &[f64], b: &[f64], test: TestKind) -> Result<ComparisonResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewValues(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (ma, mb) = (mean(a), mean(b));
    match test {
        TestKind::Welch => {
            let (va, vb) = (sample_var(a, ma) / a.len() as f64, sample_var(b, mb) / b.len() as f64);
            let se2 = va + vb;
            let df = if se2 == 0.0 {
                (a.len() + b.len() - 2) as f64
            } else {
                se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64)
            };
            Ok(result(metric, test, ma, mb, ma - mb, se2, df))
        }
        TestKind::Paired => {
            if a.len() != b.len() {
                return Err(StatsError::LengthMismatch(a.len(), b.len()));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let md = mean(&d);
            let se2 = sample_var(&d, md) / d.len() as f64;
            Ok(result(metric, test, ma, mb, md, se2, (d.len() - 1) as f64))
        }
    }
}
