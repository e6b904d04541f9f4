//! Expected download times when at most one request is in the system.

use serde::Serialize;

use crate::dist::beta_fn;
use crate::error::{Error, Result};
use crate::layout::{fault_tolerance, AZURE_LRC_R3};

fn check_rate(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("service rate must be positive, got {mu}")))
    }
}

/// `beta(t+1, 1/r) / (mu r)`: the minimum of one exponential and `t`
/// independent maxima of `r` exponentials.
pub fn et_availability(r: usize, t: usize, mu: f64) -> Result<f64> {
    if r < 1 {
        return Err(Error::invalid("locality must be >= 1"));
    }
    check_rate(mu)?;
    let rf = r as f64;
    Ok(beta_fn(t as f64 + 1.0, 1.0 / rf)? / (mu * rf))
}

pub fn et_replication(t_rep: usize, mu: f64) -> Result<f64> {
    if t_rep < 1 {
        return Err(Error::invalid("replication factor must be >= 1"));
    }
    check_rate(mu)?;
    Ok(1.0 / (t_rep as f64 * mu))
}

/// Replication with per-server rates rescaled so the cumulative rate equals
/// that of an `(n, k)` system at rate `mu`.
pub fn et_replication_normalized(n: usize, k: usize, mu: f64) -> Result<f64> {
    et_mds(n, k, mu)
}

/// `min{S, S_(n-1):k}` has mean `k / (n mu)`.
pub fn et_mds(n: usize, k: usize, mu: f64) -> Result<f64> {
    if k < 1 || n < k {
        return Err(Error::invalid(format!("need n >= k >= 1, got ({n},{k})")));
    }
    check_rate(mu)?;
    Ok(k as f64 / (n as f64 * mu))
}

/// Relative drop in expected download time from `t` to `t + 1`.
pub fn relative_gain_per_t(r: usize, t: usize) -> Result<f64> {
    if r < 1 {
        return Err(Error::invalid("locality must be >= 1"));
    }
    Ok(1.0 / ((r * (t + 1) + 1) as f64))
}

/// One row of the code comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    /// `E[T] * mu` with every server at rate `mu`.
    pub et_mu_raw: f64,
    /// `E[T] * mu` with per-server rate `baseline / n`.
    pub et_mu_normalized: f64,
    pub storage_overhead: f64,
    pub fault_tolerance: usize,
}

#[derive(Debug, Clone, Copy)]
enum Scheme {
    Replication { k: usize, t_rep: usize },
    Mds { n: usize, k: usize },
    Availability { n: usize, k: usize, r: usize, t: usize },
}

impl Scheme {
    fn n(&self) -> usize {
        match *self {
            Scheme::Replication { k, t_rep } => k * t_rep,
            Scheme::Mds { n, .. } | Scheme::Availability { n, .. } => n,
        }
    }

    fn k(&self) -> usize {
        match *self {
            Scheme::Replication { k, .. } | Scheme::Mds { k, .. } | Scheme::Availability { k, .. } => k,
        }
    }

    fn et(&self, mu: f64) -> Result<f64> {
        match *self {
            Scheme::Replication { t_rep, .. } => et_replication(t_rep, mu),
            Scheme::Mds { n, k } => et_mds(n, k, mu),
            Scheme::Availability { r, t, .. } => et_availability(r, t, mu),
        }
    }
}

/// Rows for 3-replication, (9,6)-MDS, (10,6,3,1)-LRC and (14,6,2,3)-LRC.
///
/// The normalized column gives every system the same cumulative service rate
/// `baseline_cumulative_rate`, split evenly over its `n` servers, and reports
/// the result in units of `1 / mu`.
pub fn comparison_table(mu: f64, baseline_cumulative_rate: f64) -> Result<Vec<ComparisonRow>> {
    check_rate(mu)?;
    check_rate(baseline_cumulative_rate)?;
    let lrc = AZURE_LRC_R3;
    let rows: [(&str, Scheme, usize); 4] = [
        ("3-replication", Scheme::Replication { k: 6, t_rep: 3 }, 3),
        ("(9,6)-MDS", Scheme::Mds { n: 9, k: 6 }, 4),
        (
            "(10,6,3,1)-LRC",
            Scheme::Availability {
                n: lrc.n,
                k: lrc.k,
                r: lrc.r,
                t: lrc.t,
            },
            lrc.min_distance.unwrap_or(4),
        ),
        (
            "(14,6,2,3)-LRC",
            Scheme::Availability {
                n: 14,
                k: 6,
                r: 2,
                t: 3,
            },
            4,
        ),
    ];
    rows.iter()
        .map(|(label, scheme, d)| {
            let n = scheme.n() as f64;
            Ok(ComparisonRow {
                label: label.to_string(),
                et_mu_raw: scheme.et(mu)? * mu,
                et_mu_normalized: scheme.et(baseline_cumulative_rate / n)? * mu,
                storage_overhead: n / scheme.k() as f64,
                fault_tolerance: fault_tolerance(*d)?,
            })
        })
        .collect()
}
