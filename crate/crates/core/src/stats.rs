//! Summary statistics across independent replications.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample mean with a two-sided 95% Student-t half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::DegenerateInput("no samples".into()));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if samples.iter().all(|x| *x == samples[0]) {
            return Ok(Estimate {
                mean: samples[0],
                half_width: if n == 1 { f64::INFINITY } else { 0.0 },
                n,
            });
        }
        if n == 1 {
            return Ok(Estimate {
                mean,
                half_width: f64::INFINITY,
                n,
            });
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let half_width = t_quantile_975(n - 1) * (var / n as f64).sqrt();
        Ok(Estimate { mean, half_width, n })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// Whether `x` lies in the interval widened by `slack` on both sides.
    pub fn covers(&self, x: f64, slack: f64) -> bool {
        x >= self.lower() - slack && x <= self.upper() + slack
    }
}

/// 0.975 quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

/// Fraction of `samples` strictly greater than each grid point.
pub fn empirical_ccdf(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    grid.iter()
        .map(|&x| {
            let le = sorted.partition_point(|&s| s <= x);
            (sorted.len() - le) as f64 / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        assert!((t_quantile_975(1) - 12.7062).abs() < 1e-3);
        assert!((t_quantile_975(9) - 2.2622).abs() < 1e-3);
        assert!((t_quantile_975(1000) - 1.9623).abs() < 1e-3);
    }

    #[test]
    fn estimate_of_constant() {
        let e = Estimate::from_samples(&[2.0; 5]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.half_width, 0.0);
        assert!(Estimate::from_samples(&[]).is_err());
        assert!(Estimate::from_samples(&[1.0]).unwrap().half_width.is_infinite());
    }

    #[test]
    fn ccdf_steps() {
        let c = empirical_ccdf(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.5, 4.0]);
        assert_eq!(c, vec![1.0, 0.75, 0.5, 0.0]);
    }
}
