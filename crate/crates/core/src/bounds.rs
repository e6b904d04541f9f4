//! Queuing-regime bounds and M/G/1 approximations for fork-join access.
//!
//! The fixed-arrival system (every request asks for the same object) departs
//! requests in arrival order, so it behaves like a FCFS queue whose service
//! times are drawn from the service-type family in [`crate::dist`]. Forcing
//! every request to the slowest type gives the Split-Merge upper bound; the
//! fastest type gives the Fast-Split-Merge lower bound. Mixing the types with
//! estimated frequencies gives the approximations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dist::{
    enumerate_types, slowest_mean, slowest_second_moment, type_moments, ExpMixture, Moments, ServiceTypeVector,
};
use crate::error::{Error, Result};
use crate::layout::PopularityVector;

/// Utilizations within this margin of one are reported as unstable, so that
/// rounding in a computed capacity cannot produce a huge finite value.
pub const STABILITY_MARGIN: f64 = 1e-12;

fn check_rates(lambda: f64, mu: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("arrival rate must be >= 0, got {lambda}")));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("service rate must be > 0, got {mu}")));
    }
    Ok(())
}

/// Poisson arrivals at rate `lambda` into a single FCFS server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mg1Spec {
    pub lambda: f64,
    pub service: Moments,
}

impl Mg1Spec {
    pub fn utilization(&self) -> f64 {
        self.lambda * self.service.mean
    }
}

/// Pollaczek-Khinchine mean sojourn time `E[S] + lambda E[S^2] / (2 (1 - rho))`.
pub fn pk_mean(spec: &Mg1Spec) -> Result<f64> {
    let rho = spec.utilization();
    if !(spec.lambda >= 0.0) {
        return Err(Error::invalid("arrival rate must be >= 0"));
    }
    if rho >= 1.0 - STABILITY_MARGIN {
        return Err(Error::unstable(format!("lambda * E[S] = {rho} >= 1")));
    }
    Ok(spec.service.mean + spec.lambda * spec.service.second / (2.0 * (1.0 - rho)))
}

/// Lower bound on `P{T_GA > x}`: a popularity-weighted mixture of M/M/1
/// sojourn times, each object served at the fastest rate `(t+1) mu`.
pub fn fjga_ccdf_lower(x: f64, lambda: f64, p: &PopularityVector, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let cap = (t as f64 + 1.0) * mu;
    if lambda * p.max() >= cap {
        return Err(Error::unstable(format!(
            "lambda * max p = {} >= (t+1) mu = {cap}",
            lambda * p.max()
        )));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(p.as_slice()
        .iter()
        .map(|&pi| pi * (-(cap - pi * lambda) * x).exp())
        .sum())
}

/// Lower bound on `E[T_GA]`: `sum_i p_i / ((t+1) mu - p_i lambda)`.
pub fn fjga_mean_lower(lambda: f64, p: &PopularityVector, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let cap = (t as f64 + 1.0) * mu;
    if lambda * p.max() >= cap {
        return Err(Error::unstable(format!(
            "lambda * max p = {} >= (t+1) mu = {cap}",
            lambda * p.max()
        )));
    }
    Ok(p.as_slice().iter().map(|&pi| pi / (cap - pi * lambda)).sum())
}

/// Moments of the slowest service type, i.e. of the low-traffic download time.
pub fn slowest_moments(r: usize, t: usize, mu: f64) -> Result<Moments> {
    Ok(Moments {
        mean: slowest_mean(r, t, mu)?,
        second: slowest_second_moment(r, t, mu)?,
    })
}

/// Split-Merge upper bound: M/G/1 with slowest-type service.
pub fn sm_mean_upper(lambda: f64, r: usize, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let service = slowest_moments(r, t, mu)?;
    if lambda * service.mean >= 1.0 - STABILITY_MARGIN {
        return Err(Error::unstable(format!("lambda >= 1/eta = {}", 1.0 / service.mean)));
    }
    pk_mean(&Mg1Spec { lambda, service })
}

/// Arrival rate at which the Split-Merge bound diverges.
pub fn sm_stability_limit(r: usize, t: usize, mu: f64) -> Result<f64> {
    Ok(1.0 / slowest_mean(r, t, mu)?)
}

/// Fast-Split-Merge lower bound `1 / ((t+1) mu - lambda)`.
pub fn fsm_mean_lower(lambda: f64, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let cap = (t as f64 + 1.0) * mu;
    if lambda >= cap {
        return Err(Error::unstable(format!("lambda >= (t+1) mu = {cap}")));
    }
    Ok(1.0 / (cap - lambda))
}

/// Fast-Split-Merge lower bound on the sojourn-time survival function.
pub fn fsm_ccdf_lower(x: f64, lambda: f64, t: usize, mu: f64) -> Result<f64> {
    let p = PopularityVector::uniform(1);
    fjga_ccdf_lower(x, lambda, &p, t, mu)
}

/// Steady-state frequencies of the service types, indexed like
/// [`enumerate_types`]`(r, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeFrequencies {
    r: usize,
    t: usize,
    freqs: Vec<f64>,
}

impl TypeFrequencies {
    pub fn new(r: usize, t: usize, freqs: Vec<f64>) -> Result<Self> {
        let expect = enumerate_types(r, t).len();
        if freqs.len() != expect {
            return Err(Error::invalid(format!(
                "expected {expect} type frequencies for (r,t) = ({r},{t}), got {}",
                freqs.len()
            )));
        }
        if let Some(f) = freqs.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::invalid(format!("frequency {f} outside [0,1]")));
        }
        let sum: f64 = freqs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("frequencies sum to {sum}")));
        }
        Ok(TypeFrequencies { r, t, freqs })
    }

    /// Normalizes non-negative counts. Fails when every count is zero.
    pub fn from_counts(r: usize, t: usize, counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateInput("no service types were observed".into()));
        }
        let mut freqs: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let err = 1.0 - freqs.iter().sum::<f64>();
        if let Some(m) = freqs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *m += err;
        }
        Self::new(r, t, freqs)
    }

    pub fn point_mass(nu: &ServiceTypeVector) -> Self {
        let types = enumerate_types(nu.r(), nu.t());
        let freqs = types.iter().map(|x| if x == nu { 1.0 } else { 0.0 }).collect();
        TypeFrequencies {
            r: nu.r(),
            t: nu.t(),
            freqs,
        }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.freqs
    }

    pub fn get(&self, nu: &ServiceTypeVector) -> Option<f64> {
        enumerate_types(self.r, self.t)
            .iter()
            .position(|x| x == nu)
            .map(|i| self.freqs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ServiceTypeVector, f64)> + '_ {
        enumerate_types(self.r, self.t)
            .into_iter()
            .zip(self.freqs.iter().cloned())
    }
}

/// Mixture service moments for the given type frequencies.
pub fn mixture_moments(freqs: &TypeFrequencies, mu: f64) -> Result<Moments> {
    let parts: Vec<(f64, Moments)> = freqs
        .iter()
        .map(|(nu, f)| Ok((f, type_moments(&nu, mu)?)))
        .collect::<Result<_>>()?;
    Ok(Moments::mixture(parts.iter().map(|(f, m)| (*f, m))))
}

/// M/G/1 approximation with the type frequencies supplied by the caller.
pub fn approx_mixture_mean(freqs: &TypeFrequencies, lambda: f64, r: usize, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    if freqs.r() != r || freqs.t() != t {
        return Err(Error::invalid(format!(
            "frequencies are for (r,t) = ({},{}), not ({r},{t})",
            freqs.r(),
            freqs.t()
        )));
    }
    let service = mixture_moments(freqs, mu)?;
    pk_mean(&Mg1Spec { lambda, service })
}

/// Moments of the locality-two type-`i` service times, `i = 0..=t`.
pub fn locality_two_moments(t: usize, mu: f64) -> Result<Vec<Moments>> {
    (0..=t)
        .map(|i| type_moments(&ServiceTypeVector::locality_two(i, t)?, mu))
        .collect()
}

/// Type weights of the locality-two M/G/1 approximation.
///
/// With `w = 1 - lambda E[V]` and `P_0 = 1`, the cumulative products of the
/// ratio recursion satisfy `P_{i+1} = (1 - w (P_0 + .. + P_i)) / ((t - i) w)`
/// for `i < t`, and the weights are `P_i / sum_j P_j`.
pub fn locality_two_weights(lambda: f64, t: usize, mu: f64) -> Result<Vec<f64>> {
    check_rates(lambda, mu)?;
    let moments = locality_two_moments(t, mu)?;
    let ev = moments.iter().map(|m| m.mean).sum::<f64>() / (t as f64 + 1.0);
    let load = lambda * ev;
    if load >= 1.0 {
        return Err(Error::ApproximationDomain(format!("lambda E[V] = {load} >= 1")));
    }
    let w = 1.0 - load;
    let mut products = vec![1.0];
    let mut partial = 1.0;
    for i in 0..t {
        let next = (1.0 - w * partial) / ((t - i) as f64 * w);
        if !next.is_finite() || next < 0.0 {
            return Err(Error::ApproximationDomain(format!(
                "ratio recursion left [0, inf) at step {i} (product {next})"
            )));
        }
        if products[i] == 0.0 && next > 0.0 {
            return Err(Error::ApproximationDomain(format!(
                "ratio recursion divides by zero at step {i}"
            )));
        }
        products.push(next);
        partial += next;
    }
    Ok(products.iter().map(|p| p / partial).collect())
}

/// Locality-two M/G/1 approximation of `E[T_FA]`.
pub fn approx_r2_mean(lambda: f64, t: usize, mu: f64) -> Result<f64> {
    let weights = locality_two_weights(lambda, t, mu)?;
    let moments = locality_two_moments(t, mu)?;
    let service = Moments::mixture(weights.iter().cloned().zip(moments.iter()));
    pk_mean(&Mg1Spec { lambda, service })
}

/// Service rates for the availability-one, locality-two system: `gamma` at
/// the systematic server, `alpha` and `beta` at the recovery pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighTrafficRates {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HighTrafficRates {
    pub fn new(gamma: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(gamma > 0.0 && alpha > 0.0 && beta > 0.0) {
            return Err(Error::invalid("all service rates must be positive"));
        }
        Ok(HighTrafficRates { gamma, alpha, beta })
    }

    pub fn symmetric(gamma: f64, mu: f64) -> Result<Self> {
        Self::new(gamma, mu, mu)
    }

    pub fn nu_total(&self) -> f64 {
        self.gamma + self.alpha + self.beta
    }
}

/// Saturation estimates of the service-type and completion-source fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HighTrafficFractions {
    /// Lower bound on the type-0 fraction.
    pub f0_hat: f64,
    /// Upper bound on the type-1 fraction.
    pub f1_hat: f64,
    /// Lower bound on completions by the systematic server.
    pub ws_hat: f64,
    /// Upper bound on completions by the recovery group.
    pub wr_hat: f64,
}

/// Fractions from the embedded chain of the saturated lead process with
/// `alpha = beta = mu`: `gamma nu / (gamma nu + 2 mu^2)` and its complement.
pub fn hightraffic_fractions(rates: &HighTrafficRates) -> Result<HighTrafficFractions> {
    if rates.alpha != rates.beta {
        return Err(Error::invalid("saturation fractions need alpha == beta"));
    }
    let (g, mu) = (rates.gamma, rates.alpha);
    let nu = rates.nu_total();
    let denom = g * nu + 2.0 * mu * mu;
    let s = g * nu / denom;
    let r = 2.0 * mu * mu / denom;
    Ok(HighTrafficFractions {
        f0_hat: s,
        f1_hat: r,
        ws_hat: s,
        wr_hat: r,
    })
}

/// Throughput of the saturated availability-one, locality-two system with
/// `alpha = beta = mu`: the departure rate `gamma + 2 mu^2 / (gamma + 2 mu)`
/// of the embedded chain.
pub fn hightraffic_capacity(gamma: f64, mu: f64) -> f64 {
    gamma + 2.0 * mu * mu / (gamma + 2.0 * mu)
}

/// Service moments obtained by weighting the type-0 and type-1 moments with
/// the saturation fractions.
pub fn r2t1_service_moment_lb(gamma: f64, mu: f64) -> Result<Moments> {
    let rates = HighTrafficRates::symmetric(gamma, mu)?;
    let fr = hightraffic_fractions(&rates)?;
    let (a, b) = (gamma + mu, gamma + 2.0 * mu);
    let s0 = Moments {
        mean: 2.0 / a - 1.0 / b,
        second: 4.0 / (a * a) - 2.0 / (b * b),
    };
    let s1 = Moments::exponential(a);
    Ok(Moments::mixture([(fr.f0_hat, &s0), (fr.f1_hat, &s1)]))
}

/// High-traffic approximation of `E[T_FA]` for availability one, locality two.
pub fn hightraffic_approx_mean(lambda: f64, gamma: f64, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let service = r2t1_service_moment_lb(gamma, mu)?;
    pk_mean(&Mg1Spec { lambda, service })
}

/// Side of the lead process: which recovery server is ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lead {
    Alpha,
    Beta,
}

/// Stationary law of the saturated lead process `(n_alpha, n_beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthDeath {
    pub p00: f64,
    pub alpha_ratio: f64,
    pub beta_ratio: f64,
}

impl BirthDeath {
    /// Probability of lead `i` on `side`; `i = 0` gives `p00` for both sides.
    pub fn prob(&self, i: usize, side: Lead) -> f64 {
        let ratio = match side {
            Lead::Alpha => self.alpha_ratio,
            Lead::Beta => self.beta_ratio,
        };
        self.p00 * ratio.powi(i as i32)
    }

    /// Geometric-series total, which is 1 for valid rates.
    pub fn total(&self) -> f64 {
        self.p00 * (1.0 + self.alpha_ratio / (1.0 - self.alpha_ratio) + self.beta_ratio / (1.0 - self.beta_ratio))
    }
}

pub fn birth_death_steady_state(rates: &HighTrafficRates) -> Result<BirthDeath> {
    let HighTrafficRates { gamma, alpha, beta } = *rates;
    let a = alpha / (beta + gamma);
    let b = beta / (alpha + gamma);
    if a >= 1.0 || b >= 1.0 {
        return Err(Error::unstable(format!(
            "lead ratios alpha/(beta+gamma) = {a}, beta/(alpha+gamma) = {b} must be < 1"
        )));
    }
    let p00 = (gamma * gamma - (alpha - beta).powi(2)) / (gamma * (alpha + beta + gamma));
    Ok(BirthDeath {
        p00,
        alpha_ratio: a,
        beta_ratio: b,
    })
}

/// `P{T > x}` for the M/G/1 sojourn time with the given service survival,
/// by numerical inversion of its Laplace transform (Abate-Whitt Euler).
pub fn mg1_sojourn_ccdf(x: f64, lambda: f64, service: &ExpMixture) -> Result<f64> {
    let mean: f64 = service.terms.iter().map(|(c, a)| c / a).sum();
    let rho = lambda * mean;
    if rho >= 1.0 {
        return Err(Error::unstable(format!("lambda * E[S] = {rho} >= 1")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    // Transform of the survival function: (1 - W*(z) B*(z)) / z.
    let transform = |z: Complex64| {
        let b = service.lst(z);
        let w = (1.0 - rho) * z / (z - lambda + lambda * b);
        (1.0 - w * b) / z
    };
    Ok(euler_inversion(transform, x).clamp(0.0, 1.0))
}

/// Abate-Whitt Euler algorithm for inverting a Laplace transform at `x > 0`.
fn euler_inversion<F: Fn(Complex64) -> Complex64>(f: F, x: f64) -> f64 {
    const A: f64 = 18.4;
    const N: usize = 15;
    const M: usize = 11;
    let h = std::f64::consts::PI / x;
    let u = A / (2.0 * x);
    let mut partial = 0.5 * f(Complex64::new(u, 0.0)).re;
    let mut sums = Vec::with_capacity(M + 1);
    for k in 1..=N + M {
        let term = f(Complex64::new(u, k as f64 * h)).re;
        partial += if k % 2 == 0 { term } else { -term };
        if k >= N {
            sums.push(partial);
        }
    }
    // Binomial (Euler) averaging of the last M + 1 partial sums.
    let mut binom = 1.0;
    let mut avg = 0.0;
    for (m, s) in sums.iter().enumerate() {
        if m > 0 {
            binom = binom * (M - m + 1) as f64 / m as f64;
        }
        avg += binom * s;
    }
    avg /= 2f64.powi(M as i32);
    (A / 2.0).exp() / x * avg
}

/// Split-Merge upper bound on `P{T > x}`.
pub fn sm_ccdf_upper(x: f64, lambda: f64, r: usize, t: usize, mu: f64) -> Result<f64> {
    check_rates(lambda, mu)?;
    let service = ExpMixture::for_type(&ServiceTypeVector::slowest(r, t), mu)?;
    mg1_sojourn_ccdf(x, lambda, &service)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    /// Closed form of the Split-Merge bound written directly from the double
    /// binomial sum in floating point, independent of the moment routines.
    fn sm_closed_form(lambda: f64, r: usize, t: usize, mu: f64) -> f64 {
        fn binom(n: usize, k: usize) -> f64 {
            (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64)
        }
        let eta = statrs::function::beta::beta(t as f64 + 1.0, 1.0 / r as f64) / (mu * r as f64);
        let mut sum = 0.0;
        for j in 0..=t {
            let mut inner = 0.0;
            for l in 0..=r * j {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                inner += sign * binom(r * j, l) / ((l + 1) as f64).powi(2);
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom(t, j) * inner;
        }
        eta + lambda * sum / (mu * mu * (1.0 - lambda * eta))
    }

    #[test]
    fn pk_examples() {
        let slow = Moments {
            mean: 2.0 / 3.0,
            second: 7.0 / 9.0,
        };
        assert!(close(
            pk_mean(&Mg1Spec {
                lambda: 0.0,
                service: slow
            })
            .unwrap(),
            2.0 / 3.0,
            1e-15
        ));
        assert!(close(
            pk_mean(&Mg1Spec {
                lambda: 1.0,
                service: slow
            })
            .unwrap(),
            11.0 / 6.0,
            1e-14
        ));
        let mm1 = Mg1Spec {
            lambda: 1.5,
            service: Moments::exponential(4.0),
        };
        assert!(close(pk_mean(&mm1).unwrap(), 1.0 / 2.5, 1e-14));
        let e = pk_mean(&Mg1Spec {
            lambda: 1.5,
            service: slow,
        })
        .unwrap_err();
        assert!(e.is_instability());
    }

    #[test]
    fn fjga_examples() {
        let p1 = PopularityVector::uniform(1);
        assert_eq!(fjga_ccdf_lower(0.0, 1.0, &p1, 1, 1.0).unwrap(), 1.0);
        assert!(close(
            fjga_ccdf_lower(0.7, 1.0, &p1, 2, 1.0).unwrap(),
            (-2.0f64 * 0.7).exp(),
            1e-15
        ));
        let p2 = PopularityVector::uniform(2);
        assert!(close(
            fjga_ccdf_lower(1.0, 1.0, &p2, 1, 1.0).unwrap(),
            (-1.5f64).exp(),
            1e-12
        ));
        assert!(close(fjga_mean_lower(1.0, &p1, 3, 1.0).unwrap(), 1.0 / 3.0, 1e-15));
        assert!(close(fjga_mean_lower(1.0, &p2, 1, 1.0).unwrap(), 2.0 / 3.0, 1e-12));
        let skew = PopularityVector::new(vec![0.9, 0.1]).unwrap();
        let v = fjga_mean_lower(1.0, &skew, 1, 1.0).unwrap();
        assert!(close(v, 0.9 / 1.1 + 0.1 / 1.9, 1e-12));
        assert!((v - 0.8710).abs() < 5e-4);
        assert!(fjga_mean_lower(2.5, &p1, 1, 1.0).unwrap_err().is_instability());
    }

    #[test]
    fn split_merge_examples() {
        assert!(close(sm_mean_upper(1.0, 2, 1, 1.0).unwrap(), 11.0 / 6.0, 1e-12));
        assert!(close(sm_mean_upper(0.0, 2, 3, 1.0).unwrap(), 16.0 / 35.0, 1e-12));
        assert!(close(sm_mean_upper(1.0, 1, 1, 1.0).unwrap(), 1.0, 1e-12));
        assert!(sm_mean_upper(1.5, 2, 1, 1.0).unwrap_err().is_instability());
        for r in 1..=4 {
            for t in 0..=5 {
                let lim = sm_stability_limit(r, t, 1.3).unwrap();
                for f in [0.1, 0.5, 0.9] {
                    let a = sm_mean_upper(f * lim, r, t, 1.3).unwrap();
                    let b = sm_closed_form(f * lim, r, t, 1.3);
                    assert!(close(a, b, 1e-10), "r={r} t={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn fast_split_merge_examples() {
        assert!(close(fsm_mean_lower(1.0, 1, 1.0).unwrap(), 1.0, 1e-15));
        assert!(close(fsm_mean_lower(0.0, 3, 2.0).unwrap(), 0.125, 1e-15));
        assert!(close(fsm_mean_lower(2.0, 3, 1.0).unwrap(), 0.5, 1e-15));
        assert!(fsm_mean_lower(2.0, 1, 1.0).unwrap_err().is_instability());
    }

    #[test]
    fn mixture_examples() {
        let slow = TypeFrequencies::point_mass(&ServiceTypeVector::slowest(2, 3));
        let a = approx_mixture_mean(&slow, 0.8, 2, 3, 1.0).unwrap();
        assert!(close(a, sm_mean_upper(0.8, 2, 3, 1.0).unwrap(), 1e-12));
        let fast = TypeFrequencies::point_mass(&ServiceTypeVector::fastest(2, 3));
        let b = approx_mixture_mean(&fast, 0.8, 2, 3, 1.0).unwrap();
        assert!(close(b, 1.0 / (4.0 - 0.8), 1e-12));
        let f = TypeFrequencies::new(2, 1, vec![0.6, 0.4]).unwrap();
        let m = mixture_moments(&f, 1.0).unwrap();
        assert!(close(m.mean, 0.6, 1e-12));
        assert!(close(m.second, 2.0 / 3.0, 1e-12));
        let v = approx_mixture_mean(&f, 0.5, 2, 1, 1.0).unwrap();
        assert!(close(v, 0.6 + 0.5 * (2.0 / 3.0) / 1.4, 1e-12));
        assert!((v - 0.8381).abs() < 5e-5);
        assert!(TypeFrequencies::new(2, 1, vec![0.6, 0.5]).is_err());
        assert!(approx_mixture_mean(&f, 0.5, 2, 2, 1.0).is_err());
    }

    #[test]
    fn locality_two_weight_examples() {
        let w = locality_two_weights(0.5, 1, 1.0).unwrap();
        assert!(close(w[0], 17.0 / 24.0, 1e-12));
        assert!(close(w[1], 7.0 / 24.0, 1e-12));
        // rho_0 = (7/24) / (17/24)
        assert!(close(w[1] / w[0], 7.0 / 17.0, 1e-12));

        // The recursion telescopes: every ratio after the first equals one.
        let t = 4;
        let ev = locality_two_moments(t, 1.0)
            .unwrap()
            .iter()
            .map(|m| m.mean)
            .sum::<f64>()
            / 5.0;
        let w = locality_two_weights(1.1, t, 1.0).unwrap();
        let x = 1.1 * ev;
        assert!(close(w[0], 1.0 - x, 1e-12));
        assert!(w[1..].iter().all(|wi| close(*wi, x / t as f64, 1e-12)), "{w:?}");
        let e = locality_two_weights(1.01 / ev, t, 1.0).err();
        assert!(matches!(e, Some(Error::ApproximationDomain(_))), "{e:?}");
        let w = locality_two_weights(0.0, 1, 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        let m = approx_r2_mean(1e-12, 1, 1.0).unwrap();
        assert!(close(m, 2.0 / 3.0, 1e-9));
    }

    /// The recursion transcribed literally, products rebuilt at every step.
    fn weights_by_ratios(lambda: f64, t: usize, mu: f64) -> Vec<f64> {
        let means: Vec<f64> = (0..=t)
            .map(|i| {
                let nu = ServiceTypeVector::locality_two(i, t).unwrap();
                type_moments(&nu, mu).unwrap().mean
            })
            .collect();
        let ev = means.iter().sum::<f64>() / (t + 1) as f64;
        let le = lambda * ev;
        let mut rho: Vec<f64> = vec![le / (t as f64 * (1.0 - le))];
        for i in 1..t {
            let prod_upto = |k: usize| rho[..=k].iter().product::<f64>();
            let s: f64 = (0..i).map(prod_upto).sum();
            let num = 1.0 - (1.0 - le) * (1.0 + s);
            let den = (1.0 - le) * (t - i) as f64 * rho[..i].iter().product::<f64>();
            rho.push(num / den);
        }
        let unnorm: Vec<f64> = (0..=t).map(|i| rho[..i].iter().product::<f64>()).collect();
        let z: f64 = unnorm.iter().sum();
        unnorm.iter().map(|x| x / z).collect()
    }

    #[test]
    fn locality_two_weights_match_literal_recursion() {
        for &(lambda, t) in &[(0.5, 2), (0.9, 2), (1.2, 3), (0.7, 3), (0.5, 1)] {
            let a = locality_two_weights(lambda, t, 1.0).unwrap();
            let b = weights_by_ratios(lambda, t, 1.0);
            for (x, y) in a.iter().zip(&b) {
                assert!(close(*x, *y, 1e-12), "lambda={lambda} t={t}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn weights_non_increasing_when_ratios_below_one() {
        for t in 1..=5 {
            for i in 1..40 {
                let lambda = i as f64 * 0.1;
                let Ok(w) = locality_two_weights(lambda, t, 1.0) else {
                    continue;
                };
                let ratios_below_one = w.windows(2).all(|p| p[0] == 0.0 || p[1] / p[0] < 1.0);
                if ratios_below_one {
                    assert!(w.windows(2).all(|p| p[1] <= p[0]));
                }
            }
        }
    }

    #[test]
    fn hightraffic_examples() {
        let f = hightraffic_fractions(&HighTrafficRates::symmetric(1.0, 1.0).unwrap()).unwrap();
        assert!(close(f.f0_hat, 0.6, 1e-15) && close(f.wr_hat, 0.4, 1e-15));
        assert!(close(f.ws_hat + f.wr_hat, 1.0, 1e-15));
        let f = hightraffic_fractions(&HighTrafficRates::symmetric(1e9, 1.0).unwrap()).unwrap();
        assert!(f.f0_hat > 1.0 - 1e-8);
        let f = hightraffic_fractions(&HighTrafficRates::symmetric(2.0, 1.0).unwrap()).unwrap();
        assert!(close(f.f0_hat, 0.8, 1e-15) && close(f.f1_hat, 0.2, 1e-15));
        assert!(hightraffic_fractions(&HighTrafficRates::new(1.0, 1.0, 2.0).unwrap()).is_err());
        assert!(close(hightraffic_capacity(1.0, 1.0), 5.0 / 3.0, 1e-15));
    }

    #[test]
    fn r2t1_moment_examples() {
        let m = r2t1_service_moment_lb(1.0, 1.0).unwrap();
        assert!(close(m.mean, 0.6, 1e-12));
        assert!(close(m.second, 0.6 * 7.0 / 9.0 + 0.2, 1e-12));
        let m = r2t1_service_moment_lb(1e8, 1.0).unwrap();
        assert!(m.mean < 1e-7);
        // Type-0 and type-1 moments agree with the generic routines at gamma = mu.
        let ms = locality_two_moments(1, 1.0).unwrap();
        assert!(close(ms[0].mean, 2.0 / 3.0, 1e-12) && close(ms[1].second, 0.5, 1e-12));
    }

    #[test]
    fn birth_death_examples() {
        let bd = birth_death_steady_state(&HighTrafficRates::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(close(bd.p00, 1.0 / 3.0, 1e-15));
        assert!(close(bd.alpha_ratio, 0.5, 1e-15) && close(bd.beta_ratio, 0.5, 1e-15));
        assert!(close(bd.total(), 1.0, 1e-12));
        let bd = birth_death_steady_state(&HighTrafficRates::new(3.0, 1.5, 1.5).unwrap()).unwrap();
        assert!(close(bd.p00, 3.0 / 6.0, 1e-15));
        let bd = birth_death_steady_state(&HighTrafficRates::new(2.0, 1.0, 2.0).unwrap()).unwrap();
        assert!(close(bd.p00, 0.3, 1e-15));
        assert!(close(bd.total(), 1.0, 1e-12));
        let sum: f64 = bd.p00
            + (1..200)
                .map(|i| bd.prob(i, Lead::Alpha) + bd.prob(i, Lead::Beta))
                .sum::<f64>();
        assert!(close(sum, 1.0, 1e-10));
        assert!(birth_death_steady_state(&HighTrafficRates::new(0.5, 2.0, 1.0).unwrap())
            .unwrap_err()
            .is_instability());
    }

    #[test]
    fn sojourn_ccdf_reduces_to_mm1() {
        // r = 1: slowest type is Exp((t+1) mu).
        for &x in &[0.0, 0.1, 0.5, 1.0, 3.0, 8.0] {
            let v = sm_ccdf_upper(x, 1.2, 1, 1, 1.0).unwrap();
            let e = (-(2.0 - 1.2) * x).exp();
            assert!((v - e).abs() < 1e-7, "x={x}: {v} vs {e}");
        }
    }

    #[test]
    fn sojourn_ccdf_integrates_to_pk_mean() {
        let (lambda, r, t) = (0.9, 2, 1);
        let h = 0.01;
        let n = 6000;
        let f: Vec<f64> = (0..=n)
            .map(|i| sm_ccdf_upper(i as f64 * h, lambda, r, t, 1.0).unwrap())
            .collect();
        let simpson: f64 = (0..n / 2)
            .map(|i| h / 3.0 * (f[2 * i] + 4.0 * f[2 * i + 1] + f[2 * i + 2]))
            .sum();
        let pk = sm_mean_upper(lambda, r, t, 1.0).unwrap();
        assert!(close(simpson, pk, 1e-5), "{simpson} vs {pk}");
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    proptest! {
        #[test]
        fn sandwich(r in 1usize..4, t in 0usize..4, frac in 0.01f64..0.95, seed in 0u64..1000) {
            let lim = sm_stability_limit(r, t, 1.0).unwrap();
            let lambda = frac * lim;
            let lo = fsm_mean_lower(lambda, t, 1.0).unwrap();
            let hi = sm_mean_upper(lambda, r, t, 1.0).unwrap();
            prop_assert!(lo <= hi * (1.0 + 1e-12));
            // random frequencies
            let n = enumerate_types(r, t).len();
            let raw: Vec<f64> = (0..n).map(|i| (((seed + 1) * (i as u64 * 7919 + 13)) % 101) as f64 + 1.0).collect();
            let freqs = TypeFrequencies::from_counts(r, t, &raw).unwrap();
            let mid = approx_mixture_mean(&freqs, lambda, r, t, 1.0).unwrap();
            prop_assert!(lo <= mid * (1.0 + 1e-12) && mid <= hi * (1.0 + 1e-12));
            let k = 3usize;
            let lb = fjga_mean_lower(lambda, &PopularityVector::uniform(k), t, 1.0).unwrap();
            prop_assert!(lb <= hi);
        }

        #[test]
        fn uniform_popularity_minimizes_ga_lower_bound(a in 0.01f64..1.0, b in 0.01f64..1.0, c in 0.01f64..1.0, lambda in 0.1f64..2.5) {
            let s = a + b + c;
            let mut p = vec![a / s, b / s];
            p.push(1.0 - p[0] - p[1]);
            let pv = PopularityVector::new(p).unwrap();
            let skewed = fjga_mean_lower(lambda, &pv, 1, 1.0);
            let uniform = fjga_mean_lower(lambda, &PopularityVector::uniform(3), 1, 1.0).unwrap();
            if let Ok(v) = skewed {
                prop_assert!(uniform <= v * (1.0 + 1e-12));
            }
        }
    }
}
