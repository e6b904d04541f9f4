//! Service-time distributions built from exponential order statistics.
//!
//! A request that reaches the head of the line with `d` sub-copies already
//! finished at a recovery group waits there for the maximum of `r - d`
//! exponentials. Across the `t` groups only the occupancy vector
//! `nu = (nu_0, .., nu_{r-1})` of these counts matters, giving the survival
//! function
//!
//! ```text
//! P{S_nu > s} = q * prod_d (1 - (1 - q)^(r - d))^nu_d,   q = exp(-mu s).
//! ```
//!
//! The product is a polynomial in `q` with integer coefficients, so moments
//! are exact sums of `c_l / l^p`. They are accumulated as big rationals and
//! rounded once.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `r * t` accepted by the exact expansions. Beyond this the integer
/// coefficients leave `i128` and the cost of the rational sums grows quickly.
pub const MAX_EXPANSION_DEGREE: usize = 60;

/// Euler's beta function via `exp(lnG(x) + lnG(y) - lnG(x + y))`.
pub fn beta_fn(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::invalid(format!("beta needs positive arguments, got ({x}, {y})")));
    }
    use statrs::function::gamma::ln_gamma;
    Ok((ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp())
}

/// Low-traffic download-time survival `P{T > s}` for `(r, t)` availability.
/// Identical to the slowest service type.
pub fn avail_survival(s: f64, r: usize, t: usize, mu: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let q = (-mu * s).exp();
    let group = 1.0 - (-(-mu * s).exp_m1()).powi(r as i32);
    q * group.powi(t as i32)
}

/// Mean and second moment of a non-negative random time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub second: f64,
}

impl Moments {
    /// Accepts `second >= mean^2` up to a relative slack of 1e-12.
    pub fn new(mean: f64, second: f64) -> Result<Self> {
        if !(mean >= 0.0) || !(second >= 0.0) || second < mean * mean * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "moments (mean {mean}, second {second}) have negative variance"
            )));
        }
        Ok(Moments { mean, second })
    }

    pub fn exponential(rate: f64) -> Self {
        Moments {
            mean: 1.0 / rate,
            second: 2.0 / (rate * rate),
        }
    }

    pub fn variance(&self) -> f64 {
        self.second - self.mean * self.mean
    }

    /// Moments of the mixture with the given weights.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (f64, &'a Moments)>) -> Self {
        let (mut mean, mut second) = (0.0, 0.0);
        for (w, m) in parts {
            mean += w * m.mean;
            second += w * m.second;
        }
        Moments { mean, second }
    }
}

/// Occupancy vector of early-departure counts over the `t` recovery groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServiceTypeVector {
    nu: Vec<usize>,
}

impl ServiceTypeVector {
    /// `nu` has length `r`; its entries must sum to `t`.
    pub fn new(nu: Vec<usize>, t: usize) -> Result<Self> {
        if nu.is_empty() {
            return Err(Error::invalid("service type needs r >= 1 entries"));
        }
        let sum: usize = nu.iter().sum();
        if sum != t {
            return Err(Error::invalid(format!(
                "service type {nu:?} sums to {sum}, expected t = {t}"
            )));
        }
        Ok(ServiceTypeVector { nu })
    }

    /// Every group still needs all `r` sub-copies: `(t, 0, .., 0)`.
    pub fn slowest(r: usize, t: usize) -> Self {
        let mut nu = vec![0; r.max(1)];
        nu[0] = t;
        ServiceTypeVector { nu }
    }

    /// Every group needs one more sub-copy: `(0, .., 0, t)`.
    pub fn fastest(r: usize, t: usize) -> Self {
        let mut nu = vec![0; r.max(1)];
        nu[r.max(1) - 1] += t;
        ServiceTypeVector { nu }
    }

    /// Builds the type from per-group early-departure counts `d_g < r`.
    pub fn from_departures(departures: &[usize], r: usize) -> Result<Self> {
        let mut nu = vec![0; r];
        for &d in departures {
            if d >= r {
                return Err(Error::invalid(format!("{d} early departures in a group of size {r}")));
            }
            nu[d] += 1;
        }
        Ok(ServiceTypeVector { nu })
    }

    /// Locality-two type with `i` groups holding one early departure.
    pub fn locality_two(i: usize, t: usize) -> Result<Self> {
        if i > t {
            return Err(Error::invalid(format!("type-{i} exceeds t = {t}")));
        }
        Ok(ServiceTypeVector { nu: vec![t - i, i] })
    }

    pub fn r(&self) -> usize {
        self.nu.len()
    }

    pub fn t(&self) -> usize {
        self.nu.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.nu
    }

    /// `sum_{i >= j} nu_i` for `j = 1..r`.
    fn suffix_sums(&self) -> Vec<usize> {
        let mut out = vec![0; self.nu.len()];
        let mut acc = 0;
        for j in (0..self.nu.len()).rev() {
            acc += self.nu[j];
            out[j] = acc;
        }
        out.remove(0);
        out
    }
}

impl fmt::Display for ServiceTypeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.nu.iter().map(|x| x.to_string()).collect();
        write!(f, "({})", parts.join(" "))
    }
}

/// Survival function of a type-`nu` service time.
pub fn type_survival(nu: &ServiceTypeVector, s: f64, mu: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let r = nu.r();
    let q = (-mu * s).exp();
    let p = -(-mu * s).exp_m1();
    nu.as_slice().iter().enumerate().fold(q, |acc, (d, &count)| {
        acc * (1.0 - p.powi((r - d) as i32)).powi(count as i32)
    })
}

fn binomial_i128(n: usize, k: usize) -> i128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: i128 = 1;
    for i in 0..k {
        c = c * (n - i) as i128 / (i + 1) as i128;
    }
    c
}

fn check_degree(r: usize, t: usize) -> Result<()> {
    if r * t > MAX_EXPANSION_DEGREE {
        return Err(Error::invalid(format!(
            "r*t = {} exceeds the supported expansion degree {MAX_EXPANSION_DEGREE}",
            r * t
        )));
    }
    Ok(())
}

/// Integer coefficients `c` with `P{S_nu > s} = sum_l c[l] q^l`, `q = exp(-mu s)`.
/// `c[0]` is always zero.
pub fn survival_polynomial(nu: &ServiceTypeVector) -> Result<Vec<i128>> {
    let r = nu.r();
    check_degree(r, nu.t())?;
    // Start from q itself.
    let mut poly: Vec<i128> = vec![0, 1];
    for (d, &count) in nu.as_slice().iter().enumerate() {
        let m = r - d;
        // 1 - (1 - q)^m = -sum_{j>=1} C(m,j) (-q)^j
        let factor: Vec<i128> = (0..=m)
            .map(|j| {
                if j == 0 {
                    0
                } else {
                    let c = binomial_i128(m, j);
                    if j % 2 == 1 {
                        c
                    } else {
                        -c
                    }
                }
            })
            .collect();
        for _ in 0..count {
            poly = poly_mul(&poly, &factor);
        }
    }
    Ok(poly)
}

fn poly_mul(a: &[i128], b: &[i128]) -> Vec<i128> {
    let mut out = vec![0i128; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `sum_l c_l / l^power` as an exact rational.
fn weighted_reciprocal_sum(coeffs: &[i128], power: u32) -> BigRational {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c != 0)
        .fold(BigRational::zero(), |acc, (l, &c)| {
            let denom = BigInt::from(l).pow(power);
            acc + BigRational::new(BigInt::from(c), denom)
        })
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Exact first and second moments of a type-`nu` service time at rate `mu`.
pub fn type_moments(nu: &ServiceTypeVector, mu: f64) -> Result<Moments> {
    if !(mu > 0.0) {
        return Err(Error::invalid("service rate must be positive"));
    }
    let c = survival_polynomial(nu)?;
    // E[X] = int P{X>s} ds and E[X^2] = int 2s P{X>s} ds, term by term over q^l.
    let mean = to_f64(&weighted_reciprocal_sum(&c, 1)) / mu;
    let second = 2.0 * to_f64(&weighted_reciprocal_sum(&c, 2)) / (mu * mu);
    Ok(Moments { mean, second })
}

/// Second moment of the slowest type by the double binomial sum
/// `sum_j C(t,j)(-1)^j sum_l (-1)^l C(rj,l) 2/(mu^2 (l+1)^2)`.
pub fn slowest_second_moment(r: usize, t: usize, mu: f64) -> Result<f64> {
    if r < 1 {
        return Err(Error::invalid("locality must be >= 1"));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid("service rate must be positive"));
    }
    check_degree(r, t)?;
    let mut acc = BigRational::zero();
    for j in 0..=t {
        let outer = BigInt::from(binomial_i128(t, j));
        let mut inner = BigRational::zero();
        for l in 0..=r * j {
            let term = BigRational::new(BigInt::from(binomial_i128(r * j, l)), BigInt::from(l + 1).pow(2));
            if l % 2 == 0 {
                inner += term;
            } else {
                inner -= term;
            }
        }
        let contrib = inner * outer;
        if j % 2 == 0 {
            acc += contrib;
        } else {
            acc -= contrib;
        }
    }
    Ok(2.0 * to_f64(&acc) / (mu * mu))
}

/// Mean of the slowest type by the closed form `beta(t+1, 1/r) / (mu r)`.
pub fn slowest_mean(r: usize, t: usize, mu: f64) -> Result<f64> {
    if r < 1 || !(mu > 0.0) {
        return Err(Error::invalid("need r >= 1 and mu > 0"));
    }
    Ok(beta_fn(t as f64 + 1.0, 1.0 / r as f64)? / (mu * r as f64))
}

/// All occupancy vectors with `r` entries summing to `t`, slowest first
/// (reverse lexicographic).
pub fn enumerate_types(r: usize, t: usize) -> Vec<ServiceTypeVector> {
    fn rec(prefix: &mut Vec<usize>, slots: usize, remaining: usize, out: &mut Vec<ServiceTypeVector>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(ServiceTypeVector { nu: prefix.clone() });
            prefix.pop();
            return;
        }
        for x in (0..=remaining).rev() {
            prefix.push(x);
            rec(prefix, slots - 1, remaining - x, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if r >= 1 {
        rec(&mut Vec::with_capacity(r), r, t, &mut out);
    }
    out
}

/// Stochastic comparison between two service types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeOrder {
    ASlower,
    BSlower,
    Equal,
    Incomparable,
}

/// `a` is slower than `b` when every suffix sum of `a` is at most that of
/// `b` (less mass on the high-departure entries), with at least one strict.
pub fn type_partial_order(a: &ServiceTypeVector, b: &ServiceTypeVector) -> Result<TypeOrder> {
    if a.r() != b.r() || a.t() != b.t() {
        return Err(Error::invalid(format!("types {a} and {b} have different (r, t)")));
    }
    if a == b {
        return Ok(TypeOrder::Equal);
    }
    let (sa, sb) = (a.suffix_sums(), b.suffix_sums());
    let mut ord = Ordering::Equal;
    for (x, y) in sa.iter().zip(&sb) {
        match (ord, x.cmp(y)) {
            (_, Ordering::Equal) => {}
            (Ordering::Equal, c) => ord = c,
            (o, c) if o == c => {}
            _ => return Ok(TypeOrder::Incomparable),
        }
    }
    Ok(match ord {
        Ordering::Less => TypeOrder::ASlower,
        Ordering::Greater => TypeOrder::BSlower,
        Ordering::Equal => TypeOrder::Equal,
    })
}

/// Sum of exponential terms `sum_l c_l exp(-rate_l s)` representing a
/// survival function. Used for transforms in the M/G/1 sojourn analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMixture {
    pub terms: Vec<(f64, f64)>,
}

impl ExpMixture {
    pub fn for_type(nu: &ServiceTypeVector, mu: f64) -> Result<Self> {
        let c = survival_polynomial(nu)?;
        Ok(ExpMixture {
            terms: c
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0)
                .map(|(l, &c)| (c as f64, mu * l as f64))
                .collect(),
        })
    }

    pub fn survival(&self, s: f64) -> f64 {
        self.terms.iter().map(|(c, a)| c * (-a * s).exp()).sum()
    }

    /// Laplace-Stieltjes transform `E[exp(-z S)]`.
    pub fn lst(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        self.terms
            .iter()
            .map(|&(c, a)| c * a / (z + a))
            .sum::<num_complex::Complex64>()
    }
}
