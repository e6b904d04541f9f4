//! Quasi-birth-death model of the availability-one, locality-two fork-join
//! system serving a single object.
//!
//! The level is the number of requests in the system. The phase `(a, b)`
//! records how many sub-copies recovery server alpha (resp. beta) has
//! completed beyond the other one; at most one of the two is nonzero. Leads
//! are truncated at 2 by blocking the leading server, which can only slow the
//! system down, so the resulting mean sojourn time is an upper bound.
//!
//! Levels 0 and 1 form the boundary with states
//! `(0,(0,0)), (1,(0,1)), (1,(0,0)), (1,(1,0))`; levels `n >= 2` repeat with
//! phases `(0,2), (0,1), (0,0), (1,0), (2,0)` and `pi_n = pi_2 R^(n-2)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_left, Matrix};

/// Repeating phases in block order.
pub const PHASES: [(usize, usize); 5] = [(0, 2), (0, 1), (0, 0), (1, 0), (2, 0)];
/// Boundary states `(level, (a, b))` in block order.
pub const BOUNDARY: [(usize, (usize, usize)); 4] = [(0, (0, 0)), (1, (0, 1)), (1, (0, 0)), (1, (1, 0))];

const MAX_LEAD: usize = 2;

fn phase_index(p: (usize, usize)) -> usize {
    PHASES.iter().position(|&q| q == p).expect("phase in range")
}

fn boundary_index(level: usize, p: (usize, usize)) -> Option<usize> {
    BOUNDARY.iter().position(|&q| q == (level, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbdModel {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Level up.
    pub a0: Matrix,
    /// Within a repeating level.
    pub a1: Matrix,
    /// Level down.
    pub a2: Matrix,
    /// Within the boundary (levels 0 and 1).
    pub b00: Matrix,
    /// Boundary to level 2.
    pub b01: Matrix,
    /// Level 2 to boundary.
    pub b10: Matrix,
}

/// Transitions out of a phase at a level with `n >= 1` requests: a list of
/// `(level delta, target phase, rate)`.
fn phase_moves(
    p: (usize, usize),
    level: usize,
    gamma: f64,
    alpha: f64,
    beta: f64,
) -> Vec<(isize, (usize, usize), f64)> {
    let (a, b) = p;
    let mut out = Vec::with_capacity(3);
    // Systematic completion: the head request leaves and both leads shrink.
    out.push((-1, (a.saturating_sub(1), b.saturating_sub(1)), gamma));
    // Alpha completes the sub-copy it is serving.
    if b > 0 {
        out.push((-1, (0, b - 1), alpha));
    } else if a < MAX_LEAD && a < level {
        out.push((0, (a + 1, 0), alpha));
    }
    if a > 0 {
        out.push((-1, (a - 1, 0), beta));
    } else if b < MAX_LEAD && b < level {
        out.push((0, (0, b + 1), beta));
    }
    out
}

fn fill_diagonal(blocks: &[&Matrix], diag: &mut Matrix) {
    for i in 0..diag.rows() {
        let out: f64 = blocks.iter().map(|m| m.row(i).iter().sum::<f64>()).sum::<f64>()
            + diag
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, x)| x)
                .sum::<f64>();
        diag[(i, i)] = -out;
    }
}

pub fn build_qbd(lambda: f64, gamma: f64, alpha: f64, beta: f64) -> Result<QbdModel> {
    for (name, v) in [("lambda", lambda), ("gamma", gamma), ("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let np = PHASES.len();
    let nb = BOUNDARY.len();
    let a0 = Matrix::identity(np).scale(lambda);
    let mut a1 = Matrix::zeros(np, np);
    let mut a2 = Matrix::zeros(np, np);
    for (i, &p) in PHASES.iter().enumerate() {
        for (dl, q, rate) in phase_moves(p, usize::MAX, gamma, alpha, beta) {
            let j = phase_index(q);
            match dl {
                0 => a1[(i, j)] += rate,
                _ => a2[(i, j)] += rate,
            }
        }
    }
    fill_diagonal(&[&a0, &a2], &mut a1);

    let mut b00 = Matrix::zeros(nb, nb);
    let mut b01 = Matrix::zeros(nb, np);
    let mut b10 = Matrix::zeros(np, nb);
    b00[(0, boundary_index(1, (0, 0)).unwrap())] = lambda;
    for (i, &(level, p)) in BOUNDARY.iter().enumerate().skip(1) {
        b01[(i, phase_index(p))] = lambda;
        for (dl, q, rate) in phase_moves(p, level, gamma, alpha, beta) {
            let target = if dl < 0 { (0, (0, 0)) } else { (level, q) };
            let j = boundary_index(target.0, target.1).expect("feasible boundary state");
            b00[(i, j)] += rate;
        }
    }
    for (i, &p) in PHASES.iter().enumerate() {
        for (dl, q, rate) in phase_moves(p, 2, gamma, alpha, beta) {
            if dl < 0 {
                b10[(i, boundary_index(1, q).expect("feasible level-1 phase"))] += rate;
            }
        }
    }
    fill_diagonal(&[&b01], &mut b00);
    Ok(QbdModel {
        lambda,
        gamma,
        alpha,
        beta,
        a0,
        a1,
        a2,
        b00,
        b01,
        b10,
    })
}

impl QbdModel {
    /// Stationary law of the phase process `A0 + A1 + A2`.
    pub fn phase_stationary(&self) -> Result<Vec<f64>> {
        let mut g = &(&self.a0 + &self.a1) + &self.a2;
        let n = g.rows();
        for i in 0..n {
            g[(i, n - 1)] = 1.0;
        }
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        solve_left(&g, &rhs)
    }

    /// Mean drift condition `theta A0 1 < theta A2 1`, returned as
    /// (up rate, down rate).
    pub fn drift(&self) -> Result<(f64, f64)> {
        let theta = self.phase_stationary()?;
        let up: f64 = self.a0.left_mul(&theta).iter().sum();
        let down: f64 = self.a2.left_mul(&theta).iter().sum();
        Ok((up, down))
    }
}

/// Minimal non-negative solution of `A0 + R A1 + R^2 A2 = 0`. Returns the
/// matrix, the number of iterations used and the final residual.
pub fn solve_r(model: &QbdModel, tol: f64, max_iter: usize) -> Result<(Matrix, usize, f64)> {
    let (up, down) = model.drift()?;
    if up >= down {
        return Err(Error::unstable(format!(
            "mean upward drift {up} >= downward drift {down}"
        )));
    }
    let a1_inv = model.a1.inverse()?;
    let n = model.a0.rows();
    let mut r = Matrix::zeros(n, n);
    for k in 1..=max_iter {
        let r2a2 = &(&r * &r) * &model.a2;
        let next = -&(&(&model.a0 + &r2a2) * &a1_inv);
        let step = (&next - &r).max_abs();
        r = next;
        if step <= tol {
            let residual = residual(model, &r);
            if r.spectral_radius() >= 1.0 {
                return Err(Error::unstable("spectral radius of R >= 1"));
            }
            return Ok((r, k, residual));
        }
    }
    Err(Error::IterationLimit {
        max_iter,
        residual: residual(model, &r),
    })
}

/// `||A0 + R A1 + R^2 A2||_max`.
pub fn residual(model: &QbdModel, r: &Matrix) -> f64 {
    let r2 = r * r;
    (&(&model.a0 + &(r * &model.a1)) + &(&r2 * &model.a2)).max_abs()
}

/// Boundary probabilities `pi0` (levels 0 and 1) and `pi1` (level 2).
pub fn solve_boundary(model: &QbdModel, r: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let nb = BOUNDARY.len();
    let np = PHASES.len();
    let n = nb + np;
    let local = &model.a1 + &(r * &model.a2);
    let mut m = Matrix::zeros(n, n);
    for i in 0..nb {
        for j in 0..nb {
            m[(i, j)] = model.b00[(i, j)];
        }
        for j in 0..np {
            m[(i, nb + j)] = model.b01[(i, j)];
        }
    }
    for i in 0..np {
        for j in 0..nb {
            m[(nb + i, j)] = model.b10[(i, j)];
        }
        for j in 0..np {
            m[(nb + i, nb + j)] = local[(i, j)];
        }
    }
    // Replace one (redundant) balance equation by the normalization.
    let tail = (&Matrix::identity(np) - r).inverse()?.right_mul(&vec![1.0; np]);
    for i in 0..n {
        m[(i, 0)] = if i < nb { 1.0 } else { tail[i - nb] };
    }
    let mut rhs = vec![0.0; n];
    rhs[0] = 1.0;
    let x = solve_left(&m, &rhs).map_err(|e| Error::Degenerate(format!("boundary system: {e}")))?;
    let (pi0, pi1) = x.split_at(nb);
    // Round-off can leave tiny negative entries at very low load.
    let clean = |v: &[f64]| {
        v.iter()
            .map(|x| if x.abs() < 1e-15 { 0.0 } else { *x })
            .collect::<Vec<_>>()
    };
    let (pi0, pi1) = (clean(pi0), clean(pi1));
    if pi0.iter().chain(&pi1).any(|x| *x < -1e-12) {
        return Err(Error::Degenerate("negative boundary probability".into()));
    }
    Ok((pi0, pi1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QbdSolution {
    #[serde(skip)]
    pub r: Matrix,
    pub pi0: Vec<f64>,
    pub pi1: Vec<f64>,
    pub mean_jobs: f64,
    pub mean_time_ub: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl QbdSolution {
    pub fn total_probability(&self) -> f64 {
        let np = self.pi1.len();
        let tail = (&Matrix::identity(np) - &self.r)
            .inverse()
            .map(|m| m.left_mul(&self.pi1).iter().sum::<f64>())
            .unwrap_or(f64::NAN);
        self.pi0.iter().sum::<f64>() + tail
    }

    /// Probability vector of level `n >= 2`.
    pub fn level(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2);
        let mut v = self.pi1.clone();
        for _ in 2..n {
            v = self.r.left_mul(&v);
        }
        v
    }

    pub fn spectral_radius(&self) -> f64 {
        self.r.spectral_radius()
    }
}

pub fn solve(model: &QbdModel) -> Result<QbdSolution> {
    let (r, iterations, residual) = solve_r(model, 1e-12, 1_000_000)?;
    let (pi0, pi1) = solve_boundary(model, &r)?;
    let np = PHASES.len();
    let inv = (&Matrix::identity(np) - &r).inverse()?;
    let weights = &(&inv * &inv) + &inv;
    let deep: f64 = weights.left_mul(&pi1).iter().sum();
    let level_one: f64 = pi0.iter().sum::<f64>() - pi0[0];
    let mean_jobs = level_one + deep;
    Ok(QbdSolution {
        r,
        pi0,
        pi1,
        mean_jobs,
        mean_time_ub: mean_jobs / model.lambda,
        iterations,
        residual,
    })
}

/// Upper bound on the mean download time from the truncated chain.
pub fn ma_mean_ub(lambda: f64, gamma: f64, alpha: f64, beta: f64) -> Result<f64> {
    Ok(solve(&build_qbd(lambda, gamma, alpha, beta)?)?.mean_time_ub)
}

/// Largest arrival rate for which the truncated chain is positive recurrent.
pub fn stability_limit(gamma: f64, alpha: f64, beta: f64) -> Result<f64> {
    // The drift condition does not depend on lambda beyond A0 = lambda I.
    let m = build_qbd(1.0, gamma, alpha, beta)?;
    let theta = m.phase_stationary()?;
    Ok(m.a2.left_mul(&theta).iter().sum())
}
