//! Gauss-Legendre quadrature with self-validating node generation.
//!
//! Each node angle is isolated in its own bracket
//! `((2j-1)pi/(2N+1), 2j pi/(2N+1))` and found by a Newton iteration that
//! falls back to bisection whenever a step would leave the bracket, so a
//! converged rule is certified by construction.

use thiserror::Error;

/// Largest supported rule order.
pub const MAX_ORDER: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("rule order must lie in 1..={MAX_ORDER}, got {0}")]
    OrderOutOfRange(usize),
    #[error("node iteration for order {order}, bracket {index} failed to converge")]
    NodeIterationStalled { order: usize, index: usize },
}

/// A Gauss-Legendre rule on `[-1, 1]`: `order` nodes in increasing order
/// with positive weights summing to 2.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Approximate the integral of `f` over `[-1, 1]`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Bracket for the angle of the `j`-th zero (1-based) of
    /// `P_n(cos(theta))`, zeros counted in increasing angle.
    pub fn angle_bracket(order: usize, j: usize) -> (f64, f64) {
        let n = (2 * order + 1) as f64;
        (
            (2 * j - 1) as f64 * std::f64::consts::PI / n,
            (2 * j) as f64 * std::f64::consts::PI / n,
        )
    }
}

/// Legendre polynomial `P_n` and its derivative at `x`, by the three-term
/// recurrence.
pub(crate) fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    let mut dp_prev = 0.0;
    let mut dp = 1.0;
    for m in 2..=n {
        let mf = m as f64;
        let p_next = ((2.0 * mf - 1.0) * x * p - (mf - 1.0) * p_prev) / mf;
        let dp_next = ((2.0 * mf - 1.0) * (p + x * dp) - (mf - 1.0) * dp_prev) / mf;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// Generate the `n`-point Gauss-Legendre rule.
///
/// Nodes are roots of `P_n` computed through the angle substitution
/// `d = cos(theta)`; weights are `2 / ((1 - d^2) P_n'(d)^2)`.
pub fn legendre_rule(n: usize) -> Result<GaussRule, QuadError> {
    if n == 0 || n > MAX_ORDER {
        return Err(QuadError::OrderOutOfRange(n));
    }
    let mut angles = vec![0.0; n];
    for j in 1..=n {
        angles[j - 1] = solve_node_angle(n, j)?;
    }
    // d_j = cos(theta_{n+1-j}) lists the nodes in increasing order
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for j in 0..n {
        let d = angles[n - 1 - j].cos();
        let (_, dp) = legendre_eval(n, d);
        nodes[j] = d;
        weights[j] = 2.0 / ((1.0 - d * d) * dp * dp);
    }
    Ok(GaussRule {
        order: n,
        nodes,
        weights,
    })
}

/// Newton iteration on `f(theta) = P_n(cos theta)` safeguarded by the
/// isolating bracket; bisects whenever a step leaves the bracket.
fn solve_node_angle(n: usize, j: usize) -> Result<f64, QuadError> {
    let (mut lo, mut hi) = GaussRule::angle_bracket(n, j);
    let f = |theta: f64| legendre_eval(n, theta.cos()).0;
    let mut f_lo = f(lo);
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..200 {
        let x = theta.cos();
        let (p, dp) = legendre_eval(n, x);
        if p == 0.0 {
            return Ok(theta);
        }
        // keep the sign-change bracket current
        if (p > 0.0) == (f_lo > 0.0) {
            lo = theta;
            f_lo = p;
        } else {
            hi = theta;
        }
        let derivative = -theta.sin() * dp;
        let mut next = theta - p / derivative;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - theta).abs() <= 4.0 * f64::EPSILON * theta.abs() {
            return Ok(next);
        }
        theta = next;
    }
    Err(QuadError::NodeIterationStalled { order: n, index: j })
}
