//! Executable forms of the error-composition and total-depth bounds for label trees.

use serde::Serialize;

use crate::error::{Error, Result};

/// Slack for floating-point rounding when comparing sides that can be equal.
pub const SLACK: f64 = 1e-12;

/// Result of comparing the product of true path conditionals `p` with the
/// product of estimated ones `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateBoundCheck {
    /// `|prod q - prod p|`
    pub lhs: f64,
    /// `sum_i |q_i - p_i| prod_{j != i} max(p_j, q_j)`
    pub slab_bound: f64,
    /// `sum_i |q_i - p_i|`
    pub sum_bound: f64,
    /// `d^2 * mean_i (q_i - p_i)^2`, compared against `lhs^2`
    pub thm1_bound: f64,
    pub all_hold: bool,
}

fn check_unit(values: &[f64], name: &str) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::precondition(format!("{name} value {v} is outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Evaluates every side of the path-error inequalities for one `(x, y)`.
///
/// ```
/// let c = cptree::check_estimate_bounds(&[0.2], &[0.7]).unwrap();
/// assert!((c.lhs - 0.5).abs() < 1e-15 && c.all_hold);
/// ```
pub fn check_estimate_bounds(p: &[f64], q: &[f64]) -> Result<EstimateBoundCheck> {
    if p.len() != q.len() {
        return Err(Error::precondition(format!(
            "path lengths differ: {} true vs {} estimated",
            p.len(),
            q.len()
        )));
    }
    check_unit(p, "true conditional")?;
    check_unit(q, "estimated conditional")?;

    let d = p.len();
    let lhs = (q.iter().product::<f64>() - p.iter().product::<f64>()).abs();
    let maxes: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.max(*b)).collect();
    let slab_bound = (0..d)
        .map(|i| {
            let others: f64 = maxes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, m)| m).product();
            (q[i] - p[i]).abs() * others
        })
        .sum();
    let sum_bound: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    let thm1_bound = if d == 0 {
        0.0
    } else {
        let mean_sq = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d as f64;
        (d * d) as f64 * mean_sq
    };
    let all_hold =
        lhs <= slab_bound + SLACK && slab_bound <= sum_bound + SLACK && lhs * lhs <= thm1_bound + SLACK;
    Ok(EstimateBoundCheck { lhs, slab_bound, sum_bound, thm1_bound, all_hold })
}

/// `-k ln k - (1 - k) ln(1 - k)`, in nats.
pub fn binary_entropy(kappa: f64) -> f64 {
    let term = |v: f64| if v <= 0.0 { 0.0 } else { -v * v.ln() };
    term(kappa) + term(1.0 - kappa)
}

/// `n ln n / H(kappa)`: the total leaf depth allowed for an `n`-leaf tree
/// whose every node keeps at most a `kappa` share of its leaves on each side.
pub fn total_depth_bound(n: usize, kappa: f64) -> Result<f64> {
    if !(0.5..1.0).contains(&kappa) {
        return Err(Error::config(format!("kappa must lie in [1/2, 1), got {kappa}")));
    }
    if n <= 1 {
        return Ok(0.0);
    }
    let n = n as f64;
    Ok(n * n.ln() / binary_entropy(kappa))
}
