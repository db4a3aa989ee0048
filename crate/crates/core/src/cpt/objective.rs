//! The routing rule used when a new label descends the tree, and the balance
//! quantities it guarantees.

use crate::error::{Error, Result};

use super::Direction;

/// Routing score: positive sends a new label right.
///
/// The first term follows the node regressor's preference, the second pushes
/// towards the side with fewer leaves; `alpha` weighs the two.
pub fn obj(p: f64, left_leaves: u32, right_leaves: u32, alpha: f64) -> f64 {
    (1.0 - alpha) * 2.0 * (p - 0.5) + alpha * (left_leaves as f64 / right_leaves as f64).log2()
}

/// Direction chosen for a new label. A score of exactly zero goes left.
pub fn route(p: f64, left_leaves: u32, right_leaves: u32, alpha: f64) -> Direction {
    if obj(p, left_leaves, right_leaves, alpha) > 0.0 {
        Direction::Right
    } else {
        Direction::Left
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Largest asymptotic share of leaves either side of a node can hold:
/// `1 / (1 + 2^(1 - 1/alpha))`.
pub fn kappa(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(1.0 / (1.0 + balance_ratio(alpha)))
}

/// `2^(1 - 1/alpha)`, the leaf ratio at which the balance term alone outweighs
/// any regressor preference.
fn balance_ratio(alpha: f64) -> f64 {
    (1.0 - 1.0 / alpha).exp2()
}

/// True when a node with these counts must send a new label left whatever its
/// regressor predicts, i.e. `R / N > kappa`.
pub fn forced_left(left_leaves: u32, right_leaves: u32, alpha: f64) -> bool {
    // R / N > kappa  <=>  R * 2^(1 - 1/alpha) > L
    right_leaves as f64 * balance_ratio(alpha) > left_leaves as f64
}

/// Mirror image of [`forced_left`].
pub fn forced_right(left_leaves: u32, right_leaves: u32, alpha: f64) -> bool {
    forced_left(right_leaves, left_leaves, alpha)
}

/// How the per-side leaf bound `kappa * N + (1 - kappa)` is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// `side < kappa N + 1 - kappa`
    Strict,
    /// `side <= kappa N + 1 - kappa`
    Inclusive,
}

/// Checks one side of a node against `kappa * N + (1 - kappa)`.
///
/// Evaluated as `(side - 1) * 2^(1 - 1/alpha)` against `N - side`, which is
/// exact for the alphas whose `1/alpha` is an integer.
pub fn side_within_bound(side: u32, total: u32, alpha: f64, bound: Bound) -> bool {
    debug_assert!(side <= total);
    let lhs = side.saturating_sub(1) as f64 * balance_ratio(alpha);
    let rhs = (total - side) as f64;
    if side == 0 {
        return true;
    }
    match bound {
        Bound::Strict => lhs < rhs,
        Bound::Inclusive => lhs <= rhs,
    }
}

/// Upper bound on tree depth after any insertion sequence with `n` labels:
/// `ln n / ln(1/kappa) + 2`.
pub fn depth_bound(n: usize, alpha: f64) -> Result<f64> {
    let kappa = kappa(alpha)?;
    if n <= 1 {
        return Ok(2.0);
    }
    Ok((n as f64).ln() / (1.0 / kappa).ln() + 2.0)
}
