//! Conditional PECOC: a complete k-way label tree with a size-`k` PECOC at
//! every internal node.
//!
//! Each node estimates which of its `k` children holds the label, given that
//! the example reached the node, using `k - 1` regressors. A label's estimate
//! is the product of the (clamped) node estimates along its path. `k = 2`
//! behaves like a binary conditional probability tree; a single node with
//! `k = n` is flat PECOC.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::cpt::bounds::SLACK;
use crate::error::{Error, Result};
use crate::features::{LabelToken, SparseVector};
use crate::pecoc::{check_distribution, code_estimate, estimate_rows, subset_probabilities, train_rows, CodeMatrix};
use crate::regressor::{LearningRate, RegressorBank};

fn check_k(k: usize) -> Result<()> {
    if k >= 2 && k.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::config(format!("k must be a power of two >= 2, got {k}")))
    }
}

/// `log_k n` when `n` is an exact positive power of `k`.
fn exact_levels(n: usize, k: usize) -> Option<u32> {
    let mut levels = 0;
    let mut span = 1usize;
    while span < n {
        span = span.checked_mul(k)?;
        levels += 1;
    }
    (span == n && levels >= 1).then_some(levels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KWayTree {
    k: usize,
    levels: u32,
    code: CodeMatrix,
    /// Node `v` owns regressors `v * (k - 1) .. (v + 1) * (k - 1)`.
    bank: RegressorBank,
    slots: HashMap<LabelToken, usize>,
    labels: Vec<LabelToken>,
}

/// One node on a label's root-to-leaf path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KWayStep {
    /// Level-order node index.
    pub node: usize,
    /// Which child the path continues into.
    pub child: usize,
}

impl KWayTree {
    /// Complete k-ary tree over `labels` (in order), padded with dummy slots up
    /// to the next power of `k`.
    pub fn build(labels: &[LabelToken], k: usize, rate: LearningRate) -> Result<Self> {
        check_k(k)?;
        let mut levels = 1u32;
        let mut n = k;
        while n < labels.len() {
            n = n.checked_mul(k).ok_or_else(|| Error::config("label count overflows the tree size"))?;
            levels += 1;
        }
        let mut slots = HashMap::with_capacity(labels.len());
        for (slot, label) in labels.iter().enumerate() {
            if slots.insert(label.clone(), slot).is_some() {
                return Err(Error::precondition(format!("label `{label}` listed twice")));
            }
        }
        let internal = (n - 1) / (k - 1);
        let mut bank = RegressorBank::new(rate);
        for _ in 0..internal * (k - 1) {
            bank.push_fresh();
        }
        Ok(Self { k, levels, code: CodeMatrix::with_size(k)?, bank, slots, labels: labels.to_vec() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Leaf slots including dummies: `k^levels`.
    pub fn leaf_slots(&self) -> usize {
        self.k.pow(self.levels)
    }

    pub fn internal_nodes(&self) -> usize {
        (self.leaf_slots() - 1) / (self.k - 1)
    }

    /// Regressors trained per example: `(k - 1) log_k n`.
    pub fn regressors_per_example(&self) -> usize {
        (self.k - 1) * self.levels as usize
    }

    pub fn labels(&self) -> &[LabelToken] {
        &self.labels
    }

    pub fn slot(&self, y: &LabelToken) -> Option<usize> {
        self.slots.get(y).copied()
    }

    pub fn bank(&self) -> &RegressorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut RegressorBank {
        &mut self.bank
    }

    /// Bank index of the first regressor of `node`.
    pub fn first_regressor(&self, node: usize) -> u32 {
        (node * (self.k - 1)) as u32
    }

    pub fn path(&self, slot: usize) -> Vec<KWayStep> {
        kway_path(self.k, self.levels, slot)
    }

    pub fn train(&mut self, x: &SparseVector, y: &LabelToken) -> Result<()> {
        let slot = self.slot(y).ok_or_else(|| Error::UnknownLabel(y.to_string()))?;
        self.train_slot(x, slot);
        Ok(())
    }

    pub fn train_slot(&mut self, x: &SparseVector, slot: usize) {
        for step in self.path(slot) {
            let first = self.first_regressor(step.node);
            train_rows(&self.code, &mut self.bank, first, x, step.child);
        }
    }

    /// Unclamped node estimates along the path of `slot`.
    pub fn node_estimates(&self, x: &SparseVector, slot: usize) -> Vec<f64> {
        self.path(slot)
            .iter()
            .map(|s| estimate_rows(&self.code, &self.bank, self.first_regressor(s.node), x, s.child))
            .collect()
    }

    /// Product of clamped node estimates; zero for unknown labels.
    pub fn estimate(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        match self.slot(y) {
            Some(slot) => self.node_estimates(x, slot).iter().map(|p| p.clamp(0.0, 1.0)).product(),
            None => 0.0,
        }
    }

    pub(crate) fn from_parts(k: usize, levels: u32, bank: RegressorBank, labels: Vec<LabelToken>) -> Result<Self> {
        let mut tree = Self::build(&labels, k, bank.rate()).map_err(|e| Error::Format(e.to_string()))?;
        if tree.levels != levels || tree.bank.len() != bank.len() {
            return Err(Error::Format("k-way tree shape does not match its regressors".into()));
        }
        tree.bank = bank;
        Ok(tree)
    }
}

fn kway_path(k: usize, levels: u32, slot: usize) -> Vec<KWayStep> {
    let mut steps = Vec::with_capacity(levels as usize);
    let mut level_start = 0usize;
    let mut level_width = 1usize;
    for level in 0..levels {
        let child_span = k.pow(levels - level - 1);
        let span = child_span * k;
        steps.push(KWayStep { node: level_start + slot / span, child: (slot / child_span) % k });
        level_start += level_width;
        level_width *= k;
    }
    steps
}

/// Squared-loss multiplier `4 (log_k n)^2 ((k - 1) / k)^2`.
///
/// ```
/// assert_eq!(cptree::cpecoc::bound_ratio(16, 4).unwrap(), 9.0);
/// assert_eq!(cptree::cpecoc::bound_ratio(16, 2).unwrap(), 16.0);
/// ```
pub fn bound_ratio(n: usize, k: usize) -> Result<f64> {
    check_k(k)?;
    let levels = exact_levels(n, k).ok_or_else(|| Error::config(format!("n = {n} is not a power of k = {k}")))?;
    Ok(ratio(levels as f64, k))
}

fn ratio(levels: f64, k: usize) -> f64 {
    let share = (k - 1) as f64 / k as f64;
    4.0 * levels * levels * share * share
}

/// One point of the computation/regret trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub k: usize,
    pub multiplier: f64,
    pub regressors_per_example: f64,
    /// Whether `n` is an exact power of `k` (otherwise `log_k n` is fractional).
    pub exact: bool,
}

/// Trade-off rows for every power-of-two `k` from 2 to `n`.
pub fn tradeoff_curve(n: usize) -> Result<Vec<CurveRow>> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::config(format!("curve needs n a power of two >= 2, got {n}")));
    }
    let log2n = n.trailing_zeros() as f64;
    Ok((1..=n.trailing_zeros())
        .map(|bits| {
            let k = 1usize << bits;
            let levels = log2n / bits as f64;
            CurveRow {
                k,
                multiplier: ratio(levels, k),
                regressors_per_example: (k - 1) as f64 * levels,
                exact: exact_levels(n, k).is_some(),
            }
        })
        .collect())
}

/// Writes `k<TAB>multiplier<TAB>regressors_per_example` rows with a header line.
pub fn write_curve_tsv(rows: &[CurveRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "k\tmultiplier\tregressors_per_example")?;
    for row in rows {
        writeln!(out, "{}\t{}\t{}", row.k, row.multiplier, row.regressors_per_example)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposedCheck {
    /// `(prod_l clamp(q_l) - P(y|x))^2`
    pub lhs: f64,
    /// `bound_ratio(n, k) * epsilon_sq`
    pub bound: f64,
    /// Mean squared error of the `(k - 1) log_k n` path regressors against the
    /// true conditional subset probabilities at their node.
    pub epsilon_sq: f64,
    pub holds: bool,
    /// Path nodes whose raw estimate left `[0, 1]` and was clamped.
    pub clamped_nodes: usize,
}

/// Checks the composed k-way bound for one observation.
///
/// `dist` is the true distribution over the `n = k^L` leaf slots; `outputs[l]`
/// holds the `k - 1` regressor outputs (rows `1..k`) of the level-`l` node on
/// the path to `y`.
pub fn check_composed_bound(dist: &[f64], k: usize, outputs: &[Vec<f64>], y: usize) -> Result<ComposedCheck> {
    check_k(k)?;
    check_distribution(dist)?;
    let n = dist.len();
    let levels = exact_levels(n, k).ok_or_else(|| Error::precondition(format!("distribution length {n} is not a power of k = {k}")))?;
    if y >= n {
        return Err(Error::precondition(format!("label index {y} is outside the distribution")));
    }
    if outputs.len() != levels as usize || outputs.iter().any(|o| o.len() != k - 1) {
        return Err(Error::precondition(format!("expected {levels} path nodes with {} outputs each", k - 1)));
    }
    if outputs.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::precondition("regressor outputs must lie in [0, 1]"));
    }

    let code = CodeMatrix::with_size(k)?;
    let mut estimate = 1.0;
    let mut squared_error = 0.0;
    let mut clamped_nodes = 0;
    for (level, node_outputs) in outputs.iter().enumerate() {
        let span = k.pow(levels - level as u32);
        let child_span = span / k;
        let start = (y / span) * span;
        let node_mass: f64 = dist[start..start + span].iter().sum();
        let conditional: Vec<f64> = (0..k)
            .map(|c| {
                let mass: f64 = dist[start + c * child_span..start + (c + 1) * child_span].iter().sum();
                if node_mass > 0.0 { mass / node_mass } else { 1.0 / k as f64 }
            })
            .collect();
        let child = (y / child_span) % k;
        let raw = code_estimate(&code, child, |row| node_outputs[row - 1]);
        if !(0.0..=1.0).contains(&raw) {
            clamped_nodes += 1;
        }
        estimate *= raw.clamp(0.0, 1.0);
        let truth = subset_probabilities(&code, &conditional);
        squared_error += node_outputs.iter().zip(&truth[1..]).map(|(r, t)| (r - t).powi(2)).sum::<f64>();
    }
    let epsilon_sq = squared_error / ((k - 1) * levels as usize) as f64;
    let lhs = (estimate - dist[y]).powi(2);
    let bound = ratio(levels as f64, k) * epsilon_sq;
    Ok(ComposedCheck { lhs, bound, epsilon_sq, holds: lhs <= bound + SLACK, clamped_nodes })
}
