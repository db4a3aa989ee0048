//! Probabilistic error-correcting output codes over Hadamard codes.
//!
//! Row `i` of the code defines the label subset `Y_i = { y : C(i, y) = 1 }`, and
//! one regressor `r_i(x)` estimates `P(y in Y_i | x)`. The estimate for a label
//! is `2 * mean_i [C(i,y) r_i + (1 - C(i,y)) (1 - r_i)] - 1`, where the first
//! row contains every label and is pinned to `r = 1`.

use std::collections::HashMap;

use serde::Serialize;

use crate::cpt::bounds::SLACK;
use crate::error::{Error, Result};
use crate::features::{LabelToken, SparseVector};
use crate::regressor::{LearningRate, RegressorBank, RegressorId};

/// Hadamard code of size `2^order`, generated by
/// `C_2 = [[1,1],[1,0]]`, `C_2s = [[C_s, C_s], [C_s, 1 - C_s]]`.
///
/// Entries are computed on demand: unrolling the recursion gives
/// `C(i, j) = 1` iff `i & j` has an even number of set bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CodeMatrix {
    order: u32,
}

impl CodeMatrix {
    /// Smallest code with at least `n_labels` columns.
    pub fn for_labels(n_labels: usize) -> Result<Self> {
        if n_labels < 2 {
            return Err(Error::config(format!("a code needs at least 2 labels, got {n_labels}")));
        }
        Ok(Self { order: n_labels.next_power_of_two().trailing_zeros() })
    }

    /// Code with exactly `size` columns; `size` must be a power of two, at least 2.
    pub fn with_size(size: usize) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::config(format!("code size must be a power of two >= 2, got {size}")));
        }
        Ok(Self { order: size.trailing_zeros() })
    }

    pub fn size(&self) -> usize {
        1 << self.order
    }

    pub fn entry(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.size() && col < self.size());
        (row & col).count_ones() % 2 == 0
    }

    /// The full matrix as 0/1 rows.
    pub fn rows(&self) -> Vec<Vec<u8>> {
        let n = self.size();
        (0..n).map(|i| (0..n).map(|j| self.entry(i, j) as u8).collect()).collect()
    }
}

/// Expands the code recursion literally, one doubling at a time.
pub fn hadamard_by_recursion(size: usize) -> Result<Vec<Vec<u8>>> {
    CodeMatrix::with_size(size)?;
    let mut c = vec![vec![1u8, 1], vec![1, 0]];
    while c.len() < size {
        let s = c.len();
        let mut next = vec![vec![0u8; 2 * s]; 2 * s];
        for i in 0..s {
            for j in 0..s {
                next[i][j] = c[i][j];
                next[i][j + s] = c[i][j];
                next[i + s][j] = c[i][j];
                next[i + s][j + s] = 1 - c[i][j];
            }
        }
        c = next;
    }
    Ok(c)
}

/// The PECOC estimate for column `col` given the non-trivial row outputs.
/// `output(i)` is called for rows `1..size` in order.
pub fn code_estimate(code: &CodeMatrix, col: usize, mut output: impl FnMut(usize) -> f64) -> f64 {
    let k = code.size();
    // Row 0 holds every label and its regressor is the constant 1.
    let mut agreement = 1.0;
    for row in 1..k {
        let r = output(row);
        agreement += if code.entry(row, col) { r } else { 1.0 - r };
    }
    2.0 * agreement / k as f64 - 1.0
}

/// `P(y in Y_i)` for every row of the code under `dist` (dummy columns carry
/// zero mass when `dist` is shorter than the code).
pub fn subset_probabilities(code: &CodeMatrix, dist: &[f64]) -> Vec<f64> {
    (0..code.size())
        .map(|row| dist.iter().enumerate().filter(|&(col, _)| code.entry(row, col)).map(|(_, p)| p).sum())
        .collect()
}

/// Trains rows `1..k` stored at `bank[first..first + k - 1]` on one example of column `col`.
pub(crate) fn train_rows(code: &CodeMatrix, bank: &mut RegressorBank, first: u32, x: &SparseVector, col: usize) {
    for row in 1..code.size() {
        let target = if code.entry(row, col) { 1.0 } else { 0.0 };
        bank.update(RegressorId(first + row as u32 - 1), x, target);
    }
}

pub(crate) fn estimate_rows(code: &CodeMatrix, bank: &RegressorBank, first: u32, x: &SparseVector, col: usize) -> f64 {
    code_estimate(code, col, |row| bank.predict(RegressorId(first + row as u32 - 1), x))
}

/// Flat PECOC with a fixed number of label slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PecocModel {
    code: CodeMatrix,
    bank: RegressorBank,
    columns: HashMap<LabelToken, usize>,
    labels: Vec<LabelToken>,
}

impl PecocModel {
    /// Room for at least `n_labels` labels; columns are assigned on first sight.
    pub fn new(n_labels: usize, rate: LearningRate) -> Result<Self> {
        let code = CodeMatrix::for_labels(n_labels)?;
        let mut bank = RegressorBank::new(rate);
        for _ in 1..code.size() {
            bank.push_fresh();
        }
        Ok(Self { code, bank, columns: HashMap::new(), labels: Vec::new() })
    }

    /// Model whose columns are taken by `labels` in order.
    pub fn with_labels(labels: &[LabelToken], rate: LearningRate) -> Result<Self> {
        let mut model = Self::new(labels.len().max(2), rate)?;
        for label in labels {
            if model.columns.contains_key(label) {
                return Err(Error::precondition(format!("label `{label}` listed twice")));
            }
            model.assign(label)?;
        }
        Ok(model)
    }

    pub fn code(&self) -> &CodeMatrix {
        &self.code
    }

    pub fn capacity(&self) -> usize {
        self.code.size()
    }

    pub fn bank(&self) -> &RegressorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut RegressorBank {
        &mut self.bank
    }

    /// Labels in column order.
    pub fn labels(&self) -> &[LabelToken] {
        &self.labels
    }

    pub fn column(&self, y: &LabelToken) -> Option<usize> {
        self.columns.get(y).copied()
    }

    /// Column of `y`, taking the next free one if `y` is new.
    pub fn assign(&mut self, y: &LabelToken) -> Result<usize> {
        if let Some(col) = self.column(y) {
            return Ok(col);
        }
        if self.labels.len() == self.capacity() {
            return Err(Error::Capacity { capacity: self.capacity(), label: y.to_string() });
        }
        let col = self.labels.len();
        self.columns.insert(y.clone(), col);
        self.labels.push(y.clone());
        Ok(col)
    }

    /// Updates every non-trivial row regressor with target `C(i, column(y))`.
    pub fn train(&mut self, x: &SparseVector, y: &LabelToken) -> Result<()> {
        let col = self.assign(y)?;
        self.train_column(x, col);
        Ok(())
    }

    pub fn train_column(&mut self, x: &SparseVector, col: usize) {
        train_rows(&self.code, &mut self.bank, 0, x, col);
    }

    /// Unclamped estimate; may fall outside `[0, 1]` when regressors err.
    pub fn estimate_raw(&self, x: &SparseVector, y: &LabelToken) -> Result<f64> {
        let col = self.column(y).ok_or_else(|| Error::UnknownLabel(y.to_string()))?;
        Ok(self.estimate_column_raw(x, col))
    }

    pub fn estimate_column_raw(&self, x: &SparseVector, col: usize) -> f64 {
        estimate_rows(&self.code, &self.bank, 0, x, col)
    }

    /// Estimate clamped to `[0, 1]`; zero for unknown labels.
    pub fn estimate(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        self.estimate_raw(x, y).map(|p| p.clamp(0.0, 1.0)).unwrap_or(0.0)
    }

    pub(crate) fn from_parts(code: CodeMatrix, bank: RegressorBank, labels: Vec<LabelToken>) -> Result<Self> {
        if bank.len() != code.size() - 1 {
            return Err(Error::Format(format!("PECOC of size {} needs {} regressors", code.size(), code.size() - 1)));
        }
        let mut model = Self { code, bank, columns: HashMap::new(), labels: Vec::new() };
        for label in &labels {
            if model.column(label).is_some() {
                return Err(Error::Format(format!("label `{label}` stored twice")));
            }
            model.assign(label).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }
}

/// Outcome of checking the PECOC regret bound on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretCheck {
    /// `(estimate - P(y|x))^2`
    pub lhs: f64,
    /// `4 ((k-1)/k)^2 * mean_i (r_i - P(y in Y_i|x))^2` over the `k - 1` non-trivial rows
    pub bound: f64,
    pub holds: bool,
}

pub(crate) fn check_distribution(dist: &[f64]) -> Result<()> {
    if let Some(p) = dist.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::precondition(format!("probability {p} is outside [0, 1]")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::precondition(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Checks `(estimate - P(y|x))^2 <= 4((k-1)/k)^2 * mean squared row error` for
/// one observation.
///
/// `dist` is the true label distribution (padded with dummy zeros up to the
/// code size); `outputs[i - 1]` is the regressor output for row `i`.
pub fn check_pecoc_regret(dist: &[f64], outputs: &[f64], y: usize) -> Result<RegretCheck> {
    check_distribution(dist)?;
    let code = CodeMatrix::for_labels(dist.len())?;
    let k = code.size();
    if outputs.len() != k - 1 {
        return Err(Error::precondition(format!("code of size {k} needs {} row outputs, got {}", k - 1, outputs.len())));
    }
    if let Some(r) = outputs.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::precondition(format!("row output {r} is outside [0, 1]")));
    }
    if y >= dist.len() {
        return Err(Error::precondition(format!("label index {y} is outside the distribution")));
    }
    let truth = subset_probabilities(&code, dist);
    let estimate = code_estimate(&code, y, |row| outputs[row - 1]);
    let lhs = (estimate - dist[y]).powi(2);
    let mse = outputs.iter().zip(&truth[1..]).map(|(r, t)| (r - t).powi(2)).sum::<f64>() / (k - 1) as f64;
    let factor = (k - 1) as f64 / k as f64;
    let bound = 4.0 * factor * factor * mse;
    Ok(RegretCheck { lhs, bound, holds: lhs <= bound + SLACK })
}
