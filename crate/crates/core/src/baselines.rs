//! Comparison methods: one-against-all regression and the empirical-frequency
//! table.

use std::collections::HashMap;

use crate::features::{LabelToken, SparseVector};
use crate::regressor::{LearningRate, RegressorBank, RegressorId};

/// One regressor per label, each trained on the indicator `I[y = label]`.
///
/// Every example updates every known label's regressor, so training costs
/// grow linearly with the number of labels seen.
#[derive(Debug, Clone, PartialEq)]
pub struct OvaModel {
    bank: RegressorBank,
    /// Labels in order of first appearance; label `i` owns `RegressorId(i)`.
    labels: Vec<LabelToken>,
    index: HashMap<LabelToken, RegressorId>,
}

impl OvaModel {
    pub fn new(rate: LearningRate) -> Self {
        Self { bank: RegressorBank::new(rate), labels: Vec::new(), index: HashMap::new() }
    }

    /// A model that already knows `labels`, each with an untrained regressor.
    /// Repeated labels are registered once.
    pub fn with_labels(labels: &[LabelToken], rate: LearningRate) -> Self {
        let mut model = Self::new(rate);
        for y in labels {
            if model.regressor_of(y).is_none() {
                let id = model.bank.push_fresh();
                model.labels.push(y.clone());
                model.index.insert(y.clone(), id);
            }
        }
        model
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[LabelToken] {
        &self.labels
    }

    pub fn bank(&self) -> &RegressorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut RegressorBank {
        &mut self.bank
    }

    pub fn regressor_of(&self, y: &LabelToken) -> Option<RegressorId> {
        self.index.get(y).copied()
    }

    /// Adds `y` if new, then updates every regressor: target 1 for `y`, 0 otherwise.
    pub fn train(&mut self, x: &SparseVector, y: &LabelToken) {
        let own = match self.regressor_of(y) {
            Some(id) => id,
            None => {
                let id = self.bank.push_fresh();
                self.labels.push(y.clone());
                self.index.insert(y.clone(), id);
                id
            }
        };
        for slot in 0..self.labels.len() as u32 {
            let id = RegressorId(slot);
            self.bank.update(id, x, if id == own { 1.0 } else { 0.0 });
        }
    }

    /// `f_y(x)`; zero for labels never seen.
    pub fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        self.regressor_of(y).map_or(0.0, |id| self.bank.predict(id, x))
    }

    pub(crate) fn from_parts(bank: RegressorBank, labels: Vec<LabelToken>) -> Option<Self> {
        if bank.len() != labels.len() {
            return None;
        }
        let index: HashMap<_, _> = labels.iter().enumerate().map(|(i, y)| (y.clone(), RegressorId(i as u32))).collect();
        (index.len() == labels.len()).then_some(Self { bank, labels, index })
    }
}

/// Label counts observed at one context.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextCounts {
    pub total: u64,
    pub labels: HashMap<LabelToken, u64>,
}

/// Empirical `P(y | context)` where the context is the exact feature vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableModel {
    contexts: HashMap<u64, ContextCounts>,
}

impl TableModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn context_key(x: &SparseVector) -> u64 {
        x.content_key()
    }

    pub fn train(&mut self, x: &SparseVector, y: &LabelToken) {
        self.add(Self::context_key(x), y, 1);
    }

    pub fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        self.predict_key(Self::context_key(x), y)
    }

    /// `count(c, y) / total(c)`, or 0 for an unseen context.
    pub fn predict_key(&self, key: u64, y: &LabelToken) -> f64 {
        match self.contexts.get(&key) {
            Some(c) if c.total > 0 => *c.labels.get(y).unwrap_or(&0) as f64 / c.total as f64,
            _ => 0.0,
        }
    }

    pub fn context(&self, key: u64) -> Option<&ContextCounts> {
        self.contexts.get(&key)
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    /// `(context, label, count)` triples sorted by context then label.
    pub fn sorted_counts(&self) -> Vec<(u64, LabelToken, u64)> {
        let mut out: Vec<_> = self
            .contexts
            .iter()
            .flat_map(|(&key, c)| c.labels.iter().map(move |(y, &n)| (key, y.clone(), n)))
            .collect();
        out.sort_unstable_by(|a, b| (a.0, a.1.as_str()).cmp(&(b.0, b.1.as_str())));
        out
    }

    pub(crate) fn add(&mut self, key: u64, y: &LabelToken, count: u64) {
        let c = self.contexts.entry(key).or_default();
        c.total += count;
        *c.labels.entry(y.clone()).or_insert(0) += count;
    }
}
