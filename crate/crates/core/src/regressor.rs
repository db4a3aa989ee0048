//! Online linear regressors on squared loss, and the bank that stores them.
//!
//! A regressor conceptually holds a dense weight vector over the whole hashed
//! feature space. Untouched weights are zero, so only touched slots are stored;
//! the bias weight starts at `0.5`, which makes a fresh regressor predict `0.5`
//! on every input.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;

/// Starting value of the bias weight.
pub const INITIAL_BIAS: f64 = 0.5;

/// Step size schedule `eta0 / (1 + decay * t)` where `t` counts prior updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub eta0: f64,
    pub decay: f64,
}

impl Default for LearningRate {
    fn default() -> Self {
        Self { eta0: 0.1, decay: 0.0 }
    }
}

impl LearningRate {
    pub fn new(eta0: f64, decay: f64) -> Result<Self> {
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(Error::config(format!("eta0 must be positive, got {eta0}")));
        }
        if !(decay.is_finite() && decay >= 0.0) {
            return Err(Error::config(format!("decay must be non-negative, got {decay}")));
        }
        Ok(Self { eta0, decay })
    }

    pub fn at(&self, updates: u64) -> f64 {
        self.eta0 / (1.0 + self.decay * updates as f64)
    }
}

/// Feature indices are already hash outputs; one multiply spreads them over
/// the high bits the map's probing relies on.
#[derive(Default, Clone, Copy)]
pub struct IndexHasher(u64);

impl Hasher for IndexHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(8) ^ b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        }
    }

    fn write_u64(&mut self, i: u64) {
        self.0 = i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
}

pub type WeightMap = HashMap<u64, f64, BuildHasherDefault<IndexHasher>>;

/// Linear model `clamp(w . x, 0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    bias: f64,
    weights: WeightMap,
    updates: u64,
}

impl Default for Regressor {
    fn default() -> Self {
        Self { bias: INITIAL_BIAS, weights: WeightMap::default(), updates: 0 }
    }
}

impl Regressor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a regressor with explicit weights. Entries equal to zero are dropped.
    pub fn from_parts(bias: f64, weights: impl IntoIterator<Item = (u64, f64)>, updates: u64) -> Self {
        let weights = weights.into_iter().filter(|&(_, w)| w != 0.0).collect();
        Self { bias, weights, updates }
    }

    /// Rebuilds a regressor exactly as stored, zero entries included.
    pub(crate) fn from_stored(bias: f64, weights: Vec<(u64, f64)>, updates: u64) -> Self {
        Self { bias, weights: weights.into_iter().collect(), updates }
    }

    /// Stored weight entries, zeros included, sorted by index.
    pub(crate) fn stored_weights(&self) -> Vec<(u64, f64)> {
        let mut w: Vec<_> = self.weights.iter().map(|(&i, &v)| (i, v)).collect();
        w.sort_unstable_by_key(|&(i, _)| i);
        w
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn weight(&self, index: u64) -> f64 {
        self.weights.get(&index).copied().unwrap_or(0.0)
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// Non-zero weights sorted by index.
    pub fn sorted_weights(&self) -> Vec<(u64, f64)> {
        let mut w = self.stored_weights();
        w.retain(|&(_, v)| v != 0.0);
        w
    }

    /// Unclamped score `w . x`.
    pub fn raw_score(&self, x: &SparseVector) -> f64 {
        let bias = x.bias_index();
        x.entries()
            .iter()
            .map(|&(i, v)| if i == bias { self.bias * v } else { self.weight(i) * v })
            .sum()
    }

    pub fn predict(&self, x: &SparseVector) -> f64 {
        self.raw_score(x).clamp(0.0, 1.0)
    }

    /// One SGD step on `1/2 (predict(x) - target)^2` using the clamped prediction.
    pub fn update(&mut self, x: &SparseVector, target: f64, rate: &LearningRate) {
        debug_assert!((0.0..=1.0).contains(&target));
        let step = rate.at(self.updates) * (target - self.predict(x));
        self.updates += 1;
        if step == 0.0 {
            return;
        }
        let bias = x.bias_index();
        for &(i, v) in x.entries() {
            if i == bias {
                self.bias += step * v;
            } else {
                *self.weights.entry(i).or_insert(0.0) += step * v;
            }
        }
    }
}

/// Handle to a regressor slot in a [`RegressorBank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegressorId(pub u32);

/// Arena of regressors sharing one learning-rate schedule.
///
/// Counts every update it applies, which is how per-example training cost is
/// measured.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorBank {
    rate: LearningRate,
    slots: Vec<Regressor>,
    updates_applied: u64,
}

impl RegressorBank {
    pub fn new(rate: LearningRate) -> Self {
        Self { rate, slots: Vec::new(), updates_applied: 0 }
    }

    pub fn rate(&self) -> LearningRate {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn push(&mut self, regressor: Regressor) -> RegressorId {
        let id = RegressorId(self.slots.len() as u32);
        self.slots.push(regressor);
        id
    }

    pub fn push_fresh(&mut self) -> RegressorId {
        self.push(Regressor::new())
    }

    /// Copies the regressor at `id` (weights and update count) into a new slot.
    pub fn duplicate(&mut self, id: RegressorId) -> RegressorId {
        let copy = self.slots[id.0 as usize].clone();
        self.push(copy)
    }

    pub fn get(&self, id: RegressorId) -> &Regressor {
        &self.slots[id.0 as usize]
    }

    /// Replaces the regressor stored at `id`.
    pub fn set(&mut self, id: RegressorId, regressor: Regressor) {
        self.slots[id.0 as usize] = regressor;
    }

    pub fn predict(&self, id: RegressorId, x: &SparseVector) -> f64 {
        self.get(id).predict(x)
    }

    pub fn update(&mut self, id: RegressorId, x: &SparseVector, target: f64) {
        self.updates_applied += 1;
        self.slots[id.0 as usize].update(x, target, &self.rate);
    }

    /// Total regressor updates applied through this bank.
    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    pub fn iter(&self) -> impl Iterator<Item = &Regressor> {
        self.slots.iter()
    }

    pub(crate) fn from_parts(rate: LearningRate, slots: Vec<Regressor>, updates_applied: u64) -> Self {
        Self { rate, slots, updates_applied }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SparseVector;
    use proptest::prelude::*;

    const BITS: u8 = 8;

    fn vector(pairs: &[(u64, f64)]) -> SparseVector {
        SparseVector::from_pairs(pairs.iter().copied(), BITS).unwrap()
    }

    #[test]
    fn fresh_regressor_is_uninformative() {
        let r = Regressor::new();
        for x in [vector(&[]), vector(&[(3, 7.0)]), vector(&[(1, -2.0), (9, 0.25)])] {
            assert_eq!(r.predict(&x), 0.5);
        }
    }

    #[test]
    fn prediction_is_clamped() {
        let x = vector(&[(3, 1.0)]);
        let high = Regressor::from_parts(0.2, [(3, 3.0)], 0);
        assert!((high.raw_score(&x) - 3.2).abs() < 1e-12);
        assert_eq!(high.predict(&x), 1.0);
        let low = Regressor::from_parts(0.0, [(3, -0.4)], 0);
        assert!((low.raw_score(&x) + 0.4).abs() < 1e-12);
        assert_eq!(low.predict(&x), 0.0);
    }

    #[test]
    fn zero_gradient_leaves_weights_alone() {
        let x = vector(&[(3, 1.0), (5, 2.0)]);
        let mut r = Regressor::new();
        let before = r.sorted_weights();
        r.update(&x, 0.5, &LearningRate::default());
        assert_eq!(r.sorted_weights(), before);
        assert_eq!(r.bias(), INITIAL_BIAS);
        assert_eq!(r.update_count(), 1);
    }

    #[test]
    fn update_matches_the_sgd_rule() {
        let rate = LearningRate::new(0.2, 0.5).unwrap();
        let x = vector(&[(3, 1.0), (5, -2.0)]);
        let mut r = Regressor::from_parts(0.1, [(3, 0.2)], 4);
        let eta = 0.2 / (1.0 + 0.5 * 4.0);
        let p = r.predict(&x);
        r.update(&x, 1.0, &rate);
        assert!((r.weight(3) - (0.2 + eta * (1.0 - p))).abs() < 1e-15);
        assert!((r.weight(5) - (eta * (1.0 - p) * -2.0)).abs() < 1e-15);
        assert!((r.bias() - (0.1 + eta * (1.0 - p))).abs() < 1e-15);
        assert_eq!(r.update_count(), 5);
    }

    // With a fixed input of squared norm s and constant step eta, training on
    // target 1 gives p_t = 1 - (1 - p_0) (1 - eta s)^t while eta s < 1.
    #[test]
    fn repeated_positive_updates_follow_geometric_recurrence() {
        let rate = LearningRate::new(0.1, 0.0).unwrap();
        let x = vector(&[(2, 1.0)]);
        let s = x.squared_norm();
        let mut r = Regressor::new();
        let mut previous = r.predict(&x);
        for t in 1..=60 {
            r.update(&x, 1.0, &rate);
            let p = r.predict(&x);
            let closed_form = 1.0 - 0.5 * (1.0 - 0.1 * s).powi(t);
            assert!((p - closed_form).abs() < 1e-12, "step {t}: {p} vs {closed_form}");
            assert!(p > previous);
            previous = p;
        }
    }

    // Alternating targets 1, 0 with constant step settle on the two-cycle
    // {(1 - a) / (2 - a), 1 / (2 - a)} where a = eta * |x|^2: centred on 1/2
    // with half-width a / (2 (2 - a)), which is within eta / 2 for the bias-only input.
    #[test]
    fn alternating_targets_oscillate_around_one_half() {
        let eta = 0.1;
        let rate = LearningRate::new(eta, 0.0).unwrap();
        for x in [vector(&[]), vector(&[(2, 1.0)])] {
            let a = eta * x.squared_norm();
            let mut r = Regressor::from_parts(0.9, [(2, 0.3)], 0);
            for _ in 0..2000 {
                r.update(&x, 1.0, &rate);
                r.update(&x, 0.0, &rate);
            }
            let after_zero = r.predict(&x);
            r.update(&x, 1.0, &rate);
            let after_one = r.predict(&x);
            assert!((after_zero - (1.0 - a) / (2.0 - a)).abs() < 1e-9);
            assert!((after_one - 1.0 / (2.0 - a)).abs() < 1e-9);
            assert!(((after_zero + after_one) / 2.0 - 0.5).abs() < 1e-9);
            if x.squared_norm() == 1.0 {
                assert!((0.5 - after_zero).abs() <= eta / 2.0);
                assert!((after_one - 0.5).abs() <= eta / 2.0);
            }
        }
    }

    #[test]
    fn learning_rate_validation() {
        assert!(LearningRate::new(0.0, 0.0).is_err());
        assert!(LearningRate::new(0.1, -1.0).is_err());
        assert!(LearningRate::new(f64::NAN, 0.0).is_err());
        assert_eq!(LearningRate::new(1.0, 1.0).unwrap().at(3), 0.25);
    }

    #[test]
    fn bank_counts_and_duplicates() {
        let mut bank = RegressorBank::new(LearningRate::default());
        let a = bank.push_fresh();
        let x = vector(&[(1, 1.0)]);
        bank.update(a, &x, 1.0);
        let b = bank.duplicate(a);
        assert_eq!(bank.get(a), bank.get(b));
        bank.update(b, &x, 0.0);
        assert_ne!(bank.get(a), bank.get(b));
        assert_eq!(bank.updates_applied(), 2);
        assert_eq!(bank.len(), 2);
    }

    proptest! {
        #[test]
        fn prediction_stays_in_unit_interval(
            bias in -5.0f64..5.0,
            w in proptest::collection::vec((0u64..200, -5.0f64..5.0), 0..10),
            x in proptest::collection::vec((0u64..200, -5.0f64..5.0), 0..10),
            targets in proptest::collection::vec(any::<bool>(), 0..20),
        ) {
            let mut r = Regressor::from_parts(bias, w, 0);
            let x = vector(&x);
            let rate = LearningRate::new(0.7, 0.0).unwrap();
            for t in targets {
                let p = r.predict(&x);
                prop_assert!((0.0..=1.0).contains(&p));
                r.update(&x, if t { 1.0 } else { 0.0 }, &rate);
            }
            prop_assert!((0.0..=1.0).contains(&r.predict(&x)));
        }

        // For scores inside (0, 1) the applied increment equals the negative
        // gradient of 1/2 (w.x - t)^2 scaled by eta; compared against a central
        // finite difference of that loss in each touched coordinate.
        #[test]
        fn increment_matches_finite_difference_gradient(
            w in proptest::collection::vec((0u64..50, -0.05f64..0.05), 1..6),
            x in proptest::collection::vec((0u64..50, -1.0f64..1.0), 1..6),
            target in any::<bool>(),
        ) {
            let target = if target { 1.0 } else { 0.0 };
            let r0 = Regressor::from_parts(0.5, w, 0);
            let x = vector(&x);
            let raw = r0.raw_score(&x);
            prop_assume!(raw > 0.01 && raw < 0.99);
            let eta = 0.05;
            let mut r1 = r0.clone();
            r1.update(&x, target, &LearningRate::new(eta, 0.0).unwrap());
            let h = 1e-6;
            for &(i, _) in x.features() {
                let loss_at = |delta: f64| {
                    let mut shifted = r0.sorted_weights();
                    match shifted.iter_mut().find(|e| e.0 == i) {
                        Some(e) => e.1 += delta,
                        None => shifted.push((i, delta)),
                    }
                    let r = Regressor::from_parts(0.5, shifted, 0);
                    0.5 * (r.raw_score(&x) - target).powi(2)
                };
                let grad = (loss_at(h) - loss_at(-h)) / (2.0 * h);
                let applied = r1.weight(i) - r0.weight(i);
                prop_assert!((applied + eta * grad).abs() < 1e-6, "{applied} vs {}", -eta * grad);
            }
        }
    }
}
