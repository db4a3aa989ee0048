//! Randomized suites that check every bound on many generated instances.
//!
//! Each suite returns a [`SuiteResult`] counting trials and violations; a
//! violation of a proven bound means an implementation bug.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cpecoc::{check_composed_bound, KWayTree};
use crate::cpt::bounds::{check_estimate_bounds, total_depth_bound};
use crate::cpt::objective::{depth_bound, forced_left, forced_right, kappa, side_within_bound, Bound};
use crate::cpt::{Shape, Tree};
use crate::error::Result;
use crate::features::{LabelToken, SparseVector};
use crate::pecoc::{check_pecoc_regret, code_estimate, subset_probabilities, CodeMatrix, PecocModel};
use crate::regressor::{LearningRate, Regressor, RegressorId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: u64,
    pub violations: u64,
    /// Largest `lhs / bound` seen (0 when every bound was 0).
    pub worst_ratio: f64,
    pub seconds: f64,
    /// Informational findings that are not violations.
    pub notes: Vec<String>,
}

impl SuiteResult {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), trials: 0, violations: 0, worst_ratio: 0.0, seconds: 0.0, notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, holds: bool, lhs: f64, bound: f64) {
        self.trials += 1;
        self.violations += !holds as u64;
        if bound > 0.0 {
            self.worst_ratio = self.worst_ratio.max(lhs / bound);
        }
    }
}

fn unit_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen(),
        })
        .collect()
}

/// Random distribution over `n` outcomes with a random concentration, and
/// some exact zeros.
pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let power = [0.5, 1.0, 3.0, 8.0][rng.gen_range(0..4)];
    let mut raw: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen::<f64>().powf(power) }).collect();
    if raw.iter().all(|v| *v == 0.0) {
        let i = rng.gen_range(0..n);
        raw[i] = 1.0;
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Truth plus noise of a random scale, clamped, or pure noise.
fn noisy(rng: &mut ChaCha8Rng, truth: &[f64]) -> Vec<f64> {
    let scale = [0.0, 0.01, 0.1, 0.5][rng.gen_range(0..4)];
    if rng.gen_bool(0.2) {
        return truth.iter().map(|_| rng.gen()).collect();
    }
    truth.iter().map(|t| (t + scale * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0)).collect()
}

/// Path-product inequalities on random `(p, q)` pairs of length `1..=max_depth`.
pub fn estimate_bounds_suite(trials: u64, max_depth: usize, seed: u64) -> Result<SuiteResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = SuiteResult::new("path product (slab, sum and squared forms)");
    for _ in 0..trials {
        let d = rng.gen_range(1..=max_depth);
        let p = unit_values(&mut rng, d);
        let q = if rng.gen_bool(0.5) { unit_values(&mut rng, d) } else { noisy(&mut rng, &p) };
        let c = check_estimate_bounds(&p, &q)?;
        result.record(c.all_hold, c.lhs * c.lhs, c.thm1_bound);
    }
    result.seconds = started.elapsed().as_secs_f64();
    Ok(result)
}

/// PECOC regret bound on random distributions and row outputs.
pub fn pecoc_suite(trials_per_n: u64, sizes: &[usize], seed: u64) -> Result<SuiteResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = SuiteResult::new(format!("PECOC regret, n in {sizes:?}"));
    for &n in sizes {
        let code = CodeMatrix::for_labels(n)?;
        for _ in 0..trials_per_n {
            let mut dist = random_distribution(&mut rng, n);
            dist.resize(code.size(), 0.0);
            let truth = subset_probabilities(&code, &dist);
            let outputs = noisy(&mut rng, &truth[1..]);
            let c = check_pecoc_regret(&dist, &outputs, rng.gen_range(0..n))?;
            result.record(c.holds, c.lhs, c.bound);
        }
    }
    // With two labels and one erring row the bound is tight.
    if !sizes.is_empty() && trials_per_n > 0 {
        let c = check_pecoc_regret(&[0.3, 0.7], &[0.45], 0)?;
        let tight = (c.lhs - c.bound).abs() < 1e-15;
        result.record(tight && c.holds, c.lhs, c.bound);
        result.notes.push(format!("n=2 single-error case: lhs {} vs bound {}", c.lhs, c.bound));
    }
    result.seconds = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Composed k-way bound at `n` labels for each `k`.
pub fn composed_suite(trials: u64, n: usize, ks: &[usize], seed: u64) -> Result<SuiteResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = SuiteResult::new(format!("conditional PECOC, n={n}, k in {ks:?}"));
    let mut clamped = 0u64;
    for &k in ks {
        let code = CodeMatrix::with_size(k)?;
        let levels = (n.trailing_zeros() / k.trailing_zeros()) as usize;
        for _ in 0..trials {
            let dist = random_distribution(&mut rng, n);
            let y = rng.gen_range(0..n);
            let mut outputs = Vec::with_capacity(levels);
            for level in 0..levels {
                let span = k.pow((levels - level) as u32);
                let start = (y / span) * span;
                let mass: f64 = dist[start..start + span].iter().sum();
                let child = span / k;
                let conditional: Vec<f64> = (0..k)
                    .map(|c| if mass > 0.0 { dist[start + c * child..start + (c + 1) * child].iter().sum::<f64>() / mass } else { 1.0 / k as f64 })
                    .collect();
                outputs.push(noisy(&mut rng, &subset_probabilities(&code, &conditional)[1..]));
            }
            let c = check_composed_bound(&dist, k, &outputs, y)?;
            clamped += (c.clamped_nodes > 0) as u64;
            result.record(c.holds, c.lhs, c.bound);
        }
    }
    result.notes.push(format!("{clamped} instances clamped a node estimate into [0, 1]"));
    result.seconds = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Largest differences between the k-way tree at its two extremes and the
/// models it generalizes, under shared random regressor state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointCheck {
    /// `k = n` against flat PECOC.
    pub flat_max_diff: f64,
    /// `k = 2` against the binary tree.
    pub binary_max_diff: f64,
}

fn random_regressor(rng: &mut ChaCha8Rng, features: u64) -> Regressor {
    let weights: Vec<(u64, f64)> = (0..features).map(|i| (i, rng.gen_range(-0.6..0.6))).collect();
    Regressor::from_parts(rng.gen_range(-0.2..1.2), weights, 0)
}

fn random_vector(rng: &mut ChaCha8Rng, features: u64, bits: u8) -> Result<SparseVector> {
    let mut pairs = Vec::new();
    for i in 0..features {
        if rng.gen_bool(0.6) {
            pairs.push((i, rng.gen_range(0.0..1.0)));
        }
    }
    SparseVector::from_pairs(pairs, bits)
}

/// Compares the k-way tree with flat PECOC (`k = n`) and with a balanced
/// binary tree (`k = 2`, regressors `r = 1 - f`) over random states.
pub fn endpoint_suite(trials: u64, n: usize, seed: u64) -> Result<EndpointCheck> {
    const FEATURES: u64 = 6;
    const BITS: u8 = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<LabelToken> = (0..n).map(|i| LabelToken::new(format!("y{i}")).expect("valid label")).collect();
    let rate = LearningRate::default();
    let mut out = EndpointCheck { flat_max_diff: 0.0, binary_max_diff: 0.0 };
    for _ in 0..trials {
        let mut flat = PecocModel::with_labels(&labels, rate)?;
        let mut wide = KWayTree::build(&labels, n, rate)?;
        for i in 0..n as u32 - 1 {
            let r = random_regressor(&mut rng, FEATURES);
            flat.bank_mut().set(RegressorId(i), r.clone());
            wide.bank_mut().set(RegressorId(i), r);
        }
        let mut tree = Tree::balanced(&labels, rate)?;
        let mut binary = KWayTree::build(&labels, 2, rate)?;
        let regressors: Vec<RegressorId> = tree.nodes().map(|(_, node)| node.regressor).collect();
        for id in regressors {
            let r = random_regressor(&mut rng, FEATURES);
            tree.bank_mut().set(id, r);
        }
        for (slot, y) in labels.iter().enumerate() {
            for (t, k) in tree.path(y)?.iter().zip(binary.path(slot)) {
                let f = tree.bank().get(tree.node(t.node).regressor);
                let complement = Regressor::from_parts(1.0 - f.bias(), f.sorted_weights().into_iter().map(|(i, w)| (i, -w)), 0);
                let first = binary.first_regressor(k.node);
                binary.bank_mut().set(RegressorId(first), complement);
            }
        }
        let x = random_vector(&mut rng, FEATURES, BITS)?;
        for (slot, y) in labels.iter().enumerate() {
            let flat_estimate = flat.estimate(&x, y);
            out.flat_max_diff = out.flat_max_diff.max((wide.estimate(&x, y) - flat_estimate).abs());
            out.binary_max_diff = out.binary_max_diff.max((binary.estimate(&x, y) - tree.predict_q(&x, y)).abs());
            // The k = n estimate is one node's PECOC estimate, clamped.
            let raw = code_estimate(flat.code(), slot, |row| flat.bank().predict(RegressorId(row as u32 - 1), &x));
            out.flat_max_diff = out.flat_max_diff.max((raw.clamp(0.0, 1.0) - flat_estimate).abs());
        }
    }
    Ok(out)
}

/// How the feature vectors of an insertion stream are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    /// The same vector for every label, so regressors cannot separate labels.
    Constant,
    /// A few random features per label.
    Random,
}

/// Findings from streaming distinct labels into an online tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRun {
    pub alpha: f64,
    pub kind: StreamKind,
    pub labels: usize,
    pub kappa: f64,
    /// Routing decisions made where Claim 1 forces a side, and how many went the other way.
    pub forced_decisions: u64,
    pub forced_violations: u64,
    /// Node sides checked after insertions (only nodes whose counts changed).
    pub side_checks: u64,
    /// Sides with `side > kappa N + 1 - kappa`.
    pub inclusive_violations: u64,
    /// Sides with `side >= kappa N + 1 - kappa` (includes exact equality).
    pub strict_violations: u64,
    pub max_depth: usize,
    pub depth_bound: f64,
    pub total_leaf_depth: u64,
    pub total_depth_bound: f64,
    pub disagreements: u64,
    pub seconds: f64,
}

impl DepthRun {
    /// Claim 1, Claim 2 (inclusive), the depth bound and disagreement accounting.
    pub fn provable_properties_hold(&self) -> bool {
        self.forced_violations == 0
            && self.inclusive_violations == 0
            && self.max_depth as f64 <= self.depth_bound + 1e-9
            && self.disagreements <= self.total_leaf_depth
    }
}

/// Inserts `labels` distinct labels into an online tree with the objective
/// rule, checking the balance claims at every node touched by each insertion.
pub fn depth_run(labels: usize, alpha: f64, kind: StreamKind, seed: u64) -> Result<DepthRun> {
    const BITS: u8 = 16;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = Tree::online(alpha, LearningRate::default())?;
    let constant = SparseVector::from_pairs([(1, 1.0), (2, 0.5)], BITS)?;
    let k = kappa(alpha)?;
    let mut run = DepthRun {
        alpha,
        kind,
        labels,
        kappa: k,
        forced_decisions: 0,
        forced_violations: 0,
        side_checks: 0,
        inclusive_violations: 0,
        strict_violations: 0,
        max_depth: 0,
        depth_bound: depth_bound(labels, alpha)?,
        total_leaf_depth: 0,
        total_depth_bound: 0.0,
        disagreements: 0,
        seconds: 0.0,
    };
    for i in 0..labels {
        let x = match kind {
            StreamKind::Constant => constant.clone(),
            StreamKind::Random => SparseVector::from_pairs((0..4).map(|_| (rng.gen_range(0..1u64 << 12), 1.0)), BITS)?,
        };
        let y = LabelToken::new(format!("y{i}"))?;
        let trace = tree.insert_new(&x, &y)?;
        for step in &trace.steps {
            let (l, r) = (step.left_leaves, step.right_leaves);
            if forced_left(l, r, alpha) {
                run.forced_decisions += 1;
                run.forced_violations += (step.direction != crate::cpt::Direction::Left) as u64;
            } else if forced_right(l, r, alpha) {
                run.forced_decisions += 1;
                run.forced_violations += (step.direction != crate::cpt::Direction::Right) as u64;
            }
        }
        // Only the nodes passed (and the freshly split one) changed counts.
        let touched = trace.steps.iter().map(|s| s.node).chain(trace.split);
        for id in touched {
            let node = tree.node(id);
            let total = node.left_leaves + node.right_leaves;
            for side in [node.left_leaves, node.right_leaves] {
                run.side_checks += 1;
                run.inclusive_violations += !side_within_bound(side, total, alpha, Bound::Inclusive) as u64;
                run.strict_violations += !side_within_bound(side, total, alpha, Bound::Strict) as u64;
            }
        }
    }
    let stats = tree.depth_stats();
    run.max_depth = stats.max_depth;
    run.total_leaf_depth = stats.total_leaf_depth;
    run.disagreements = tree.disagreements();
    run.total_depth_bound = if k < 1.0 { total_depth_bound(labels, k)? } else { f64::INFINITY };
    run.seconds = started.elapsed().as_secs_f64();
    Ok(run)
}

/// The most lopsided shape whose nodes all keep `L, R <= kappa N`: the left
/// side takes `floor(kappa N)` leaves.
pub fn lopsided_shape(labels: &[LabelToken], kappa: f64) -> Result<Shape> {
    match labels {
        [] => Err(crate::error::Error::precondition("a tree needs at least one label")),
        [one] => Ok(Shape::Leaf(one.clone())),
        _ => {
            let n = labels.len();
            let left = ((kappa * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
            Ok(Shape::split(lopsided_shape(&labels[..left], kappa)?, lopsided_shape(&labels[left..], kappa)?))
        }
    }
}

/// Total leaf depth of trees built by [`lopsided_shape`] against `n ln n / H(kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TotalDepthCheck {
    pub n: usize,
    pub kappa: f64,
    /// Whether every node satisfies `L, R <= kappa N`.
    pub balanced: bool,
    pub total_leaf_depth: u64,
    pub bound: f64,
}

pub fn total_depth_check(n: usize, kappa: f64) -> Result<TotalDepthCheck> {
    let labels: Vec<LabelToken> = (0..n).map(|i| LabelToken::new(format!("y{i}"))).collect::<Result<_>>()?;
    let tree = Tree::from_shape(&lopsided_shape(&labels, kappa)?, LearningRate::default())?;
    let stats = tree.depth_stats();
    let balanced = stats.nodes.iter().all(|c| {
        let cap = kappa * c.total() as f64 + 1e-9;
        c.left as f64 <= cap && c.right as f64 <= cap
    });
    Ok(TotalDepthCheck { n, kappa, balanced, total_leaf_depth: stats.total_leaf_depth, bound: total_depth_bound(n, kappa)? })
}

/// Settings for [`run_all`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Instances per randomized bound suite (per size or `k` where applicable).
    pub trials: u64,
    /// Distinct labels streamed into each online tree.
    pub depth_labels: usize,
    pub alphas: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: 0, trials: 10_000, depth_labels: 10_000, alphas: vec![0.1, 0.25, 0.5, 0.75, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

/// Runs every suite. Zero trials gives a vacuous pass with a warning.
pub fn run_all(config: &VerifyConfig) -> Result<VerifyReport> {
    let mut warnings = Vec::new();
    if config.trials == 0 {
        warnings.push("trials = 0: randomized bound suites ran no instances".to_string());
    }
    let seed = config.seed;
    let mut suites = vec![
        estimate_bounds_suite(config.trials, 20, seed)?,
        pecoc_suite(config.trials, &[2, 4, 8, 16], seed.wrapping_add(1))?,
        composed_suite(config.trials, 16, &[2, 4, 16], seed.wrapping_add(2))?,
    ];

    let mut endpoints = SuiteResult::new("conditional PECOC endpoints (k = n, k = 2)");
    let endpoint_trials = config.trials.min(1_000);
    if endpoint_trials > 0 {
        let started = Instant::now();
        let e = endpoint_suite(endpoint_trials, 16, seed.wrapping_add(3))?;
        endpoints.trials = endpoint_trials;
        endpoints.violations = (e.flat_max_diff > 1e-12) as u64 + (e.binary_max_diff > 1e-12) as u64;
        endpoints.notes.push(format!("max |k=n - flat| = {:e}, max |k=2 - tree| = {:e}", e.flat_max_diff, e.binary_max_diff));
        endpoints.seconds = started.elapsed().as_secs_f64();
    }
    suites.push(endpoints);

    let mut depth = SuiteResult::new(format!("online tree balance and depth, {} labels", config.depth_labels));
    let started = Instant::now();
    if config.depth_labels == 0 {
        warnings.push("depth_labels = 0: no online trees were built".to_string());
    }
    for &alpha in &config.alphas {
        for kind in [StreamKind::Constant, StreamKind::Random] {
            if config.depth_labels == 0 {
                continue;
            }
            let run = depth_run(config.depth_labels, alpha, kind, seed)?;
            depth.record(run.provable_properties_hold(), run.max_depth as f64, run.depth_bound);
            depth.notes.push(format!(
                "alpha {alpha} {kind:?}: max depth {} (bound {:.2}), disagreements {} <= total depth {}, forced {} / violated {}, sides at exactly the balance bound {}",
                run.max_depth, run.depth_bound, run.disagreements, run.total_leaf_depth, run.forced_decisions, run.forced_violations, run.strict_violations - run.inclusive_violations
            ));
        }
    }
    depth.seconds = started.elapsed().as_secs_f64();
    suites.push(depth);

    let mut total = SuiteResult::new("total leaf depth of kappa-balanced trees");
    let started = Instant::now();
    if config.trials > 0 {
        for kappa in [0.5, 2.0 / 3.0, 0.9] {
            for bits in [4, 8, 12] {
                let c = total_depth_check(1 << bits, kappa)?;
                total.record(c.balanced && c.total_leaf_depth as f64 <= c.bound, c.total_leaf_depth as f64, c.bound);
            }
        }
    }
    total.seconds = started.elapsed().as_secs_f64();
    suites.push(total);
    Ok(VerifyReport { suites, warnings })
}
