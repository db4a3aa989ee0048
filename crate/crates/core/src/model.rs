//! A single type over every estimation method, so training, evaluation and
//! persistence treat them uniformly.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{OvaModel, TableModel};
use crate::cpecoc::KWayTree;
use crate::cpt::{objective, Growth, Tree};
use crate::error::{Error, Result};
use crate::eval::Learner;
use crate::features::{Example, FeatureHasher, LabelToken, SparseVector, DEFAULT_BITS, DEFAULT_HASH_SEED};
use crate::pecoc::{CodeMatrix, PecocModel};
use crate::regressor::LearningRate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Tree grown online with the objective rule.
    CptOnline,
    /// Tree grown online by fair coin flips.
    CptRandom,
    /// Tree grown online with `alpha = 1` (pure balancing).
    CptBalanced,
    /// Balanced tree fixed over the labels of the training set.
    CptStatic,
    /// Flat PECOC over a Hadamard code.
    Pecoc,
    /// k-way tree of PECOC nodes.
    Cpecoc,
    /// One-against-all regression.
    Ova,
    /// Empirical label frequency per exact feature vector.
    Table,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::CptOnline,
        Method::CptRandom,
        Method::CptBalanced,
        Method::CptStatic,
        Method::Pecoc,
        Method::Cpecoc,
        Method::Ova,
        Method::Table,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CptOnline => "cpt-online",
            Method::CptRandom => "cpt-random",
            Method::CptBalanced => "cpt-balanced",
            Method::CptStatic => "cpt-static",
            Method::Pecoc => "pecoc",
            Method::Cpecoc => "cpecoc",
            Method::Ova => "ova",
            Method::Table => "table",
        }
    }

    /// Methods whose label set is fixed from the training data before training.
    pub fn needs_label_set(self) -> bool {
        matches!(self, Method::CptStatic | Method::Pecoc | Method::Cpecoc)
    }

    pub(crate) fn tag(self) -> u8 {
        Self::ALL.iter().position(|m| *m == self).unwrap() as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

/// Everything needed to rebuild an untrained model; stored in model files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub method: Method,
    pub bits: u8,
    pub hash_seed: u64,
    /// Objective weight; only for `cpt-online`.
    pub alpha: Option<f64>,
    /// Branching factor; only for `cpecoc`.
    pub k: Option<usize>,
    /// Label capacity of a flat PECOC; defaults to the training label count.
    pub capacity: Option<usize>,
    pub rate: LearningRate,
    pub passes: u32,
    /// Seed of the random tree's coin flips.
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for `method`, with `alpha = 0.5` and `k = 4` where those apply.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            bits: DEFAULT_BITS,
            hash_seed: DEFAULT_HASH_SEED,
            alpha: (method == Method::CptOnline).then_some(0.5),
            k: (method == Method::Cpecoc).then_some(4),
            capacity: None,
            rate: LearningRate::default(),
            passes: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        FeatureHasher::new(self.bits, self.hash_seed)?;
        LearningRate::new(self.rate.eta0, self.rate.decay)?;
        let name = self.method;
        match (self.method, self.alpha) {
            (Method::CptOnline, Some(alpha)) => objective::check_alpha(alpha)?,
            (Method::CptOnline, None) => return Err(Error::config("cpt-online requires alpha")),
            (_, Some(_)) => return Err(Error::config(format!("alpha does not apply to {name}"))),
            _ => {}
        }
        match (self.method, self.k) {
            (Method::Cpecoc, Some(k)) if k >= 2 && k.is_power_of_two() => {}
            (Method::Cpecoc, Some(k)) => return Err(Error::config(format!("k must be a power of two >= 2, got {k}"))),
            (Method::Cpecoc, None) => return Err(Error::config("cpecoc requires k")),
            (_, Some(_)) => return Err(Error::config(format!("k does not apply to {name}"))),
            _ => {}
        }
        match (self.method, self.capacity) {
            (Method::Pecoc, Some(c)) if c < 2 => return Err(Error::config("capacity must be at least 2")),
            (Method::Pecoc, _) | (_, None) => {}
            (_, Some(_)) => return Err(Error::config(format!("capacity does not apply to {name}"))),
        }
        if self.passes == 0 {
            return Err(Error::config("passes must be at least 1"));
        }
        Ok(())
    }

    pub fn hasher(&self) -> Result<FeatureHasher> {
        FeatureHasher::new(self.bits, self.hash_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Tree(Tree),
    Pecoc(PecocModel),
    KWay(KWayTree),
    Ova(OvaModel),
    Table(TableModel),
}

/// A model of any method together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    estimator: Estimator,
}

/// Shape and cost figures printed after training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub method: Method,
    pub labels: usize,
    pub nodes: usize,
    pub regressors: usize,
    pub max_depth: Option<usize>,
    pub disagreements: Option<u64>,
    pub code_size: Option<usize>,
    pub regressor_updates: u64,
}

/// Labels in order of first appearance.
pub fn distinct_labels(examples: &[Example]) -> Vec<LabelToken> {
    let mut seen = HashSet::new();
    examples.iter().filter(|e| seen.insert(&e.y)).map(|e| e.y.clone()).collect()
}

impl Model {
    /// An untrained model. Methods with a fixed label set take it from `labels`.
    pub fn new(config: ModelConfig, labels: &[LabelToken]) -> Result<Self> {
        config.validate()?;
        let rate = config.rate;
        let estimator = match config.method {
            Method::CptOnline => Estimator::Tree(Tree::online(config.alpha.unwrap(), rate)?),
            Method::CptBalanced => Estimator::Tree(Tree::online(1.0, rate)?),
            Method::CptRandom => Estimator::Tree(Tree::new(Growth::Random { seed: config.seed }, rate)?),
            Method::CptStatic => Estimator::Tree(if labels.is_empty() { Tree::new(Growth::Fixed, rate)? } else { Tree::balanced(labels, rate)? }),
            Method::Pecoc => {
                let capacity = config.capacity.unwrap_or(labels.len()).max(2);
                let mut model = PecocModel::new(capacity, rate)?;
                for y in labels {
                    model.assign(y)?;
                }
                Estimator::Pecoc(model)
            }
            Method::Cpecoc => Estimator::KWay(KWayTree::build(labels, config.k.unwrap(), rate)?),
            Method::Ova => Estimator::Ova(OvaModel::new(rate)),
            Method::Table => Estimator::Table(TableModel::new()),
        };
        Ok(Self { config, estimator })
    }

    /// Builds a model over the labels of `examples` and trains it for the
    /// configured number of passes.
    pub fn fit(config: ModelConfig, examples: &[Example]) -> Result<Self> {
        let labels = if config.method.needs_label_set() { distinct_labels(examples) } else { Vec::new() };
        let mut model = Self::new(config, &labels)?;
        for _ in 0..config.passes {
            for e in examples {
                model.train(&e.x, &e.y)?;
            }
        }
        Ok(model)
    }

    pub(crate) fn from_parts(config: ModelConfig, estimator: Estimator) -> Self {
        Self { config, estimator }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn estimator_mut(&mut self) -> &mut Estimator {
        &mut self.estimator
    }

    /// Trains on one example; labels outside a fixed label set are an error.
    pub fn train(&mut self, x: &SparseVector, y: &LabelToken) -> Result<()> {
        match &mut self.estimator {
            Estimator::Tree(t) if t.growth() == Growth::Fixed && !t.contains(y) => Err(Error::UnknownLabel(y.to_string())),
            Estimator::Tree(t) => t.learn(x, y).map(drop),
            Estimator::Pecoc(m) => m.train(x, y),
            Estimator::KWay(m) => m.train(x, y),
            Estimator::Ova(m) => {
                m.train(x, y);
                Ok(())
            }
            Estimator::Table(m) => {
                m.train(x, y);
                Ok(())
            }
        }
    }

    /// Estimated `P(y | x)` in `[0, 1]`; zero for labels the model cannot represent.
    pub fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        match &self.estimator {
            Estimator::Tree(t) => t.predict_q(x, y),
            Estimator::Pecoc(m) => m.estimate(x, y),
            Estimator::KWay(m) => m.estimate(x, y),
            Estimator::Ova(m) => m.predict(x, y),
            Estimator::Table(m) => m.predict(x, y),
        }
    }

    /// Regressor updates applied so far (zero for the table).
    pub fn regressor_updates(&self) -> u64 {
        match &self.estimator {
            Estimator::Tree(t) => t.bank().updates_applied(),
            Estimator::Pecoc(m) => m.bank().updates_applied(),
            Estimator::KWay(m) => m.bank().updates_applied(),
            Estimator::Ova(m) => m.bank().updates_applied(),
            Estimator::Table(_) => 0,
        }
    }

    pub fn summary(&self) -> ModelSummary {
        let mut s = ModelSummary {
            method: self.method(),
            labels: 0,
            nodes: 0,
            regressors: 0,
            max_depth: None,
            disagreements: None,
            code_size: None,
            regressor_updates: self.regressor_updates(),
        };
        match &self.estimator {
            Estimator::Tree(t) => {
                s.labels = t.label_count();
                s.nodes = t.node_count();
                s.regressors = t.bank().len();
                s.max_depth = Some(t.depth_stats().max_depth);
                s.disagreements = Some(t.disagreements());
            }
            Estimator::Pecoc(m) => {
                s.labels = m.labels().len();
                s.regressors = m.bank().len();
                s.code_size = Some(m.code().size());
            }
            Estimator::KWay(m) => {
                s.labels = m.labels().len();
                s.nodes = m.internal_nodes() + m.leaf_slots();
                s.regressors = m.bank().len();
                s.max_depth = Some(m.levels() as usize);
                s.code_size = Some(m.k());
            }
            Estimator::Ova(m) => {
                s.labels = m.label_count();
                s.regressors = m.bank().len();
            }
            Estimator::Table(m) => {
                s.labels = m.sorted_counts().iter().map(|(_, y, _)| y).collect::<HashSet<_>>().len();
                s.nodes = m.context_count();
            }
        }
        s
    }

    /// The PECOC code, for the flat method.
    pub fn code(&self) -> Option<CodeMatrix> {
        match &self.estimator {
            Estimator::Pecoc(m) => Some(*m.code()),
            _ => None,
        }
    }
}

impl Learner for Model {
    fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        Model::predict(self, x, y)
    }

    /// Like [`Model::train`], but labels a fixed-label model cannot take are
    /// skipped (returning `false`) instead of failing.
    fn learn(&mut self, x: &SparseVector, y: &LabelToken) -> Result<bool> {
        let representable = match &self.estimator {
            Estimator::Tree(t) => t.growth() != Growth::Fixed || t.contains(y),
            Estimator::Pecoc(m) => m.column(y).is_some() || m.labels().len() < m.capacity(),
            Estimator::KWay(m) => m.slot(y).is_some(),
            Estimator::Ova(_) | Estimator::Table(_) => true,
        };
        if representable {
            self.train(x, y)?;
        }
        Ok(representable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(lines: &[&str]) -> Vec<Example> {
        let h = FeatureHasher::with_bits(12).unwrap();
        lines.iter().map(|l| h.parse_line(l, 1).unwrap()).collect()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(Method::from_tag(m.tag()), Some(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("cpt".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        for m in Method::ALL {
            ModelConfig::new(m).validate().unwrap();
        }
        let mut c = ModelConfig::new(Method::CptOnline);
        c.alpha = None;
        assert!(c.validate().is_err());
        c.alpha = Some(1.5);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Method::Ova);
        c.alpha = Some(0.5);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Method::Cpecoc);
        c.k = Some(3);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Method::Table);
        c.bits = 40;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Method::Table);
        c.passes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn balanced_online_tree_over_eight_labels_has_depth_three() {
        let lines: Vec<String> = (0..8).map(|i| format!("l{i} f{i}")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let mut c = ModelConfig::new(Method::CptOnline);
        c.alpha = Some(1.0);
        let model = Model::fit(c, &examples(&refs)).unwrap();
        assert_eq!(model.summary().max_depth, Some(3));
        let balanced = Model::fit(ModelConfig::new(Method::CptBalanced), &examples(&refs)).unwrap();
        assert_eq!(balanced.summary().max_depth, Some(3));
    }

    #[test]
    fn pecoc_pads_to_a_power_of_two() {
        let ex = examples(&["a f", "b f", "c f", "d f", "e f"]);
        let model = Model::fit(ModelConfig::new(Method::Pecoc), &ex).unwrap();
        assert_eq!(model.summary().code_size, Some(8));
        let mut small = ModelConfig::new(Method::Pecoc);
        small.capacity = Some(4);
        assert!(matches!(Model::fit(small, &ex), Err(Error::Capacity { capacity: 4, .. })));
    }

    #[test]
    fn every_method_trains_and_predicts_in_range() {
        let ex = examples(&["a f1", "b f2", "a f1 f3", "c f2", "b f1", "a f1"]);
        for m in Method::ALL {
            let model = Model::fit(ModelConfig::new(m), &ex).unwrap();
            for e in &ex {
                let p = model.predict(&e.x, &e.y);
                assert!((0.0..=1.0).contains(&p), "{m}: {p}");
            }
            assert_eq!(model.predict(&ex[0].x, &LabelToken::new("zz").unwrap()), 0.0);
            assert_eq!(model.summary().labels, 3, "{m}");
        }
    }

    #[test]
    fn fixed_label_models_skip_unseen_labels_when_learning() {
        let ex = examples(&["a f1", "b f2"]);
        let unseen = examples(&["c f1"]).remove(0);
        for m in [Method::CptStatic, Method::Cpecoc] {
            let mut model = Model::fit(ModelConfig::new(m), &ex).unwrap();
            let before = model.clone();
            assert!(!Learner::learn(&mut model, &unseen.x, &unseen.y).unwrap());
            assert_eq!(model, before);
            assert!(model.train(&unseen.x, &unseen.y).is_err());
        }
        // A flat code of size 2 is full after two labels.
        let mut pecoc = Model::fit(ModelConfig::new(Method::Pecoc), &ex).unwrap();
        assert!(!Learner::learn(&mut pecoc, &unseen.x, &unseen.y).unwrap());
    }

    #[test]
    fn update_counts_contrast_tree_and_ova() {
        let lines: Vec<String> = (0..64).map(|i| format!("l{i} f{}", i % 7)).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let ex = examples(&refs);
        let mut ova = Model::fit(ModelConfig::new(Method::Ova), &ex).unwrap();
        let mut tree = Model::fit(ModelConfig::new(Method::CptBalanced), &ex).unwrap();
        let (o, t) = (ova.regressor_updates(), tree.regressor_updates());
        ova.train(&ex[3].x, &ex[3].y).unwrap();
        tree.train(&ex[3].x, &ex[3].y).unwrap();
        assert_eq!(ova.regressor_updates() - o, 64);
        // depth 6 path plus the leaf regressor
        assert_eq!(tree.regressor_updates() - t, 7);
    }
}
