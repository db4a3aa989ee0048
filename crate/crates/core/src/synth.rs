//! Synthetic data with known conditional label distributions.
//!
//! A finite set of contexts (think web pages) each mixes a few topics. Every
//! topic owns a disjoint block of labels with Zipf-distributed frequencies,
//! and a context's label distribution is the mixture of its topics'
//! distributions. An example draws a context, a label from that context's
//! distribution, and an observation made of a random subset of the context's
//! words plus a few noise words. Because the label depends on the observation
//! only through its context, `P(y | x)` is known exactly for every example,
//! which makes the true regret of any estimator computable.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Example, FeatureHasher, LabelToken, SparseVector};

/// How each context's label distribution is shaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelShape {
    /// Each context always shows one label.
    OneHot,
    /// Every context is uniform over all labels.
    Uniform,
    /// Mixture of per-topic Zipf distributions over disjoint label blocks.
    Topical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub contexts: usize,
    pub labels: usize,
    pub examples: usize,
    /// Trailing share of the stream written as the test split.
    pub test_fraction: f64,
    pub shape: LabelShape,
    pub topics: usize,
    /// Largest number of topics mixed into one context.
    pub max_topics_per_context: usize,
    pub words_per_topic: usize,
    pub words_per_context: usize,
    /// Probability that each context word appears in an example.
    pub keep_probability: f64,
    pub noise_vocabulary: usize,
    pub noise_words: usize,
    /// Zipf exponent of label frequencies within a topic.
    pub label_zipf: f64,
    /// Zipf exponent of context frequencies; 0 makes contexts equally likely.
    pub context_zipf: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            contexts: 1_000,
            labels: 10_000,
            examples: 1_000_000,
            test_fraction: 0.1,
            shape: LabelShape::Topical,
            topics: 50,
            max_topics_per_context: 3,
            words_per_topic: 40,
            words_per_context: 12,
            keep_probability: 0.6,
            noise_vocabulary: 10_000,
            noise_words: 2,
            label_zipf: 1.0,
            context_zipf: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if self.contexts == 0 || self.labels == 0 {
            return fail("contexts and labels must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail("test fraction must lie in [0, 1)");
        }
        if self.shape == LabelShape::Topical {
            if self.topics == 0 || self.topics > self.labels {
                return fail("topics must be between 1 and the label count");
            }
            if self.max_topics_per_context == 0 || self.max_topics_per_context > self.topics {
                return fail("topics per context must be between 1 and the topic count");
            }
            if self.words_per_topic == 0 {
                return fail("each topic needs at least one word");
            }
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return fail("keep probability must lie in (0, 1]");
        }
        if self.noise_words > 0 && self.noise_vocabulary < self.noise_words {
            return fail("noise vocabulary must hold at least the noise words per example");
        }
        if !(self.label_zipf >= 0.0 && self.context_zipf >= 0.0) {
            return fail("Zipf exponents must be non-negative");
        }
        Ok(())
    }
}

/// Ground truth for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTruth {
    pub id: u32,
    /// `P(context)`.
    pub weight: f64,
    /// Words of the context; every example carries a subset plus the
    /// context token itself.
    pub words: Vec<String>,
    /// `(label, P(label | context))`, most likely first; zero-probability
    /// labels are omitted.
    pub labels: Vec<(LabelToken, f64)>,
}

impl ContextTruth {
    pub fn token(&self) -> String {
        context_token(self.id)
    }

    /// `sum_y P(y|c) (1 - P(y|c))^2`, the least observable loss at this context.
    pub fn optimal_loss(&self) -> f64 {
        self.labels.iter().map(|(_, p)| p * (1.0 - p).powi(2)).sum()
    }
}

fn context_token(id: u32) -> String {
    format!("ctx{id}")
}

fn label_token(i: usize) -> LabelToken {
    LabelToken::new(format!("y{i}")).expect("generated labels are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub contexts: Vec<ContextTruth>,
}

impl GroundTruth {
    /// Expected least observable loss over the context distribution.
    pub fn optimal_loss(&self) -> f64 {
        self.contexts.iter().map(|c| c.weight * c.optimal_loss()).sum()
    }

    /// Writes a summary line followed by one line per context.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let summary = serde_json::json!({ "kind": "summary", "optimal_loss": self.optimal_loss(), "config": self.config });
        writeln!(out, "{summary}")?;
        for c in &self.contexts {
            let mut v = serde_json::to_value(c).map_err(|e| Error::Format(e.to_string()))?;
            v["kind"] = "context".into();
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut config = None;
        let mut contexts = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let parse_err = |e: serde_json::Error| Error::Parse { line: i + 1, message: e.to_string() };
            let v: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
            match v["kind"].as_str() {
                Some("summary") => config = Some(serde_json::from_value(v["config"].clone()).map_err(parse_err)?),
                Some("context") => contexts.push(serde_json::from_value(v).map_err(parse_err)?),
                _ => return Err(Error::Parse { line: i + 1, message: "record has no known kind".into() }),
            }
        }
        let config = config.ok_or_else(|| Error::Format("ground truth has no summary line".into()))?;
        Ok(Self { config, contexts })
    }
}

/// One generated example with the context it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub context: u32,
    /// The example in the text input format.
    pub line: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub truth: GroundTruth,
    pub train: Vec<SynthExample>,
    pub test: Vec<SynthExample>,
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn build_contexts(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<ContextTruth> {
    let weights = zipf_weights(config.contexts, config.context_zipf);
    // Topic t owns labels t, t + T, t + 2T, ...; rank within the topic is i / T.
    let topic_labels: Vec<Vec<usize>> = (0..config.topics.max(1)).map(|t| (t..config.labels).step_by(config.topics.max(1)).collect()).collect();
    let topic_dists: Vec<Vec<f64>> = topic_labels.iter().map(|ls| zipf_weights(ls.len(), config.label_zipf)).collect();

    (0..config.contexts)
        .map(|c| {
            let mut words = Vec::new();
            let labels: Vec<(LabelToken, f64)> = match config.shape {
                LabelShape::OneHot => vec![(label_token(rng.gen_range(0..config.labels)), 1.0)],
                LabelShape::Uniform => (0..config.labels).map(|i| (label_token(i), 1.0 / config.labels as f64)).collect(),
                LabelShape::Topical => {
                    let count = rng.gen_range(1..=config.max_topics_per_context);
                    let topics = sample(rng, config.topics, count).into_vec();
                    let raw: Vec<f64> = topics.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let total: f64 = raw.iter().sum();
                    let mix: Vec<f64> = raw.iter().map(|w| w / total).collect();
                    let pick = WeightedIndex::new(&mix).expect("mixture weights are positive");
                    for _ in 0..config.words_per_context {
                        let t = topics[pick.sample(rng)];
                        words.push(format!("t{t}w{}", rng.gen_range(0..config.words_per_topic)));
                    }
                    let mut probs: HashMap<usize, f64> = HashMap::new();
                    for (&t, &m) in topics.iter().zip(&mix) {
                        for (&label, &p) in topic_labels[t].iter().zip(&topic_dists[t]) {
                            *probs.entry(label).or_insert(0.0) += m * p;
                        }
                    }
                    let mut labels: Vec<_> = probs.into_iter().collect();
                    labels.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    labels.into_iter().map(|(i, p)| (label_token(i), p)).collect()
                }
            };
            words.sort();
            words.dedup();
            ContextTruth { id: c as u32, weight: weights[c], words, labels }
        })
        .collect()
}

/// Generates the dataset described by `config`; identical configs give
/// identical datasets.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let contexts = build_contexts(config, &mut rng);
    let context_pick = WeightedIndex::new(contexts.iter().map(|c| c.weight)).map_err(|e| Error::config(e.to_string()))?;
    let label_picks: Vec<WeightedIndex<f64>> = contexts
        .iter()
        .map(|c| WeightedIndex::new(c.labels.iter().map(|(_, p)| *p)).expect("context distributions are positive"))
        .collect();

    let test_start = config.examples - (config.examples as f64 * config.test_fraction).round() as usize;
    let mut train = Vec::with_capacity(test_start);
    let mut test = Vec::with_capacity(config.examples - test_start);
    for i in 0..config.examples {
        let c = context_pick.sample(&mut rng);
        let context = &contexts[c];
        let (label, _) = &context.labels[label_picks[c].sample(&mut rng)];
        let mut line = format!("{label} {}", context.token());
        for word in &context.words {
            if rng.gen::<f64>() < config.keep_probability {
                line.push(' ');
                line.push_str(word);
            }
        }
        if config.noise_words > 0 {
            for n in sample(&mut rng, config.noise_vocabulary, config.noise_words).iter() {
                line.push_str(&format!(" n{n}"));
            }
        }
        let record = SynthExample { context: c as u32, line };
        if i < test_start { train.push(record) } else { test.push(record) }
    }
    Ok(Dataset { truth: GroundTruth { config: config.clone(), contexts }, train, test })
}

impl Dataset {
    /// Writes `train.txt`, `test.txt`, `test.contexts` (one context id per
    /// test line) and `truth.jsonl` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, split) in [("train.txt", &self.train), ("test.txt", &self.test)] {
            let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
            for e in split {
                writeln!(out, "{}", e.line)?;
            }
            out.flush()?;
        }
        let mut out = BufWriter::new(fs::File::create(dir.join("test.contexts"))?);
        for e in &self.test {
            writeln!(out, "{}", e.context)?;
        }
        out.flush()?;
        let mut out = BufWriter::new(fs::File::create(dir.join("truth.jsonl"))?);
        self.truth.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Parses generated examples with `hasher`.
pub fn to_examples(records: &[SynthExample], hasher: &FeatureHasher) -> Result<Vec<Example>> {
    records.iter().enumerate().map(|(i, r)| hasher.parse_line(&r.line, i + 1)).collect()
}

/// Mean of `sum_y P(y|c) (P(y|c) - Q(y|x))^2` over the given observations,
/// i.e. the squared loss of `Q` against the true conditional, estimated over
/// the observations' distribution. Labels outside a context's support have
/// `P = 0` and contribute nothing.
pub fn regret(truth: &GroundTruth, observations: &[(u32, SparseVector)], q: impl Fn(&SparseVector, &LabelToken) -> f64) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::precondition("regret needs at least one observation"));
    }
    let mut total = 0.0;
    for (c, x) in observations {
        let context = truth.contexts.get(*c as usize).ok_or_else(|| Error::precondition(format!("unknown context {c}")))?;
        total += context.labels.iter().map(|(y, p)| p * (p - q(x, y)).powi(2)).sum::<f64>();
    }
    Ok(total / observations.len() as f64)
}
