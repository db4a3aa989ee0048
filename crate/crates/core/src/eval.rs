//! Progressive validation, Hoeffding intervals and the equivalent-labels metric.
//!
//! The scored quantity is the observable squared loss `(1 - f(x, y))^2`: its
//! regret equals the squared loss of the estimates against the true
//! conditional probabilities, without needing to know them.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::baselines::TableModel;
use crate::error::{Error, Result};
use crate::features::{Example, LabelToken, SparseVector};

/// Default confidence level parameter.
pub const DEFAULT_DELTA: f64 = 0.05;

/// Anything that can score a label and then learn from the example.
pub trait Learner {
    /// Estimate of `P(y | x)` in `[0, 1]`.
    fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64;

    /// Trains on the example; `Ok(false)` when the learner had to skip it.
    fn learn(&mut self, x: &SparseVector, y: &LabelToken) -> Result<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Score each example, then train on it.
    Progressive,
    /// Score only; the model stays frozen.
    Holdout,
}

/// Half-width of the two-sided Hoeffding interval for a mean of `m` values in `[0, 1]`.
///
/// ```
/// let w = cptree::eval::hoeffding_halfwidth(20_000, 0.05).unwrap();
/// assert!((w - 0.0096).abs() < 5e-5);
/// ```
pub fn hoeffding_halfwidth(m: u64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if m == 0 {
        return Err(Error::precondition("a confidence interval needs at least one example"));
    }
    Ok(((2.0 / delta).ln() / (2.0 * m as f64)).sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Number of labels `k` for which always predicting `1/k` has this loss:
/// `1 / (1 - sqrt(loss))`.
///
/// ```
/// assert_eq!(cptree::eval::equivalent_labels(0.25).unwrap(), 2.0);
/// ```
pub fn equivalent_labels(loss: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&loss) {
        return Err(Error::precondition(format!("equivalent labels need a loss in [0, 1), got {loss}")));
    }
    Ok(1.0 / (1.0 - loss.sqrt()))
}

/// Loss of the uniform predictor over `k` labels, `(1 - 1/k)^2`; inverse of
/// [`equivalent_labels`].
pub fn uniform_loss(k: f64) -> f64 {
    (1.0 - 1.0 / k).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub m: u64,
    /// Absent when no example was scored.
    pub mean_loss: Option<f64>,
    #[serde(rename = "ci")]
    pub ci_halfwidth: Option<f64>,
    pub delta: f64,
    /// Absent when there is no loss or the loss is 1.
    pub equivalent_labels: Option<f64>,
    /// Seconds spent; the only field that varies between identical runs.
    pub wall_time: f64,
    /// Examples the learner could not train on.
    pub skipped: u64,
    pub model_config: serde_json::Value,
}

impl EvalReport {
    /// One JSON object on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }

    pub fn write_json_line(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", self.to_json_line())?;
        Ok(())
    }

    /// Aligned `field value` lines for people.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.digits$}"));
        let mode = match self.mode {
            Mode::Progressive => "progressive",
            Mode::Holdout => "holdout",
        };
        let rows = [
            ("mode", mode.to_string()),
            ("examples", self.m.to_string()),
            ("mean loss", opt(self.mean_loss, 5)),
            ("ci half-width", format!("{} (delta {})", opt(self.ci_halfwidth, 5), self.delta)),
            ("equivalent labels", opt(self.equivalent_labels, 3)),
            ("skipped updates", self.skipped.to_string()),
            ("wall time (s)", format!("{:.3}", self.wall_time)),
            ("model", self.model_config.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k:<18} {v}\n")).collect()
    }
}

/// Running loss accumulator for one pass over a stream.
#[derive(Debug, Clone)]
pub struct Evaluator {
    mode: Mode,
    delta: f64,
    m: u64,
    total_loss: f64,
    skipped: u64,
    started: Instant,
}

impl Evaluator {
    pub fn new(mode: Mode, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self { mode, delta, m: 0, total_loss: 0.0, skipped: 0, started: Instant::now() })
    }

    /// Scores `example` with the current model, then trains in progressive mode.
    /// Returns the example's loss.
    pub fn observe<L: Learner + ?Sized>(&mut self, learner: &mut L, example: &Example) -> Result<f64> {
        let f = learner.predict(&example.x, &example.y).clamp(0.0, 1.0);
        let loss = (1.0 - f) * (1.0 - f);
        self.m += 1;
        self.total_loss += loss;
        if self.mode == Mode::Progressive && !learner.learn(&example.x, &example.y)? {
            self.skipped += 1;
        }
        Ok(loss)
    }

    pub fn count(&self) -> u64 {
        self.m
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (self.m > 0).then(|| self.total_loss / self.m as f64)
    }

    pub fn report(&self, model_config: serde_json::Value) -> EvalReport {
        let mean_loss = self.mean_loss();
        EvalReport {
            mode: self.mode,
            m: self.m,
            mean_loss,
            ci_halfwidth: hoeffding_halfwidth(self.m, self.delta).ok(),
            delta: self.delta,
            equivalent_labels: mean_loss.and_then(|l| equivalent_labels(l).ok()),
            wall_time: self.started.elapsed().as_secs_f64(),
            skipped: self.skipped,
            model_config,
        }
    }
}

/// Scores every example before training on it.
pub fn progressive_validate<L: Learner + ?Sized>(
    learner: &mut L,
    stream: impl IntoIterator<Item = Result<Example>>,
    delta: f64,
    model_config: serde_json::Value,
) -> Result<EvalReport> {
    run(learner, stream, Mode::Progressive, delta, model_config)
}

/// Scores every example without training.
pub fn holdout_validate<L: Learner + ?Sized>(
    learner: &mut L,
    stream: impl IntoIterator<Item = Result<Example>>,
    delta: f64,
    model_config: serde_json::Value,
) -> Result<EvalReport> {
    run(learner, stream, Mode::Holdout, delta, model_config)
}

fn run<L: Learner + ?Sized>(
    learner: &mut L,
    stream: impl IntoIterator<Item = Result<Example>>,
    mode: Mode,
    delta: f64,
    model_config: serde_json::Value,
) -> Result<EvalReport> {
    let mut evaluator = Evaluator::new(mode, delta)?;
    for example in stream {
        evaluator.observe(learner, &example?)?;
    }
    Ok(evaluator.report(model_config))
}

impl Learner for TableModel {
    fn predict(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        TableModel::predict(self, x, y)
    }

    fn learn(&mut self, x: &SparseVector, y: &LabelToken) -> Result<bool> {
        self.train(x, y);
        Ok(true)
    }
}

/// The unattainable reference: the frequency table fitted on the test set
/// itself, then scored on it.
pub fn best_possible(test: &[Example], delta: f64) -> Result<EvalReport> {
    let mut table = TableModel::new();
    for e in test {
        table.train(&e.x, &e.y);
    }
    holdout_validate(&mut table, test.iter().cloned().map(Ok), delta, serde_json::json!({ "method": "best-possible" }))
}
