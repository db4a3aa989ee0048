//! Conditional probability estimation over large, growing label sets in time
//! logarithmic in the number of labels.
//!
//! The main estimator is the conditional probability tree ([`cpt::Tree`]): a
//! binary tree over labels with an online linear regressor at every node.
//! Alongside it live flat PECOC over Hadamard codes ([`pecoc`]), the k-way
//! hybrid of the two ([`cpecoc`]), the one-against-all and frequency-table
//! baselines ([`baselines`]), and a progressive-validation harness ([`eval`]).

pub mod baselines;
pub mod cpecoc;
pub mod cpt;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod model_file;
pub mod pecoc;
pub mod regressor;
pub mod synth;
pub mod verify;

pub use cpt::bounds::{check_estimate_bounds, EstimateBoundCheck};
pub use cpt::{Direction, Growth, NodeId, PathStep, Shape, Tree};
pub use error::{Error, Result};
pub use features::{hash_feature, parse_example, Example, FeatureHasher, LabelToken, SparseVector};
pub use eval::{EvalReport, Learner};
pub use model::{Method, Model, ModelConfig};
pub use regressor::{LearningRate, Regressor, RegressorBank, RegressorId};

/// Runs the code blocks of the guide under `book/` and of the README as doctests.
#[cfg(doctest)]
mod guide {
    macro_rules! chapters {
        ($($name:ident => $file:literal),* $(,)?) => {
            $(
                #[doc = include_str!(concat!("../../../book/src/", $file))]
                pub struct $name;
            )*
        };
    }

    chapters! {
        Introduction => "introduction.md",
        Features => "features.md",
        Regressors => "regressors.md",
        Cpt => "cpt.md",
        Pecoc => "pecoc.md",
        Cpecoc => "cpecoc.md",
        Baselines => "baselines.md",
        Evaluation => "evaluation.md",
        Synthetic => "synthetic.md",
        ModelFiles => "model-files.md",
        Verification => "verification.md",
        Cli => "cli.md",
    }

    #[doc = include_str!("../../../README.md")]
    pub struct Readme;
}
