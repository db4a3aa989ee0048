//! Self-describing binary model files.
//!
//! Layout: the 8-byte magic `CPTREEMF`, then a header record (format version,
//! method tag, full [`ModelConfig`]: hash seed, bits, alpha or k, learning
//! rate, passes, seed), then a body record specific to the method. Records
//! are encoded with bincode. Every collection is written in a canonical order
//! (node id, label order, weight index), so equal models give byte-identical
//! files, and loading reproduces predictions bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use bincode::Options;
use serde::{Deserialize, Serialize};

use crate::baselines::{OvaModel, TableModel};
use crate::cpecoc::KWayTree;
use crate::cpt::{Growth, Node, NodeId, NodeKind, Tree};
use crate::error::{Error, Result};
use crate::features::LabelToken;
use crate::model::{Estimator, Method, Model, ModelConfig};
use crate::pecoc::{CodeMatrix, PecocModel};
use crate::regressor::{LearningRate, Regressor, RegressorBank, RegressorId};

pub const MAGIC: &[u8; 8] = b"CPTREEMF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    method_tag: u8,
    config: ModelConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegressorRecord {
    bias: f64,
    updates: u64,
    weights: Vec<(u64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankRecord {
    updates_applied: u64,
    regressors: Vec<RegressorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
enum NodeKindRecord {
    Leaf { label: LabelToken },
    Internal { left: u32, right: u32 },
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: u32,
    kind: NodeKindRecord,
    left_leaves: u32,
    right_leaves: u32,
    parent: Option<u32>,
    regressor: u32,
}

#[derive(Debug, Serialize, Deserialize)]
enum Body {
    Tree {
        growth: Growth,
        root: Option<u32>,
        nodes: Vec<NodeRecord>,
        disagreements: u64,
        insertions: u64,
        bank: BankRecord,
    },
    Pecoc {
        code_size: u64,
        labels: Vec<LabelToken>,
        bank: BankRecord,
    },
    KWay {
        k: u64,
        levels: u32,
        labels: Vec<LabelToken>,
        bank: BankRecord,
    },
    Ova {
        labels: Vec<LabelToken>,
        bank: BankRecord,
    },
    Table {
        counts: Vec<(u64, LabelToken, u64)>,
    },
}

fn codec() -> impl Options {
    bincode::DefaultOptions::new().with_fixint_encoding().reject_trailing_bytes()
}

// bincode's error type is already boxed; this is its `map_err` adapter.
#[allow(clippy::boxed_local)]
fn codec_err(e: bincode::Error) -> Error {
    match *e {
        bincode::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

fn bank_record(bank: &RegressorBank) -> BankRecord {
    BankRecord {
        updates_applied: bank.updates_applied(),
        regressors: bank
            .iter()
            .map(|r| RegressorRecord { bias: r.bias(), updates: r.update_count(), weights: r.stored_weights() })
            .collect(),
    }
}

fn bank_from(record: BankRecord, rate: LearningRate) -> Result<RegressorBank> {
    let mut slots = Vec::with_capacity(record.regressors.len());
    for r in record.regressors {
        if r.weights.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Format("regressor weights are not sorted by index".into()));
        }
        slots.push(Regressor::from_stored(r.bias, r.weights, r.updates));
    }
    Ok(RegressorBank::from_parts(rate, slots, record.updates_applied))
}

fn body_of(estimator: &Estimator) -> Body {
    match estimator {
        Estimator::Tree(t) => Body::Tree {
            growth: t.growth(),
            root: t.root().map(|r| r.0),
            nodes: t
                .raw_nodes()
                .iter()
                .enumerate()
                .map(|(i, n)| NodeRecord {
                    id: i as u32,
                    kind: match &n.kind {
                        NodeKind::Leaf(label) => NodeKindRecord::Leaf { label: label.clone() },
                        NodeKind::Internal { left, right } => NodeKindRecord::Internal { left: left.0, right: right.0 },
                    },
                    left_leaves: n.left_leaves,
                    right_leaves: n.right_leaves,
                    parent: n.parent.map(|p| p.0),
                    regressor: n.regressor.0,
                })
                .collect(),
            disagreements: t.disagreements(),
            insertions: t.insertions(),
            bank: bank_record(t.bank()),
        },
        Estimator::Pecoc(m) => Body::Pecoc {
            code_size: m.code().size() as u64,
            labels: m.labels().to_vec(),
            bank: bank_record(m.bank()),
        },
        Estimator::KWay(m) => Body::KWay {
            k: m.k() as u64,
            levels: m.levels(),
            labels: m.labels().to_vec(),
            bank: bank_record(m.bank()),
        },
        Estimator::Ova(m) => Body::Ova { labels: m.labels().to_vec(), bank: bank_record(m.bank()) },
        Estimator::Table(m) => Body::Table { counts: m.sorted_counts() },
    }
}

fn estimator_from(body: Body, rate: LearningRate) -> Result<Estimator> {
    Ok(match body {
        Body::Tree { growth, root, nodes, disagreements, insertions, bank } => {
            let mut built = Vec::with_capacity(nodes.len());
            for (i, n) in nodes.into_iter().enumerate() {
                if n.id as usize != i {
                    return Err(Error::Format("node records are out of order".into()));
                }
                built.push(Node {
                    kind: match n.kind {
                        NodeKindRecord::Leaf { label } => NodeKind::Leaf(label),
                        NodeKindRecord::Internal { left, right } => NodeKind::Internal { left: NodeId(left), right: NodeId(right) },
                    },
                    regressor: RegressorId(n.regressor),
                    left_leaves: n.left_leaves,
                    right_leaves: n.right_leaves,
                    parent: n.parent.map(NodeId),
                });
            }
            let bank = bank_from(bank, rate)?;
            Estimator::Tree(Tree::from_parts(built, root.map(NodeId), growth, bank, disagreements, insertions)?)
        }
        Body::Pecoc { code_size, labels, bank } => {
            let code = CodeMatrix::with_size(code_size as usize).map_err(|e| Error::Format(e.to_string()))?;
            Estimator::Pecoc(PecocModel::from_parts(code, bank_from(bank, rate)?, labels)?)
        }
        Body::KWay { k, levels, labels, bank } => {
            Estimator::KWay(KWayTree::from_parts(k as usize, levels, bank_from(bank, rate)?, labels)?)
        }
        Body::Ova { labels, bank } => Estimator::Ova(
            OvaModel::from_parts(bank_from(bank, rate)?, labels).ok_or_else(|| Error::Format("one-against-all labels do not match its regressors".into()))?,
        ),
        Body::Table { counts } => {
            let mut table = TableModel::new();
            for (key, y, n) in counts {
                table.add(key, &y, n);
            }
            Estimator::Table(table)
        }
    })
}

fn matches_method(config: &ModelConfig, estimator: &Estimator) -> bool {
    use Method::*;
    match (config.method, estimator) {
        (CptStatic, Estimator::Tree(t)) => t.growth() == Growth::Fixed,
        (CptOnline, Estimator::Tree(t)) => t.growth() == Growth::Objective { alpha: config.alpha.unwrap_or(f64::NAN) },
        (CptBalanced, Estimator::Tree(t)) => t.growth() == Growth::Objective { alpha: 1.0 },
        (CptRandom, Estimator::Tree(t)) => t.growth() == Growth::Random { seed: config.seed },
        (Pecoc, Estimator::Pecoc(_)) | (Ova, Estimator::Ova(_)) | (Table, Estimator::Table(_)) => true,
        (Cpecoc, Estimator::KWay(m)) => Some(m.k()) == config.k,
        _ => false,
    }
}

/// Encodes `model` into `out`.
pub fn write_model(model: &Model, mut out: impl Write) -> Result<()> {
    let header = Header { format_version: FORMAT_VERSION, method_tag: model.method().tag(), config: *model.config() };
    out.write_all(MAGIC)?;
    let bytes = codec().serialize(&(header, body_of(model.estimator()))).map_err(codec_err)?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    write_model(model, &mut bytes)?;
    Ok(bytes)
}

/// Decodes a model, checking the magic, version and that the body matches
/// the method recorded in the header.
pub fn read_model(mut input: impl Read) -> Result<Model> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Format("file is too short to be a model".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    let version: u32 = codec()
        .allow_trailing_bytes()
        .deserialize(&rest)
        .map_err(|_| Error::Format("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let (header, body): (Header, Body) = codec().deserialize(&rest).map_err(codec_err)?;
    let config = header.config;
    if Method::from_tag(header.method_tag) != Some(config.method) {
        return Err(Error::Format("method tag disagrees with the stored configuration".into()));
    }
    config.validate().map_err(|e| Error::Format(format!("stored configuration is invalid: {e}")))?;
    let estimator = estimator_from(body, config.rate)?;
    if !matches_method(&config, &estimator) {
        return Err(Error::Format(format!("model body does not match method {}", config.method)));
    }
    Ok(Model::from_parts(config, estimator))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    read_model(bytes)
}

/// Writes the model to `path` through a temporary file in the same directory.
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_model(std::io::BufReader::new(fs::File::open(path)?))
}
