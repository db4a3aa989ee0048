//! Hashed sparse observations, label tokens and the line-oriented example format.
//!
//! Every example is one line: a label followed by whitespace-separated features,
//! each written `name` or `name:value` (an omitted value means `1.0`). Feature
//! names are hashed into a `2^bits` index space; the top index of that space is
//! reserved for the constant bias feature, which every [`SparseVector`] carries.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};

/// Seed used by [`hash_feature`] and by models that do not override it.
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_c0de_1abe_1000;

pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 31;

/// Default width of the hashed feature space.
pub const DEFAULT_BITS: u8 = 18;

fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "hash width must be in {MIN_BITS}..={MAX_BITS} bits, got {bits}"
        )))
    }
}

/// Index reserved for the bias feature in a `2^bits` space.
pub fn bias_index(bits: u8) -> u64 {
    (1u64 << bits) - 1
}

/// Maps feature names into `[0, 2^bits - 1)`, leaving the last slot for the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHasher {
    bits: u8,
    seed: u64,
}

impl FeatureHasher {
    pub fn new(bits: u8, seed: u64) -> Result<Self> {
        check_bits(bits)?;
        Ok(Self { bits, seed })
    }

    pub fn with_bits(bits: u8) -> Result<Self> {
        Self::new(bits, DEFAULT_HASH_SEED)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self, token: &str) -> u64 {
        // Modulo the number of non-reserved slots, so the bias index is unreachable.
        xxh3_64_with_seed(token.as_bytes(), self.seed) % bias_index(self.bits).max(1)
    }

    /// Parses one example line. `line_no` only feeds error messages.
    pub fn parse_line(&self, line: &str, line_no: usize) -> Result<Example> {
        let err = |message: String| Error::Parse { line: line_no, message };
        let mut fields = line.split_whitespace();
        let label = fields
            .next()
            .ok_or_else(|| err("empty line: expected `<label> <feature>[:<value>] ...`".into()))?;
        let y = LabelToken::new(label).map_err(|e| err(e.to_string()))?;

        let mut pairs = Vec::new();
        for field in fields {
            let (name, value) = match field.rsplit_once(':') {
                Some((name, value)) => {
                    let value: f64 = value
                        .parse()
                        .map_err(|_| err(format!("malformed feature `{field}`")))?;
                    (name, value)
                }
                None => (field, 1.0),
            };
            if name.is_empty() {
                return Err(err(format!("malformed feature `{field}`: empty name")));
            }
            if !value.is_finite() {
                return Err(err(format!("non-finite value in `{field}`")));
            }
            pairs.push((self.index(name), value));
        }
        let x = SparseVector::from_pairs(pairs, self.bits).map_err(|e| err(e.to_string()))?;
        Ok(Example { x, y })
    }
}

/// Hashes `token` with the default seed.
///
/// ```
/// let i = cptree::hash_feature("a", 18).unwrap();
/// assert!(i < 1 << 18);
/// assert_eq!(i, cptree::hash_feature("a", 18).unwrap());
/// ```
pub fn hash_feature(token: &str, bits: u8) -> Result<u64> {
    if token.is_empty() {
        return Err(Error::precondition("feature token must be non-empty"));
    }
    Ok(FeatureHasher::with_bits(bits)?.index(token))
}

/// Parses an example line with the default hash seed.
pub fn parse_example(line: &str, bits: u8) -> Result<Example> {
    FeatureHasher::with_bits(bits)?.parse_line(line, 1)
}

/// Canonical sparse vector: strictly increasing indices, finite values, and
/// the bias entry `(2^bits - 1, 1.0)` always last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(u64, f64)>,
    bits: u8,
}

impl SparseVector {
    /// Builds the canonical form: sorts, sums duplicate indices, appends the bias.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, f64)>, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let bias = bias_index(bits);
        let mut entries: Vec<(u64, f64)> = pairs.into_iter().collect();
        for &(index, value) in &entries {
            if index >= bias {
                return Err(Error::precondition(format!(
                    "feature index {index} is outside [0, {bias}) for {bits} bits"
                )));
            }
            if !value.is_finite() {
                return Err(Error::precondition(format!("non-finite value at index {index}")));
            }
        }
        entries.sort_by_key(|&(index, _)| index);
        entries.dedup_by(|later, kept| {
            if later.0 == kept.0 {
                kept.1 += later.1;
                true
            } else {
                false
            }
        });
        if let Some(&(index, _)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::precondition(format!("summed value at index {index} overflowed")));
        }
        entries.push((bias, 1.0));
        Ok(Self { entries, bits })
    }

    /// A vector holding only the bias.
    pub fn bias_only(bits: u8) -> Result<Self> {
        Self::from_pairs(std::iter::empty(), bits)
    }

    /// All entries including the trailing bias.
    pub fn entries(&self) -> &[(u64, f64)] {
        &self.entries
    }

    /// Entries excluding the bias.
    pub fn features(&self) -> &[(u64, f64)] {
        &self.entries[..self.entries.len() - 1]
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn bias_index(&self) -> u64 {
        bias_index(self.bits)
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    /// Stable 64-bit digest of indices and value bit patterns.
    pub fn content_key(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.entries.len() * 16 + 1);
        bytes.push(self.bits);
        for &(index, value) in &self.entries {
            bytes.extend_from_slice(&index.to_le_bytes());
            bytes.extend_from_slice(&value.to_bits().to_le_bytes());
        }
        xxh3_64_with_seed(&bytes, 0)
    }
}

/// External label name: non-empty, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LabelToken(String);

impl LabelToken {
    pub fn new(token: impl Into<String>) -> Result<Self> {
        let token = token.into();
        if token.is_empty() {
            return Err(Error::precondition("label must be non-empty"));
        }
        if token.chars().any(char::is_whitespace) {
            return Err(Error::precondition(format!("label `{token}` contains whitespace")));
        }
        Ok(Self(token))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LabelToken {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<LabelToken> for String {
    fn from(value: LabelToken) -> Self {
        value.0
    }
}

impl fmt::Display for LabelToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One observation and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: SparseVector,
    pub y: LabelToken,
}

/// Streams examples from a reader, skipping blank lines and `#` comments.
pub struct ExampleReader<R> {
    lines: std::io::Lines<R>,
    hasher: FeatureHasher,
    line_no: usize,
}

impl<R: BufRead> ExampleReader<R> {
    pub fn new(reader: R, hasher: FeatureHasher) -> Self {
        Self { lines: reader.lines(), hasher, line_no: 0 }
    }
}

impl<R: BufRead> Iterator for ExampleReader<R> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(self.hasher.parse_line(&line, self.line_no));
        }
    }
}

/// Reads every example of a file into memory.
pub fn read_examples(path: impl AsRef<std::path::Path>, hasher: FeatureHasher) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path)?;
    ExampleReader::new(std::io::BufReader::new(file), hasher).collect()
}
