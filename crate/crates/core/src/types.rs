//! Domain types shared by every layer: token ids, vocabularies, score
//! vectors and control configurations.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::normalize_weights;

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const UNK: TokenId = TokenId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered list of distinct surface strings. Index 0 is the unknown-token symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::VocabMismatch("vocabulary must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId::from(i)).is_some() {
                return Err(Error::VocabMismatch(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    /// Whitespace tokenization with case folding; out-of-vocabulary words map to [`TokenId::UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()).unwrap_or(TokenId::UNK))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.surface(t).ok_or_else(|| {
                    Error::VocabMismatch(format!("token id {t} >= vocabulary size {}", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

/// Unnormalized log-scores over the vocabulary. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidLogits);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A probability distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates non-negativity and unit mass.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidLogits);
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidLogits);
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::DegenerateWeights);
        }
        Ok(Self(values))
    }

    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A topic label such as `Sports`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlCode(String);

impl ControlCode {
    pub fn new(label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::UnknownControlCode(label));
        }
        Ok(Self(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ControlCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    pub code: ControlCode,
    pub strength: f64,
}

/// The codes active for one generation call and their strengths.
///
/// Strengths always sum to `total_strength`; an empty entry list means
/// uncontrolled generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    entries: Vec<ControlEntry>,
    total_strength: f64,
}

impl ControlConfig {
    pub fn uncontrolled() -> Self {
        Self {
            entries: Vec::new(),
            total_strength: 0.0,
        }
    }

    /// Builds a config from raw relative weights, scaling them so they sum to `total_strength`.
    pub fn new(raw: Vec<(ControlCode, f64)>, total_strength: f64) -> Result<Self> {
        if !total_strength.is_finite() || total_strength < 0.0 {
            return Err(Error::InvalidParams(format!(
                "total strength must be finite and >= 0, got {total_strength}"
            )));
        }
        for (i, (c, _)) in raw.iter().enumerate() {
            if raw[..i].iter().any(|(d, _)| d == c) {
                return Err(Error::InvalidParams(format!(
                    "duplicate control code `{c}`"
                )));
            }
        }
        if raw.is_empty() {
            return Ok(Self::uncontrolled());
        }
        let weights: Vec<f64> = raw.iter().map(|(_, w)| *w).collect();
        let scaled = normalize_weights(&weights, total_strength)?;
        let entries = raw
            .into_iter()
            .zip(scaled)
            .map(|((code, _), strength)| ControlEntry { code, strength })
            .collect();
        Ok(Self {
            entries,
            total_strength,
        })
    }

    /// Single code carrying the whole strength.
    pub fn single(code: ControlCode, strength: f64) -> Result<Self> {
        Self::new(vec![(code, 1.0)], strength)
    }

    pub fn entries(&self) -> &[ControlEntry] {
        &self.entries
    }

    pub fn total_strength(&self) -> f64 {
        self.total_strength
    }

    pub fn strength_of(&self, code: &ControlCode) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| &e.code == code)
            .map(|e| e.strength)
    }

    /// True when no entry carries a positive strength.
    pub fn is_uncontrolled(&self) -> bool {
        self.entries.iter().all(|e| e.strength == 0.0)
    }

    /// Every strength (and the total) multiplied by `multiplier`.
    pub fn scaled(&self, multiplier: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ControlEntry {
                    code: e.code.clone(),
                    strength: e.strength * multiplier,
                })
                .collect(),
            total_strength: self.total_strength * multiplier,
        }
    }

    /// Entry with the largest strength, ties toward the earlier entry.
    pub fn dominant(&self) -> Option<&ControlEntry> {
        self.entries.iter().filter(|e| e.strength > 0.0).fold(
            None,
            |best: Option<&ControlEntry>, e| match best {
                Some(b) if b.strength >= e.strength => Some(b),
                _ => Some(e),
            },
        )
    }
}
