//! Deterministic table-driven language models.
//!
//! A [`TableLm`] maps context suffixes (up to its order) to next-token
//! distributions and falls back to a backoff distribution when no stored
//! suffix matches. A [`TableGuide`] bundles one table per control code.
//!
//! File schema:
//!
//! ```json
//! {"order": 1, "vocab": ["<unk>", "a", "."], "backoff": [0.2, 0.4, 0.4],
//!  "table": {"1": [0.0, 0.0, 1.0]}, "eos_token": "."}
//! ```
//!
//! Table keys are space-joined token ids of the context suffix, oldest first.
//! A guide bundle is `{"vocab": [...], "codes": {"<label>": <table>}, "priors": {"<label>": p}}`;
//! per-code tables may omit `vocab`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_context, BaseLm, GuideLm};
use crate::error::{Error, Result};
use crate::types::{ControlCode, LogitVector, TokenId, Vocabulary};

const ROW_TOLERANCE: f64 = 1e-9;
/// Log-score assigned to zero-probability entries so logits stay finite.
const MIN_LOGIT: f64 = -690.7755278982137; // ln(1e-300)

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableLmFile {
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub backoff: Vec<f64>,
    #[serde(default)]
    pub table: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuideFile {
    pub vocab: Vec<String>,
    pub codes: BTreeMap<String, TableLmFile>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub priors: BTreeMap<String, f64>,
}

/// An order-k table language model with backoff.
#[derive(Debug, Clone)]
pub struct TableLm {
    order: usize,
    vocab: Arc<Vocabulary>,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    backoff: Vec<f64>,
    row_logits: HashMap<Vec<TokenId>, Vec<f64>>,
    backoff_logits: Vec<f64>,
    eos: Option<TokenId>,
}

fn to_logits(row: &[f64]) -> Vec<f64> {
    row.iter()
        .map(|&p| {
            if p > 0.0 {
                p.ln().max(MIN_LOGIT)
            } else {
                MIN_LOGIT
            }
        })
        .collect()
}

fn check_row(location: &str, row: &[f64], v: usize) -> Result<()> {
    if row.len() != v {
        return Err(Error::model_file(
            location,
            format!("expected {v} probabilities, found {}", row.len()),
        ));
    }
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::model_file(
            location,
            format!("invalid probability {p}"),
        ));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::model_file(
            location,
            format!("row sums to {sum}, not 1"),
        ));
    }
    Ok(())
}

fn key_string(key: &[TokenId]) -> String {
    key.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl TableLm {
    /// Builds and validates a table model.
    pub fn new(
        order: usize,
        vocab: Arc<Vocabulary>,
        backoff: Vec<f64>,
        table: impl IntoIterator<Item = (Vec<TokenId>, Vec<f64>)>,
        eos: Option<TokenId>,
    ) -> Result<Self> {
        let v = vocab.len();
        check_row("backoff", &backoff, v)?;
        let mut rows = HashMap::new();
        for (key, row) in table {
            let location = format!("table[\"{}\"]", key_string(&key));
            if key.len() > order {
                return Err(Error::model_file(
                    location,
                    format!("suffix longer than order {order}"),
                ));
            }
            if let Some(t) = key.iter().find(|t| t.index() >= v) {
                return Err(Error::model_file(
                    location,
                    format!("token id {t} >= vocabulary size {v}"),
                ));
            }
            check_row(&location, &row, v)?;
            rows.insert(key, row);
        }
        if let Some(e) = eos {
            if e.index() >= v {
                return Err(Error::model_file("eos_token", "outside vocabulary"));
            }
        }
        let row_logits = rows
            .iter()
            .map(|(k, r)| (k.clone(), to_logits(r)))
            .collect();
        Ok(Self {
            order,
            backoff_logits: to_logits(&backoff),
            vocab,
            rows,
            backoff,
            row_logits,
            eos,
        })
    }

    pub fn from_file_repr(
        file: TableLmFile,
        shared_vocab: Option<Arc<Vocabulary>>,
    ) -> Result<Self> {
        let vocab = match (file.vocab, shared_vocab) {
            (Some(words), Some(shared)) => {
                if words.as_slice() != shared.tokens() {
                    return Err(Error::model_file("vocab", "differs from bundle vocabulary"));
                }
                shared
            }
            (Some(words), None) => Arc::new(
                Vocabulary::new(words).map_err(|e| Error::model_file("vocab", e.to_string()))?,
            ),
            (None, Some(shared)) => shared,
            (None, None) => return Err(Error::model_file("vocab", "missing vocabulary")),
        };
        let mut table = Vec::with_capacity(file.table.len());
        for (key, row) in file.table {
            let ids = key
                .split_whitespace()
                .map(|s| s.parse::<u32>().map(TokenId))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| {
                    Error::model_file(
                        format!("table[\"{key}\"]"),
                        "key is not a list of token ids",
                    )
                })?;
            table.push((ids, row));
        }
        let eos = match file.eos_token {
            Some(word) => Some(vocab.id(&word).ok_or_else(|| {
                Error::model_file("eos_token", format!("`{word}` is not in the vocabulary"))
            })?),
            None => None,
        };
        Self::new(file.order, vocab, file.backoff, table, eos)
    }

    pub fn to_file_repr(&self, include_vocab: bool) -> TableLmFile {
        TableLmFile {
            order: self.order,
            vocab: include_vocab.then(|| self.vocab.tokens().to_vec()),
            backoff: self.backoff.clone(),
            table: self
                .rows
                .iter()
                .map(|(k, r)| (key_string(k), r.clone()))
                .collect(),
            eos_token: self
                .eos
                .and_then(|e| self.vocab.surface(e))
                .map(str::to_string),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: TableLmFile =
            serde_json::from_str(s).map_err(|e| Error::model_file("json", e.to_string()))?;
        Self::from_file_repr(file, None)
    }

    /// Loads and validates a model file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::model_file(path.display().to_string(), e.to_string()))?;
        Self::from_json_str(&s).map_err(|e| prefix_location(e, path))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Distribution for `context`: longest stored suffix, else backoff.
    pub fn distribution(&self, context: &[TokenId]) -> &[f64] {
        let k = self.matched_suffix_len(context);
        match k {
            Some(k) => &self.rows[&context[context.len() - k..]],
            None => &self.backoff,
        }
    }

    /// Length of the longest stored suffix of `context`, or `None` for backoff.
    pub fn matched_suffix_len(&self, context: &[TokenId]) -> Option<usize> {
        let max_k = self.order.min(context.len());
        (0..=max_k)
            .rev()
            .find(|&k| self.rows.contains_key(&context[context.len() - k..]))
    }
}

fn prefix_location(e: Error, path: &Path) -> Error {
    match e {
        Error::ModelFileInvalid { location, message } => Error::ModelFileInvalid {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    }
}

impl BaseLm for TableLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector> {
        check_context(context, self.vocab.len())?;
        let logits = match self.matched_suffix_len(context) {
            Some(k) => &self.row_logits[&context[context.len() - k..]],
            None => &self.backoff_logits,
        };
        LogitVector::new(logits.clone())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self.vocab.tokenize(text))
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.vocab.detokenize(tokens)
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }
}

/// A class-conditional model made of one [`TableLm`] per control code.
#[derive(Debug, Clone)]
pub struct TableGuide {
    vocab: Arc<Vocabulary>,
    codes: Vec<ControlCode>,
    models: Vec<TableLm>,
    priors: Vec<f64>,
}

impl TableGuide {
    /// `priors` defaults to uniform. Given priors must cover every code and
    /// are rescaled to sum to 1.
    pub fn new(
        vocab: Arc<Vocabulary>,
        models: Vec<(ControlCode, TableLm)>,
        priors: Option<Vec<f64>>,
    ) -> Result<Self> {
        for (code, m) in &models {
            if m.vocabulary().tokens() != vocab.tokens() {
                return Err(Error::model_file(
                    format!("codes[\"{code}\"]"),
                    "vocabulary differs from bundle vocabulary",
                ));
            }
        }
        let n = models.len();
        let priors = match priors {
            None => vec![1.0 / n.max(1) as f64; n],
            Some(p) => {
                if p.len() != n || p.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                    return Err(Error::model_file(
                        "priors",
                        "priors must be positive and cover every code",
                    ));
                }
                let s: f64 = p.iter().sum();
                p.into_iter().map(|x| x / s).collect()
            }
        };
        let (codes, models) = models.into_iter().unzip();
        Ok(Self {
            vocab,
            codes,
            models,
            priors,
        })
    }

    pub fn from_file_repr(file: GuideFile) -> Result<Self> {
        let vocab = Arc::new(
            Vocabulary::new(file.vocab).map_err(|e| Error::model_file("vocab", e.to_string()))?,
        );
        let mut models = Vec::with_capacity(file.codes.len());
        for (label, table) in file.codes {
            let code = ControlCode::new(label.clone())
                .map_err(|_| Error::model_file("codes", "empty control code label"))?;
            let m = TableLm::from_file_repr(table, Some(vocab.clone())).map_err(|e| match e {
                Error::ModelFileInvalid { location, message } => Error::ModelFileInvalid {
                    location: format!("codes[\"{label}\"].{location}"),
                    message,
                },
                other => other,
            })?;
            models.push((code, m));
        }
        let priors = if file.priors.is_empty() {
            None
        } else {
            let mut p = Vec::with_capacity(models.len());
            for (code, _) in &models {
                p.push(*file.priors.get(code.as_str()).ok_or_else(|| {
                    Error::model_file("priors", format!("missing prior for `{code}`"))
                })?);
            }
            if let Some(extra) = file
                .priors
                .keys()
                .find(|k| !models.iter().any(|(c, _)| c.as_str() == k.as_str()))
            {
                return Err(Error::model_file(
                    "priors",
                    format!("unknown code `{extra}`"),
                ));
            }
            Some(p)
        };
        Self::new(vocab, models, priors)
    }

    pub fn to_file_repr(&self) -> GuideFile {
        GuideFile {
            vocab: self.vocab.tokens().to_vec(),
            codes: self
                .codes
                .iter()
                .zip(&self.models)
                .map(|(c, m)| (c.to_string(), m.to_file_repr(false)))
                .collect(),
            priors: self
                .codes
                .iter()
                .zip(&self.priors)
                .map(|(c, p)| (c.to_string(), *p))
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GuideFile =
            serde_json::from_str(s).map_err(|e| Error::model_file("json", e.to_string()))?;
        Self::from_file_repr(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::model_file(path.display().to_string(), e.to_string()))?;
        Self::from_json_str(&s).map_err(|e| prefix_location(e, path))
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn model(&self, code: &ControlCode) -> Result<&TableLm> {
        self.codes
            .iter()
            .position(|c| c == code)
            .map(|i| &self.models[i])
            .ok_or_else(|| Error::UnknownControlCode(code.to_string()))
    }
}

impl GuideLm for TableGuide {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn codes(&self) -> &[ControlCode] {
        &self.codes
    }

    fn prior(&self, code: &ControlCode) -> Result<f64> {
        self.codes
            .iter()
            .position(|c| c == code)
            .map(|i| self.priors[i])
            .ok_or_else(|| Error::UnknownControlCode(code.to_string()))
    }

    fn cc_next_logits(&self, context: &[TokenId], code: &ControlCode) -> Result<LogitVector> {
        self.model(code)?.next_logits(context)
    }
}
