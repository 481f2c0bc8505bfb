use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{HttpJsonClient, RemoteOptions};

/// Scores a text against a label set. Scores align with `labels` and sum to 1.
pub trait Classifier: Send + Sync {
    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>>;
}

/// Offline classifier counting lexicon hits.
///
/// Each label scores `hits + 0.5` before normalization, where hits are
/// case-folded words of the text found in the label's lexicon.
#[derive(Debug, Clone, Default)]
pub struct KeywordClassifier {
    lexicons: BTreeMap<String, HashSet<String>>,
}

const SMOOTHING: f64 = 0.5;

impl KeywordClassifier {
    pub fn new(lexicons: BTreeMap<String, Vec<String>>) -> Self {
        Self {
            lexicons: lexicons
                .into_iter()
                .map(|(k, ws)| (k, ws.into_iter().map(|w| w.to_lowercase()).collect()))
                .collect(),
        }
    }

    /// Parses `{"<label>": ["word", ...], ...}`.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(s)
            .map_err(|e| Error::model_file(format!("line {}", e.line()), e.to_string()))?;
        Ok(Self::new(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::ModelFileInvalid { location, message } => Error::ModelFileInvalid {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.lexicons.keys().map(String::as_str)
    }

    pub fn lexicon(&self, label: &str) -> Option<&HashSet<String>> {
        self.lexicons.get(label)
    }

    /// Lexicon hits per label.
    pub fn hits(&self, text: &str, labels: &[String]) -> Result<Vec<usize>> {
        let lexicons = labels
            .iter()
            .map(|l| {
                self.lexicons
                    .get(l)
                    .ok_or_else(|| Error::UnknownLabel(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let folded = text.to_lowercase();
        let words: Vec<&str> = folded
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        Ok(lexicons
            .iter()
            .map(|lex| words.iter().filter(|w| lex.contains(**w)).count())
            .collect())
    }
}

impl Classifier for KeywordClassifier {
    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        let raw: Vec<f64> = self
            .hits(text, labels)?
            .into_iter()
            .map(|h| h as f64 + SMOOTHING)
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|r| r / total).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub scores: Vec<f64>,
}

/// Classifier served over `POST /v1/classify`.
#[derive(Debug)]
pub struct RemoteClassifier {
    client: HttpJsonClient,
}

impl RemoteClassifier {
    pub fn new(url: &str, opts: RemoteOptions) -> Self {
        Self {
            client: HttpJsonClient::new(url, &opts),
        }
    }
}

impl Classifier for RemoteClassifier {
    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        let resp: ClassifyResponse = self.client.post(
            "/v1/classify",
            &ClassifyRequest {
                text: text.to_string(),
                labels: labels.to_vec(),
            },
        )?;
        if resp.scores.len() != labels.len() {
            return Err(Error::ProviderUnavailable(format!(
                "classifier returned {} scores for {} labels",
                resp.scores.len(),
                labels.len()
            )));
        }
        let sum: f64 = resp.scores.iter().sum();
        if resp.scores.iter().any(|s| !s.is_finite() || *s < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::ProviderUnavailable(format!(
                "classifier scores are not a distribution (sum {sum})"
            )));
        }
        Ok(resp.scores)
    }
}
