//! HTTP client for models served behind the provider protocol:
//!
//! ```text
//! GET  /v1/meta        -> {"vocab_size": int, "codes": [string...], "eos_token": int?}
//! POST /v1/logits      {"context": [int...], "code": string|null} -> {"logits": [float...]}
//! POST /v1/tokenize    {"text": string}     -> {"tokens": [int...]}
//! POST /v1/detokenize  {"tokens": [int...]} -> {"text": string}
//! ```
//!
//! Non-200 responses carry `{"error": string}`.

use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{check_context, BaseLm, GuideLm};
use crate::error::{Error, Result};
use crate::types::{ControlCode, LogitVector, TokenId};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
    /// Serialize all calls through one lock, for servers that cannot take concurrent requests.
    pub serial: bool,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 2,
            serial: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetaResponse {
    pub vocab_size: usize,
    #[serde(default)]
    pub codes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_token: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub context: Vec<u32>,
    pub code: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Minimal JSON-over-HTTP client with retries, shared by the remote model and classifier.
#[derive(Debug)]
pub struct HttpJsonClient {
    base_url: String,
    agent: ureq::Agent,
    retries: u32,
    gate: Option<Mutex<()>>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl HttpJsonClient {
    pub fn new(base_url: &str, opts: &RemoteOptions) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: config.into(),
            retries: opts.retries,
            gate: opts.serial.then(|| Mutex::new(())),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.with_retries(path, || self.agent.get(&self.url(path)).call())
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.with_retries(path, || self.agent.post(&self.url(path)).send_json(body))
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    fn with_retries<T, F>(&self, path: &str, send: F) -> Result<T>
    where
        T: DeserializeOwned,
        F: Fn() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let _guard = self
            .gate
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            match self.attempt(path, &send)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(msg) => {
                    log::debug!("{path}: attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "{}{path}: {last}",
            self.base_url
        )))
    }

    fn attempt<T, F>(&self, path: &str, send: &F) -> Result<Attempt<T>>
    where
        T: DeserializeOwned,
        F: Fn() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let mut resp = match send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        if status == 200 {
            return serde_json::from_str(&text).map(Attempt::Done).map_err(|e| {
                Error::ProviderUnavailable(format!("{path}: malformed response: {e}"))
            });
        }
        let message = serde_json::from_str::<ErrorResponse>(&text)
            .map(|e| e.error)
            .unwrap_or(text);
        if status >= 500 {
            Ok(Attempt::Retry(format!("HTTP {status}: {message}")))
        } else {
            Err(Error::ProviderUnavailable(format!(
                "{path}: HTTP {status}: {message}"
            )))
        }
    }
}

/// A model reached over HTTP. Serves as a base model (`code: null`) and,
/// when the server advertises codes, as a guide model.
#[derive(Debug)]
pub struct RemoteLm {
    client: HttpJsonClient,
    vocab_size: usize,
    codes: Vec<ControlCode>,
    eos: Option<TokenId>,
}

impl RemoteLm {
    /// Fetches `/v1/meta` once; its vocabulary size is fixed for the lifetime of this handle.
    pub fn attach(url: &str, opts: RemoteOptions) -> Result<Self> {
        let client = HttpJsonClient::new(url, &opts);
        let meta: MetaResponse = client.get("/v1/meta")?;
        if meta.vocab_size == 0 {
            return Err(Error::VocabMismatch("remote vocabulary is empty".into()));
        }
        let codes = meta
            .codes
            .into_iter()
            .map(ControlCode::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            client,
            vocab_size: meta.vocab_size,
            codes,
            eos: meta.eos_token.map(TokenId),
        })
    }

    pub fn url(&self) -> &str {
        self.client.base_url()
    }

    fn logits(&self, context: &[TokenId], code: Option<&ControlCode>) -> Result<LogitVector> {
        check_context(context, self.vocab_size)?;
        let req = LogitsRequest {
            context: context.iter().map(|t| t.0).collect(),
            code: code.map(|c| c.to_string()),
        };
        let resp: LogitsResponse = self.client.post("/v1/logits", &req)?;
        if resp.logits.len() != self.vocab_size {
            return Err(Error::VocabMismatch(format!(
                "remote returned {} logits, vocabulary size is {}",
                resp.logits.len(),
                self.vocab_size
            )));
        }
        LogitVector::new(resp.logits)
    }
}

impl BaseLm for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector> {
        self.logits(context, None)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let resp: TokenizeResponse = self.client.post(
            "/v1/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        let tokens: Vec<TokenId> = resp.tokens.into_iter().map(TokenId).collect();
        check_context(&tokens, self.vocab_size)?;
        Ok(tokens)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let resp: DetokenizeResponse = self.client.post(
            "/v1/detokenize",
            &DetokenizeRequest {
                tokens: tokens.iter().map(|t| t.0).collect(),
            },
        )?;
        Ok(resp.text)
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }
}

impl GuideLm for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn codes(&self) -> &[ControlCode] {
        &self.codes
    }

    fn cc_next_logits(&self, context: &[TokenId], code: &ControlCode) -> Result<LogitVector> {
        if !self.codes.contains(code) {
            return Err(Error::UnknownControlCode(code.to_string()));
        }
        self.logits(context, Some(code))
    }

    fn available_codes(&self) -> Result<Vec<ControlCode>> {
        let meta: MetaResponse = self.client.get("/v1/meta")?;
        if meta.vocab_size != self.vocab_size {
            return Err(Error::VocabMismatch(format!(
                "remote vocabulary size changed from {} to {}",
                self.vocab_size, meta.vocab_size
            )));
        }
        meta.codes.into_iter().map(ControlCode::new).collect()
    }
}
