//! Model provider contracts.
//!
//! A [`BaseLm`] supplies next-token logits for an unconditioned language
//! model; a [`GuideLm`] supplies per-control-code next-token logits (a
//! class-conditional LM). Decoding only ever sees the logit vectors, never
//! model internals, so any backend that can answer these calls plugs in.

mod remote;
mod table;

use std::sync::Arc;

pub use remote::{
    DetokenizeRequest, DetokenizeResponse, ErrorResponse, HttpJsonClient, LogitsRequest,
    LogitsResponse, MetaResponse, RemoteLm, RemoteOptions, TokenizeRequest, TokenizeResponse,
};
pub use table::{GuideFile, TableGuide, TableLm, TableLmFile};

use crate::error::{Error, Result};
use crate::par;
use crate::prob::log_softmax;
use crate::types::{ControlCode, LogitVector, TokenId};

/// An autoregressive base language model.
pub trait BaseLm: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Next-token logits. Must be a pure function of `context`.
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;

    /// End-of-text token, if the model has one.
    fn eos_token(&self) -> Option<TokenId> {
        None
    }

    /// `Σ_t log P(x_t | x_<t)` over `tokens`, starting from an empty context.
    fn sequence_logprob(&self, tokens: &[TokenId]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::InsufficientData(
                "sequence_logprob needs at least one token".into(),
            ));
        }
        conditional_logprob(self, &[], tokens)
    }
}

/// `Σ_t log P(x_t | context, x_<t)` for a continuation after `context`.
pub fn conditional_logprob<B: BaseLm + ?Sized>(
    base: &B,
    context: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64> {
    let mut full = Vec::with_capacity(context.len() + tokens.len());
    full.extend_from_slice(context);
    full.extend_from_slice(tokens);
    let start = context.len();
    let terms = par::map_range(tokens.len(), |t| -> Result<f64> {
        let logits = base.next_logits(&full[..start + t])?;
        let lp = log_softmax(logits.as_slice(), 1.0)?;
        let tok = tokens[t];
        lp.get(tok.index()).copied().ok_or_else(|| {
            Error::VocabMismatch(format!("token id {tok} >= vocabulary size {}", lp.len()))
        })
    });
    terms.into_iter().sum()
}

/// A class-conditional language model answering per-code next-token logits.
pub trait GuideLm: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Codes advertised at attach time.
    fn codes(&self) -> &[ControlCode];

    /// Prior `P(c)`; uniform over the advertised codes unless overridden.
    fn prior(&self, code: &ControlCode) -> Result<f64> {
        if self.codes().contains(code) {
            Ok(1.0 / self.codes().len() as f64)
        } else {
            Err(Error::UnknownControlCode(code.to_string()))
        }
    }

    fn cc_next_logits(&self, context: &[TokenId], code: &ControlCode) -> Result<LogitVector>;

    /// Logits for several codes at one context. Independent calls fan out
    /// across threads.
    fn cc_next_logits_batch(
        &self,
        context: &[TokenId],
        codes: &[ControlCode],
    ) -> Result<Vec<LogitVector>> {
        par::map(codes, |c| self.cc_next_logits(context, c))
            .into_iter()
            .collect()
    }

    /// Re-queries the backend for its current code list. Local models simply
    /// return [`GuideLm::codes`]; remote ones surface transport failures.
    fn available_codes(&self) -> Result<Vec<ControlCode>> {
        Ok(self.codes().to_vec())
    }
}

/// A base model and a guide model attached together.
#[derive(Clone)]
pub struct Providers {
    pub base: Arc<dyn BaseLm>,
    pub guide: Arc<dyn GuideLm>,
}

impl Providers {
    /// Checks that both models share a vocabulary size.
    pub fn attach(base: Arc<dyn BaseLm>, guide: Arc<dyn GuideLm>) -> Result<Self> {
        if base.vocab_size() != guide.vocab_size() {
            return Err(Error::VocabMismatch(format!(
                "base model has {} tokens but guide has {}",
                base.vocab_size(),
                guide.vocab_size()
            )));
        }
        Ok(Self { base, guide })
    }

    pub fn base(&self) -> &dyn BaseLm {
        self.base.as_ref()
    }

    pub fn guide(&self) -> &dyn GuideLm {
        self.guide.as_ref()
    }

    /// Resolves a label against the guide's advertised codes.
    pub fn code(&self, label: &str) -> Result<ControlCode> {
        self.guide
            .codes()
            .iter()
            .find(|c| c.as_str() == label)
            .cloned()
            .ok_or_else(|| Error::UnknownControlCode(label.to_string()))
    }
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<()> {
    match context.iter().find(|t| t.index() >= vocab_size) {
        Some(t) => Err(Error::VocabMismatch(format!(
            "context token {t} >= vocabulary size {vocab_size}"
        ))),
        None => Ok(()),
    }
}
