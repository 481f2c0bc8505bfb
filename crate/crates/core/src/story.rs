//! Line-by-line story generation over a [`LinePlan`].
//!
//! Line 0 is decoded after the fallback prompt. Every later line is decoded
//! after the last `context_window` generated lines joined by single spaces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decoder::{
    best_of_strengths, decode_line, BestOfReport, DecodedLine, GenerationParams, StopReason,
};
use crate::error::{Error, Result};
use crate::eval::perplexity_given;
use crate::planner::LinePlan;
use crate::provider::Providers;
use crate::types::ControlConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub fallback_prompt: String,
    pub context_window: usize,
    pub generation: GenerationParams,
    /// Strength multipliers to try per line, keeping the most fluent candidate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_of: Option<Vec<f64>>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            fallback_prompt: "Recently".into(),
            context_window: 2,
            generation: GenerationParams::default(),
            best_of: None,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if self.context_window == 0 {
            return Err(Error::InvalidParams("context_window must be >= 1".into()));
        }
        self.generation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryLine {
    pub n: usize,
    pub text: String,
    pub config: ControlConfig,
    /// Base-model perplexity of the line given its context; `None` for empty lines.
    pub ppl: Option<f64>,
    pub context: String,
    pub stop: StopReason,
    /// The line was decoded after the fallback prompt because its own context produced nothing.
    #[serde(default)]
    pub fallback_used: bool,
    #[serde(default)]
    pub empty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_of: Option<BestOfReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub lines: Vec<StoryLine>,
    pub plan: LinePlan,
    pub params: PipelineParams,
}

impl Story {
    pub fn texts(&self) -> Vec<&str> {
        self.lines.iter().map(|l| l.text.as_str()).collect()
    }

    /// Lines joined by newlines.
    pub fn to_text(&self) -> String {
        self.texts().join("\n")
    }
}

/// A failed run, carrying every line finished before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryError {
    pub error: Error,
    pub partial: Story,
}

impl fmt::Display for StoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} of {} lines)",
            self.error,
            self.partial.lines.len(),
            self.partial.plan.len()
        )
    }
}

impl std::error::Error for StoryError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Context for line `n`: the fallback prompt for line 0, else the previous
/// `window` lines' texts joined by single spaces.
pub fn line_context(lines: &[StoryLine], n: usize, params: &PipelineParams) -> String {
    if n == 0 {
        return params.fallback_prompt.clone();
    }
    let from = n.saturating_sub(params.context_window);
    let joined = lines[from..n]
        .iter()
        .map(|l| l.text.as_str())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if joined.is_empty() {
        params.fallback_prompt.clone()
    } else {
        joined
    }
}

fn decode_after(
    providers: &Providers,
    config: &ControlConfig,
    context: &str,
    params: &PipelineParams,
) -> Result<(DecodedLine, Option<BestOfReport>, Option<f64>)> {
    let prompt = providers.base().tokenize(context)?;
    let (line, report) = match &params.best_of {
        Some(mults) => {
            let (line, report) =
                best_of_strengths(providers, config, &prompt, &params.generation, mults)?;
            (line, Some(report))
        }
        None => (
            decode_line(providers, config, &prompt, &params.generation)?,
            None,
        ),
    };
    let ppl = if line.tokens.is_empty() || line.is_empty() {
        None
    } else {
        Some(perplexity_given(providers.base(), &prompt, &line.tokens)?)
    };
    Ok((line, report, ppl))
}

fn generate_line(
    providers: &Providers,
    config: &ControlConfig,
    n: usize,
    context: String,
    params: &PipelineParams,
) -> Result<StoryLine> {
    let (mut decoded, mut report, mut ppl) = decode_after(providers, config, &context, params)?;
    let mut context = context;
    let mut fallback_used = false;
    if decoded.is_empty() && context != params.fallback_prompt {
        log::info!("line {n}: empty generation, retrying after the fallback prompt");
        context = params.fallback_prompt.clone();
        (decoded, report, ppl) = decode_after(providers, config, &context, params)?;
        fallback_used = true;
    }
    let empty = decoded.is_empty();
    if empty {
        log::warn!("line {n}: empty generation recorded");
    }
    Ok(StoryLine {
        n,
        text: if empty { String::new() } else { decoded.text },
        config: config.clone(),
        ppl,
        context,
        stop: decoded.stop,
        fallback_used,
        empty,
        best_of: report,
    })
}

/// Generates every line of `plan`, calling `on_line` as each line completes.
pub fn generate_story_with(
    plan: &LinePlan,
    providers: &Providers,
    params: &PipelineParams,
    mut on_line: impl FnMut(&StoryLine),
) -> std::result::Result<Story, StoryError> {
    let mut story = Story {
        lines: Vec::with_capacity(plan.len()),
        plan: plan.clone(),
        params: params.clone(),
    };
    if let Err(error) = params.validate() {
        return Err(StoryError {
            error,
            partial: story,
        });
    }
    for (n, config) in plan.lines.iter().enumerate() {
        let context = line_context(&story.lines, n, params);
        match generate_line(providers, config, n, context, params) {
            Ok(line) => {
                on_line(&line);
                story.lines.push(line);
            }
            Err(error) => {
                return Err(StoryError {
                    error,
                    partial: story,
                })
            }
        }
    }
    Ok(story)
}

pub fn generate_story(
    plan: &LinePlan,
    providers: &Providers,
    params: &PipelineParams,
) -> std::result::Result<Story, StoryError> {
    generate_story_with(plan, providers, params, |_| {})
}

/// Re-decodes line `n` under `plan`, leaving every other line untouched.
pub fn regenerate_line(
    story: &Story,
    n: usize,
    plan: &LinePlan,
    providers: &Providers,
    params: &PipelineParams,
) -> Result<Story> {
    let len = story.lines.len().min(plan.len());
    if n >= len {
        return Err(Error::InvalidLineIndex { index: n, len });
    }
    params.validate()?;
    let context = line_context(&story.lines, n, params);
    let line = generate_line(providers, &plan.lines[n], n, context, params)?;
    let mut out = story.clone();
    out.lines[n] = line;
    out.plan = plan.clone();
    out.params = params.clone();
    Ok(out)
}
