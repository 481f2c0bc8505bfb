//! Command-line arguments and their resolution against the environment and
//! an optional TOML config file.
//!
//! Precedence is flag, then environment variable, then config file, then the
//! built-in default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plugblend_core::eval::{Classifier, KeywordClassifier, RemoteClassifier};
use plugblend_core::provider::{RemoteLm, RemoteOptions, TableGuide, TableLm};
use plugblend_core::{toy, BaseLm, GuideLm, PipelineParams, Providers, VarianceMode};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const ENV_BASE: &str = "PLUGBLEND_BASE_URL";
pub const ENV_GUIDE: &str = "PLUGBLEND_GUIDE_URL";
pub const ENV_CLASSIFIER: &str = "PLUGBLEND_CLASSIFIER_URL";

#[derive(Parser, Debug, Clone)]
#[command(
    name = "plugblend",
    version,
    about = "Blend topic guide models into a base language model, plan stories from control sketches and measure control fidelity"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML config file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base model: `builtin:toy`, a table-model JSON file or an http(s) model server
    #[arg(long, global = true, env = ENV_BASE, value_name = "SPEC")]
    pub base: Option<String>,
    /// Guide model: `builtin:toy`, a guide bundle JSON file or an http(s) model server
    #[arg(long, global = true, env = ENV_GUIDE, value_name = "SPEC")]
    pub guide: Option<String>,
    /// Topic classifier: `builtin:toy`, a lexicon JSON file or an http(s) server
    #[arg(long, global = true, env = ENV_CLASSIFIER, value_name = "SPEC")]
    pub classifier: Option<String>,
    /// Worker threads for parallel evaluation
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for JSON and CSV outputs
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print JSON on stdout instead of text
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output; repeat for more
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Compile a sketch file into per-line control configurations
    Plan(SketchArgs),
    /// Generate a story for a sketch file
    Generate(GenerateArgs),
    /// Sweep blend ratios between code pairs and score them with τ-a
    Sweep(SweepArgs),
    /// Mean base-model perplexity of continuations over a strength grid
    EvalPpl(EvalPplArgs),
    /// τ-a of a story corpus with shuffled sentence order
    Baseline(BaselineArgs),
    /// Serve the story-session HTTP API
    Serve(ServeArgs),
    /// Serve the configured models over the provider protocol
    ServeModel(ServeModelArgs),
    /// Write the built-in toy models, prompts and sketches to a directory
    ExportToy(ExportToyArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct SketchArgs {
    #[arg(long, value_name = "FILE")]
    pub sketch: PathBuf,
    /// Total control strength per line
    #[arg(long)]
    pub strength: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub variance_mode: Option<VarianceArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceArg {
    Literal,
    Proportional,
}

impl From<VarianceArg> for VarianceMode {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Literal => VarianceMode::Literal,
            VarianceArg::Proportional => VarianceMode::Proportional,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub sketch: SketchArgs,
    /// Text the first line continues from
    #[arg(long)]
    pub prompt: Option<String>,
    /// Strength multipliers to try per line, keeping the most fluent
    #[arg(long, value_delimiter = ',', value_name = "M,...")]
    pub best_of: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// One prompt per line
    #[arg(long, value_name = "FILE")]
    pub prompts: PathBuf,
    /// Code pairs as `c1:c2`
    #[arg(long, value_delimiter = ',', required = true, value_name = "C1:C2,...")]
    pub pairs: Vec<String>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.5,1,1.5,2,3,4",
        value_name = "M,..."
    )]
    pub multipliers: Vec<f64>,
    /// Strength that multipliers scale
    #[arg(long)]
    pub strength: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalPplArgs {
    /// One prompt per line
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,0.5,1,1.5,2,3,4",
        value_name = "M,..."
    )]
    pub strengths: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    /// Stories separated by blank lines, one sentence per line
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Code pair as `c1:c2`
    #[arg(long, value_name = "C1:C2")]
    pub pair: String,
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Persist sessions as JSON snapshots in this directory
    #[arg(long, value_name = "DIR")]
    pub sessions: Option<PathBuf>,
    /// Allowed CORS origin; any origin when omitted
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ServeModelArgs {
    #[arg(long, default_value = "127.0.0.1:8081")]
    pub addr: SocketAddr,
}

#[derive(Args, Debug, Clone)]
pub struct ExportToyArgs {
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
}

/// Where a model or classifier comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Toy,
    Remote(String),
    File(PathBuf),
}

impl FromStr for ProviderSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "builtin:toy" {
            Ok(Self::Toy)
        } else if let Some(name) = s.strip_prefix("builtin:") {
            Err(CliError::usage(format!(
                "unknown builtin provider `{name}`"
            )))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::Remote(s.trim_end_matches('/').to_string()))
        } else if s.is_empty() {
            Err(CliError::usage("empty provider spec"))
        } else {
            Ok(Self::File(PathBuf::from(s)))
        }
    }
}

/// Keys accepted in the TOML config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub base: Option<String>,
    pub guide: Option<String>,
    pub classifier: Option<String>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strength: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub variance_mode: Option<VarianceMode>,
    pub best_of: Option<Vec<f64>>,
    /// Seconds before a remote call is abandoned.
    pub timeout: Option<f64>,
    pub retries: Option<u32>,
    pub pipeline: Option<PipelineParams>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Settings {
    pub base: ProviderSpec,
    pub guide: ProviderSpec,
    pub classifier: ProviderSpec,
    pub jobs: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub json: bool,
    pub strength: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub variance_mode: Option<VarianceMode>,
    pub best_of: Option<Vec<f64>>,
    pub remote: RemoteOptions,
    pub pipeline: PipelineParams,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            base: ProviderSpec::Toy,
            guide: ProviderSpec::Toy,
            classifier: ProviderSpec::Toy,
            jobs: None,
            seed: 0,
            out: None,
            json: false,
            strength: None,
            sigma: None,
            epsilon: None,
            variance_mode: None,
            best_of: None,
            remote: RemoteOptions::default(),
            pipeline: PipelineParams::default(),
        }
    }
}

impl Settings {
    /// Merges flags (which clap has already merged with the environment)
    /// over the config file and validates the result.
    pub fn resolve(global: &GlobalArgs) -> CliResult<Self> {
        let file = match &global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let spec = |flag: &Option<String>, conf: Option<String>| -> CliResult<ProviderSpec> {
            flag.clone()
                .or(conf)
                .map_or(Ok(ProviderSpec::Toy), |s| s.parse())
        };
        let mut remote = RemoteOptions::default();
        if let Some(t) = file.timeout {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::usage(format!("timeout must be > 0, got {t}")));
            }
            remote.timeout = Duration::from_secs_f64(t);
        }
        if let Some(r) = file.retries {
            remote.retries = r;
        }
        let settings = Self {
            base: spec(&global.base, file.base)?,
            guide: spec(&global.guide, file.guide)?,
            classifier: spec(&global.classifier, file.classifier)?,
            jobs: global.jobs.or(file.jobs),
            seed: global.seed.or(file.seed).unwrap_or(0),
            out: global.out.clone().or(file.out),
            json: global.json,
            strength: file.strength,
            sigma: file.sigma,
            epsilon: file.epsilon,
            variance_mode: file.variance_mode,
            best_of: file.best_of,
            remote,
            pipeline: file.pipeline.unwrap_or_default(),
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> CliResult<()> {
        for (what, spec) in [
            ("base", &self.base),
            ("guide", &self.guide),
            ("classifier", &self.classifier),
        ] {
            if let ProviderSpec::File(p) = spec {
                if !p.is_file() {
                    return Err(CliError::usage(format!(
                        "{what} model file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        self.pipeline.validate()?;
        Ok(())
    }

    pub fn load_base(&self) -> CliResult<Arc<dyn BaseLm>> {
        Ok(match &self.base {
            ProviderSpec::Toy => toy::agnews().base,
            ProviderSpec::File(p) => Arc::new(TableLm::load(p)?),
            ProviderSpec::Remote(url) => Arc::new(RemoteLm::attach(url, self.remote.clone())?),
        })
    }

    pub fn load_guide(&self) -> CliResult<Arc<dyn GuideLm>> {
        Ok(match &self.guide {
            ProviderSpec::Toy => toy::agnews().guide,
            ProviderSpec::File(p) => Arc::new(TableGuide::load(p)?),
            ProviderSpec::Remote(url) => Arc::new(RemoteLm::attach(url, self.remote.clone())?),
        })
    }

    pub fn load_providers(&self) -> CliResult<Providers> {
        Ok(Providers::attach(self.load_base()?, self.load_guide()?)?)
    }

    pub fn load_classifier(&self) -> CliResult<Arc<dyn Classifier>> {
        Ok(match &self.classifier {
            ProviderSpec::Toy => Arc::new(toy::agnews().classifier()),
            ProviderSpec::File(p) => Arc::new(KeywordClassifier::load(p)?),
            ProviderSpec::Remote(url) => Arc::new(RemoteClassifier::new(url, self.remote.clone())),
        })
    }

    /// Pipeline parameters with the best-of multipliers folded in.
    pub fn pipeline_params(&self, best_of: Option<&[f64]>) -> PipelineParams {
        let mut params = self.pipeline.clone();
        if let Some(b) = best_of
            .map(<[f64]>::to_vec)
            .or_else(|| self.best_of.clone())
        {
            params.best_of = Some(b);
        }
        params
    }
}
