//! Multi-topic blended guided decoding.
//!
//! A base language model is steered toward several weighted control codes
//! at once by multiplying its next-token distribution with a guide model's
//! per-code posteriors. On top of that sit a planner that turns line-range
//! sketches into per-line control configurations, a line-by-line story
//! pipeline, and an evaluation suite for fluency and control fidelity.
//!
//! ```
//! use plugblend_core::{compile_plan, generate_story, toy, PipelineParams};
//!
//! let world = toy::agnews();
//! let plan = compile_plan(&toy::sports_science_sketch(4, 2.0)).unwrap();
//! let story = generate_story(&plan, &world.providers(), &PipelineParams::default()).unwrap();
//! assert_eq!(story.lines.len(), 10);
//! ```

pub mod decoder;
pub mod error;
pub mod eval;
pub mod par;
pub mod planner;
pub mod prob;
pub mod provider;
pub mod story;
pub mod toy;
pub mod types;

pub use decoder::{
    apply_repetition_penalty, best_of_strengths, blend_single, blend_step, contrastive_posterior,
    decode_line, extract_first_sentence, BestOfReport, ContrastMode, DecodedLine, DecodingSession,
    GenerationParams, PosteriorMatrix, StopReason,
};
pub use error::{Error, Result};
pub use planner::{
    compile_plan, crossover_index, sketch_weight_profile, ControlSketch, LinePlan, SketchSet,
    VarianceMode,
};
pub use provider::{BaseLm, GuideLm, Providers};
pub use story::{
    generate_story, generate_story_with, regenerate_line, PipelineParams, Story, StoryError,
    StoryLine,
};
pub use types::{ControlCode, ControlConfig, LogitVector, ProbVector, TokenId, Vocabulary};
