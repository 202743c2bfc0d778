//! Sequential-revision controller: when to reflect, how to obtain a
//! reflection note, and how to inject its summary into the next generation
//! context.
//!
//! Reflection runs after a step is committed and informs the *next* step's
//! generation; a scored run in threshold mode reflects only when the step
//! score falls strictly below the threshold.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::StepRecord;
use crate::models::{ModelError, ModelRef, ModelRuntime, SamplingParams};
use crate::verification::{extract_first_object, render_history, render_step, DEFAULT_HISTORY_BUDGET};

/// Reflection-model instructions; rendered with the committed step.
pub const REFLECTION_TEMPLATE: &str = include_str!("../templates/reflection.txt");
pub const REFLECTION_TEMPLATE_VERSION: &str = "reflection/v1";

/// Header line under which the latest note is injected into the context.
pub const SUMMARY_HEADER: &str = "Reflection on the previous step:";

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("threshold policy requires a step score, but none was provided")]
    MissingScore,
    #[error("threshold policy requires a threshold value")]
    MissingThreshold,
    #[error("reflection threshold must lie in 0..=10 (got {0})")]
    ThresholdOutOfRange(u8),
    #[error("no structured object found in reflection output")]
    NotFound,
    #[error("reflection object is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("confidence_assessment must be High, Medium, or Low (got `{0}`)")]
    InvalidConfidence(String),
    #[error("reflection field `{0}` must be a string")]
    InvalidType(&'static str),
    #[error(transparent)]
    Transport(#[from] ModelError),
    #[error("reflection output unusable after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceLevel {
    High,
    Medium,
    Low,
}

impl ConfidenceLevel {
    fn from_literal(raw: &str) -> Result<Self, ReflectError> {
        match raw {
            "High" => Ok(Self::High),
            "Medium" => Ok(Self::Medium),
            "Low" => Ok(Self::Low),
            other => Err(ReflectError::InvalidConfidence(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::High => "High",
            Self::Medium => "Medium",
            Self::Low => "Low",
        }
    }
}

/// Parsed reflection output; attached to the step it reflects on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionNote {
    pub experience_summary: String,
    pub confidence_assessment: ConfidenceLevel,
    pub lessons_learned: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comments: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionMode {
    Off,
    EveryStep,
    Threshold,
}

/// When to reflect: never, after every step, or only when the verifier score
/// of the committed step is strictly below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionPolicy {
    pub mode: ReflectionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u8>,
}

impl ReflectionPolicy {
    pub fn off() -> Self {
        Self { mode: ReflectionMode::Off, threshold: None }
    }

    pub fn every_step() -> Self {
        Self { mode: ReflectionMode::EveryStep, threshold: None }
    }

    pub fn threshold(threshold: u8) -> Result<Self, ReflectError> {
        if threshold > 10 {
            return Err(ReflectError::ThresholdOutOfRange(threshold));
        }
        Ok(Self { mode: ReflectionMode::Threshold, threshold: Some(threshold) })
    }

    pub fn validate(&self) -> Result<(), ReflectError> {
        match self.mode {
            ReflectionMode::Threshold => match self.threshold {
                None => Err(ReflectError::MissingThreshold),
                Some(t) if t > 10 => Err(ReflectError::ThresholdOutOfRange(t)),
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Whether threshold mode requires the committed step to be scored.
    pub fn needs_score(&self) -> bool {
        self.mode == ReflectionMode::Threshold
    }
}

/// Decide whether to reflect on a committed step. Threshold mode triggers on
/// `score < threshold`, strictly: a score equal to the threshold never
/// triggers.
pub fn should_reflect(policy: &ReflectionPolicy, step_score: Option<u8>) -> Result<bool, ReflectError> {
    match policy.mode {
        ReflectionMode::Off => Ok(false),
        ReflectionMode::EveryStep => Ok(true),
        ReflectionMode::Threshold => {
            let threshold = policy.threshold.ok_or(ReflectError::MissingThreshold)?;
            let score = step_score.ok_or(ReflectError::MissingScore)?;
            Ok(score < threshold)
        }
    }
}

/// Render a note as the labeled summary block injected into contexts.
pub fn render_note(note: &ReflectionNote) -> String {
    let mut out = format!(
        "{SUMMARY_HEADER}\nexperience_summary: {}\nconfidence_assessment: {}\nlessons_learned: {}",
        note.experience_summary,
        note.confidence_assessment.as_str(),
        note.lessons_learned
    );
    if let Some(comments) = &note.comments {
        out.push_str(&format!("\ncomments: {comments}"));
    }
    out
}

/// Single-line rendering used when a note is serialized inside a judge
/// prompts' step block.
pub fn render_note_inline(note: &ReflectionNote) -> String {
    format!(
        "[{}] {} | {}",
        note.confidence_assessment.as_str(),
        note.experience_summary,
        note.lessons_learned
    )
}

/// Return a context whose injected summary is the rendering of `note`. Only
/// the latest note is carried; any prior summary is replaced. The original
/// context is left untouched.
pub fn inject_summary(
    ctx: &crate::models::GenerationContext,
    note: &ReflectionNote,
) -> crate::models::GenerationContext {
    let mut next = ctx.clone();
    next.injected_summary = Some(render_note(note));
    next
}

/// Parse a reflection note from model output: first JSON object, four named
/// fields, strict confidence literals.
pub fn parse_note(raw: &str) -> Result<ReflectionNote, ReflectError> {
    let object = extract_first_object(raw).ok_or(ReflectError::NotFound)?;
    let map = object.as_object().expect("extract_first_object returns objects");

    let get_string = |field: &'static str| -> Result<String, ReflectError> {
        let value = map.get(field).ok_or(ReflectError::MissingField(field))?;
        value
            .as_str()
            .map(str::to_owned)
            .ok_or(ReflectError::InvalidType(field))
    };

    let experience_summary = get_string("experience_summary")?;
    let confidence = get_string("confidence_assessment")?;
    let lessons_learned = get_string("lessons_learned")?;
    let comments = match map.get("comments") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) if s.is_empty() => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ReflectError::InvalidType("comments")),
    };

    Ok(ReflectionNote {
        experience_summary,
        confidence_assessment: ConfidenceLevel::from_literal(&confidence)?,
        lessons_learned,
        comments,
    })
}

/// A reflection model. Implemented by the LLM-backed reflector and the
/// simulator's deterministic one.
#[async_trait]
pub trait Reflector: Send + Sync {
    async fn reflect(
        &self,
        step: &StepRecord,
        history: &[StepRecord],
    ) -> Result<ReflectionNote, ReflectError>;
}

const FORMAT_REMINDER: &str = "\n\nReminder: reply with exactly one JSON object with fields experience_summary, confidence_assessment (High/Medium/Low), lessons_learned, and optional comments.";

/// LLM-backed reflector: renders the reflection template, asks the model,
/// and re-asks up to twice on unparseable output.
pub struct LlmReflector {
    runtime: Arc<ModelRuntime>,
    model: ModelRef,
    params: SamplingParams,
    history_budget: usize,
}

impl LlmReflector {
    pub fn new(runtime: Arc<ModelRuntime>, model: ModelRef, params: SamplingParams) -> Self {
        Self { runtime, model, params, history_budget: DEFAULT_HISTORY_BUDGET }
    }
}

#[async_trait]
impl Reflector for LlmReflector {
    async fn reflect(
        &self,
        step: &StepRecord,
        history: &[StepRecord],
    ) -> Result<ReflectionNote, ReflectError> {
        let base = REFLECTION_TEMPLATE
            .replace("{{candidate}}", &render_step(step))
            .replace("{{previous_steps}}", &render_history(history, self.history_budget));

        let mut last = String::new();
        let attempts = 3; // initial ask plus two re-asks
        for attempt in 0..attempts {
            let prompt = if attempt == 0 { base.clone() } else { format!("{base}{FORMAT_REMINDER}") };
            let raw = self.runtime.chat(&self.model, &prompt, &self.params).await?;
            match parse_note(&raw) {
                Ok(note) => return Ok(note),
                Err(err) => last = err.to_string(),
            }
        }
        Err(ReflectError::Exhausted { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigger_matrix() {
        let off = ReflectionPolicy::off();
        assert!(!should_reflect(&off, Some(0)).unwrap());

        let every = ReflectionPolicy::every_step();
        assert!(should_reflect(&every, None).unwrap());

        let at5 = ReflectionPolicy::threshold(5).unwrap();
        assert!(should_reflect(&at5, Some(4)).unwrap(), "score below threshold triggers");
        assert!(!should_reflect(&at5, Some(5)).unwrap(), "equal score never triggers");
        assert!(!should_reflect(&at5, Some(6)).unwrap());
        assert!(matches!(should_reflect(&at5, None), Err(ReflectError::MissingScore)));
    }

    #[test]
    fn threshold_policy_validation() {
        assert!(ReflectionPolicy::threshold(11).is_err());
        let broken = ReflectionPolicy { mode: ReflectionMode::Threshold, threshold: None };
        assert!(broken.validate().is_err());
        assert!(ReflectionPolicy::off().validate().is_ok());
    }

    #[test]
    fn parses_full_note() {
        let raw = r#"{"experience_summary":"fetched the page","confidence_assessment":"High","lessons_learned":"keep the same query","comments":"none needed"}"#;
        let note = parse_note(raw).unwrap();
        assert_eq!(note.confidence_assessment, ConfidenceLevel::High);
        assert_eq!(note.comments.as_deref(), Some("none needed"));
    }

    #[test]
    fn comments_are_optional() {
        let raw = r#"{"experience_summary":"s","confidence_assessment":"Medium","lessons_learned":"l"}"#;
        let note = parse_note(raw).unwrap();
        assert!(note.comments.is_none());
    }

    #[test]
    fn rejects_unknown_confidence_literal() {
        let raw = r#"{"experience_summary":"s","confidence_assessment":"Certain","lessons_learned":"l"}"#;
        let err = parse_note(raw).unwrap_err();
        assert!(matches!(err, ReflectError::InvalidConfidence(v) if v == "Certain"));
    }

    #[test]
    fn injection_replaces_prior_summary_and_preserves_original() {
        let ctx = crate::models::GenerationContext::new("q");
        let first = ReflectionNote {
            experience_summary: "first".into(),
            confidence_assessment: ConfidenceLevel::Low,
            lessons_learned: "a".into(),
            comments: None,
        };
        let second = ReflectionNote {
            experience_summary: "second".into(),
            confidence_assessment: ConfidenceLevel::High,
            lessons_learned: "b".into(),
            comments: None,
        };

        let once = inject_summary(&ctx, &first);
        assert!(ctx.injected_summary.is_none(), "original untouched");
        assert!(once.injected_summary.as_deref().unwrap().contains("first"));

        let twice = inject_summary(&once, &second);
        let summary = twice.injected_summary.unwrap();
        assert!(summary.contains("second"));
        assert!(!summary.contains("first"), "only the latest note is injected");
        assert!(summary.starts_with(SUMMARY_HEADER));
    }
}
