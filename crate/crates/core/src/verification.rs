//! Process-reward verification: per-step scoring and list-wise selection.
//!
//! Two judge styles share one output contract: a scoring judge returns
//! `{"analysis": ..., "score": 0..=10}` and a selection judge returns
//! `{"index": ..., "analysis": ...}`. Judge output is free text; parsing
//! extracts the first well-formed JSON object, tolerating prose and code
//! fences, and validates types and ranges strictly — fractional scores are
//! rejected, not rounded.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{StepRecord, Trajectory};
use crate::models::{ModelError, ModelRef, ModelRuntime, SamplingParams};

/// Scoring-judge instructions; rendered with the candidate step and history.
pub const PRM_SCORE_TEMPLATE: &str = include_str!("../templates/prm_score.txt");
/// Selection-judge instructions; rendered with the candidate list.
pub const PRM_LIST_TEMPLATE: &str = include_str!("../templates/prm_list.txt");

pub const PRM_SCORE_TEMPLATE_VERSION: &str = "prm-score/v1";
pub const PRM_LIST_TEMPLATE_VERSION: &str = "prm-list/v1";

/// Default character budget for serialized history blocks in judge prompts.
pub const DEFAULT_HISTORY_BUDGET: usize = 8_000;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no structured object found in judge output")]
    NotFound,
    #[error("judge returned a {found} object where {expected} was expected")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error("judge object is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("judge field `{field}` has an invalid type: {detail}")]
    InvalidType { field: &'static str, detail: String },
    #[error("judge field `{field}` is out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("invalid judge request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Transport(#[from] ModelError),
    #[error("judge output unusable after {attempts} attempts; last error: {last}")]
    Exhausted { attempts: u32, last: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Score,
    Selection,
}

/// Parsed judge output: a 0–10 integer score or a selected candidate index,
/// always with the judge's analysis text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub kind: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub analysis: String,
}

impl VerifierVerdict {
    pub fn score(score: u8, analysis: impl Into<String>) -> Result<Self, VerifyError> {
        if score > 10 {
            return Err(VerifyError::OutOfRange { field: "score", value: i64::from(score) });
        }
        Ok(Self {
            kind: VerdictKind::Score,
            score: Some(score),
            index: None,
            analysis: analysis.into(),
        })
    }

    pub fn selection(index: usize, analysis: impl Into<String>) -> Self {
        Self {
            kind: VerdictKind::Selection,
            score: None,
            index: Some(index),
            analysis: analysis.into(),
        }
    }

    /// Wire object exactly as the templates request it.
    pub fn to_wire(&self) -> Value {
        match self.kind {
            VerdictKind::Score => serde_json::json!({
                "analysis": self.analysis,
                "score": self.score.unwrap_or_default(),
            }),
            VerdictKind::Selection => serde_json::json!({
                "index": self.index.unwrap_or_default(),
                "analysis": self.analysis,
            }),
        }
    }
}

/// What a selection judge chooses among: sibling candidate steps that share
/// one committed history, or whole candidate trajectories.
#[derive(Debug, Clone, Copy)]
pub enum Candidates<'a> {
    Steps(&'a [StepRecord]),
    Trajectories(&'a [Trajectory]),
}

impl Candidates<'_> {
    pub fn len(&self) -> usize {
        match self {
            Candidates::Steps(s) => s.len(),
            Candidates::Trajectories(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One selection outcome; `incident` is set when the judge misbehaved and a
/// fallback was applied.
#[derive(Debug, Clone)]
pub struct Selection {
    pub verdict: VerifierVerdict,
    pub incident: Option<String>,
}

impl Selection {
    pub fn clean(verdict: VerifierVerdict) -> Self {
        Self { verdict, incident: None }
    }

    pub fn index(&self) -> usize {
        self.verdict.index.unwrap_or(0)
    }
}

/// A process-reward judge. Implemented by the LLM-backed client and by the
/// simulator's deterministic judges.
#[async_trait]
pub trait Verifier: Send + Sync {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        history: &[StepRecord],
    ) -> Result<VerifierVerdict, VerifyError>;

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        history: &[StepRecord],
    ) -> Result<Selection, VerifyError>;
}

/// Select the best candidate, short-circuiting the degenerate sizes: an empty
/// list is an error and a single candidate wins without any judge call.
pub async fn select_best(
    verifier: &dyn Verifier,
    candidates: &Candidates<'_>,
    history: &[StepRecord],
) -> Result<Selection, VerifyError> {
    match candidates.len() {
        0 => Err(VerifyError::EmptyCandidates),
        1 => Ok(Selection::clean(VerifierVerdict::selection(
            0,
            "single candidate; selected without judging",
        ))),
        _ => verifier.select_among(candidates, history).await,
    }
}

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

/// Extract the first well-formed JSON object from free text. Returns the
/// parsed value of the first position where an object parses; later objects
/// never win, even when the first fails validation.
pub(crate) fn extract_first_object(raw: &str) -> Option<Value> {
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_object() {
                return Some(value);
            }
        }
    }
    None
}

fn require_integer(value: &Value, field: &'static str) -> Result<i64, VerifyError> {
    match value {
        Value::Number(n) => n.as_i64().ok_or_else(|| VerifyError::InvalidType {
            field,
            detail: format!("{n} is not an integer"),
        }),
        other => Err(VerifyError::InvalidType {
            field,
            detail: format!("expected an integer, got {other}"),
        }),
    }
}

fn require_string(value: &Value, field: &'static str) -> Result<String, VerifyError> {
    value
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| VerifyError::InvalidType {
            field,
            detail: format!("expected a string, got {value}"),
        })
}

/// Parse judge output into a verdict of the expected kind.
pub fn parse_verdict(raw: &str, expected: VerdictKind) -> Result<VerifierVerdict, VerifyError> {
    let object = extract_first_object(raw).ok_or(VerifyError::NotFound)?;
    let map = object.as_object().expect("extract_first_object returns objects");

    let has_score = map.contains_key("score");
    let has_index = map.contains_key("index");
    match expected {
        VerdictKind::Score => {
            if !has_score {
                if has_index {
                    return Err(VerifyError::WrongKind { expected: "score", found: "selection" });
                }
                return Err(VerifyError::MissingField("score"));
            }
            let score = require_integer(&map["score"], "score")?;
            if !(0..=10).contains(&score) {
                return Err(VerifyError::OutOfRange { field: "score", value: score });
            }
            let analysis = map
                .get("analysis")
                .ok_or(VerifyError::MissingField("analysis"))
                .and_then(|v| require_string(v, "analysis"))?;
            VerifierVerdict::score(score as u8, analysis)
        }
        VerdictKind::Selection => {
            if !has_index {
                if has_score {
                    return Err(VerifyError::WrongKind { expected: "selection", found: "score" });
                }
                return Err(VerifyError::MissingField("index"));
            }
            let index = require_integer(&map["index"], "index")?;
            if index < 0 {
                return Err(VerifyError::OutOfRange { field: "index", value: index });
            }
            let analysis = map
                .get("analysis")
                .ok_or(VerifyError::MissingField("analysis"))
                .and_then(|v| require_string(v, "analysis"))?;
            Ok(VerifierVerdict::selection(index as usize, analysis))
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

/// Serialize one step as a labeled plain-text block for judge prompts.
pub fn render_step(step: &StepRecord) -> String {
    let mut out = String::new();
    out.push_str(&format!("step_number: {}\n", step.step_number));
    out.push_str(&format!("model_output: {}\n", step.model_output));
    out.push_str(&format!("action_output: {}\n", step.action_output));
    out.push_str(&format!("observations: {}\n", step.observations));
    out.push_str(&format!("error: {}\n", step.error.as_deref().unwrap_or("None")));
    out.push_str(&format!(
        "score: {}\n",
        step.score.map_or_else(|| "None".to_string(), |s| s.to_string())
    ));
    if let Some(note) = &step.reflection {
        out.push_str(&format!(
            "reflection: {}\n",
            crate::reflection::render_note_inline(note)
        ));
    }
    out
}

/// Serialize a history, most recent last, truncated to `budget` characters by
/// dropping text from the oldest end.
pub fn render_history(history: &[StepRecord], budget: usize) -> String {
    if history.is_empty() {
        return "(no previous steps)".to_string();
    }
    let full: String = history
        .iter()
        .map(|s| format!("--- previous step {} ---\n{}", s.step_number, render_step(s)))
        .collect::<Vec<_>>()
        .join("\n");
    truncate_from_oldest(&full, budget)
}

fn truncate_from_oldest(text: &str, budget: usize) -> String {
    if text.len() <= budget {
        return text.to_string();
    }
    let mut cut = text.len() - budget;
    while cut < text.len() && !text.is_char_boundary(cut) {
        cut += 1;
    }
    format!("[...oldest steps truncated...]\n{}", &text[cut..])
}

/// A validated render request for one judge call.
#[derive(Debug, Clone, Copy)]
pub struct JudgeRequest<'a> {
    pub template: VerdictKind,
    pub candidates: Candidates<'a>,
    pub history: &'a [StepRecord],
}

impl JudgeRequest<'_> {
    pub fn validate(&self) -> Result<(), VerifyError> {
        match self.template {
            VerdictKind::Score if self.candidates.len() != 1 => Err(VerifyError::BadRequest(
                format!("scoring expects exactly one candidate, got {}", self.candidates.len()),
            )),
            VerdictKind::Selection if self.candidates.len() < 2 => Err(VerifyError::BadRequest(
                format!("selection expects at least two candidates, got {}", self.candidates.len()),
            )),
            _ => Ok(()),
        }
    }
}

/// Render a judge prompt from its template and request.
pub fn render_judge_prompt(req: &JudgeRequest<'_>, history_budget: usize) -> Result<String, VerifyError> {
    req.validate()?;
    match req.template {
        VerdictKind::Score => {
            let step = match req.candidates {
                Candidates::Steps(steps) => &steps[0],
                Candidates::Trajectories(trajectories) => trajectories[0]
                    .last_step()
                    .ok_or_else(|| VerifyError::BadRequest("cannot score an empty trajectory".into()))?,
            };
            Ok(PRM_SCORE_TEMPLATE
                .replace("{{candidate}}", &render_step(step))
                .replace("{{previous_steps}}", &render_history(req.history, history_budget)))
        }
        VerdictKind::Selection => {
            let blocks = match req.candidates {
                Candidates::Steps(steps) => steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| format!("=== candidate {i} ===\n{}", render_step(s)))
                    .collect::<Vec<_>>(),
                Candidates::Trajectories(trajectories) => trajectories
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let body = t
                            .steps
                            .iter()
                            .map(render_step)
                            .collect::<Vec<_>>()
                            .join("---\n");
                        format!("=== candidate {i} ===\n{body}")
                    })
                    .collect::<Vec<_>>(),
            };
            Ok(PRM_LIST_TEMPLATE
                .replace("{{candidates}}", &blocks.join("\n"))
                .replace("{{previous_steps}}", &render_history(req.history, history_budget)))
        }
    }
}

// ---------------------------------------------------------------------------
// LLM-backed judge
// ---------------------------------------------------------------------------

const FORMAT_REMINDER_SCORE: &str = "\n\nReminder: reply with exactly one JSON object of the form {\"analysis\": \"...\", \"score\": <integer 0-10>}.";
const FORMAT_REMINDER_LIST: &str = "\n\nReminder: reply with exactly one JSON object of the form {\"index\": <integer>, \"analysis\": \"...\"}; the index must refer to one of the listed candidates.";

/// Judge client that renders template prompts, calls the judge model, and
/// re-asks on malformed output: two re-asks for unparseable replies, one for
/// an out-of-range index (then fall back to candidate 0).
pub struct JudgeClient {
    runtime: Arc<ModelRuntime>,
    judge: ModelRef,
    params: SamplingParams,
    history_budget: usize,
}

impl JudgeClient {
    pub fn new(runtime: Arc<ModelRuntime>, judge: ModelRef, params: SamplingParams) -> Self {
        Self { runtime, judge, params, history_budget: DEFAULT_HISTORY_BUDGET }
    }

    pub fn with_history_budget(mut self, budget: usize) -> Self {
        self.history_budget = budget;
        self
    }

    async fn ask_parsed(
        &self,
        base_prompt: &str,
        expected: VerdictKind,
        reminder: &str,
        attempts: u32,
    ) -> Result<VerifierVerdict, VerifyError> {
        let mut last = String::new();
        for attempt in 0..attempts {
            let prompt = if attempt == 0 {
                base_prompt.to_string()
            } else {
                format!("{base_prompt}{reminder}")
            };
            let raw = self.runtime.chat(&self.judge, &prompt, &self.params).await?;
            match parse_verdict(&raw, expected) {
                Ok(verdict) => return Ok(verdict),
                Err(err) => last = err.to_string(),
            }
        }
        Err(VerifyError::Exhausted { attempts, last })
    }
}

#[async_trait]
impl Verifier for JudgeClient {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        history: &[StepRecord],
    ) -> Result<VerifierVerdict, VerifyError> {
        let steps = std::slice::from_ref(candidate);
        let req = JudgeRequest {
            template: VerdictKind::Score,
            candidates: Candidates::Steps(steps),
            history,
        };
        let prompt = render_judge_prompt(&req, self.history_budget)?;
        // Initial ask plus two re-asks with a format reminder.
        self.ask_parsed(&prompt, VerdictKind::Score, FORMAT_REMINDER_SCORE, 3).await
    }

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        history: &[StepRecord],
    ) -> Result<Selection, VerifyError> {
        let req = JudgeRequest { template: VerdictKind::Selection, candidates: *candidates, history };
        let prompt = render_judge_prompt(&req, self.history_budget)?;
        let count = candidates.len();

        let verdict = self
            .ask_parsed(&prompt, VerdictKind::Selection, FORMAT_REMINDER_LIST, 3)
            .await?;
        let index = verdict.index.unwrap_or(0);
        if index < count {
            return Ok(Selection::clean(verdict));
        }

        // Out-of-range index: one re-ask, then fall back to candidate 0.
        let retry_prompt = format!(
            "{prompt}\n\nYour previous index {index} was out of range; valid indices are 0..{}.{FORMAT_REMINDER_LIST}",
            count - 1
        );
        let retry = self.runtime.chat(&self.judge, &retry_prompt, &self.params).await?;
        match parse_verdict(&retry, VerdictKind::Selection) {
            Ok(v) if v.index.unwrap_or(count) < count => Ok(Selection::clean(v)),
            Ok(v) => Ok(Selection {
                verdict: VerifierVerdict::selection(0, verdict.analysis.clone()),
                incident: Some(format!(
                    "judge returned out-of-range index {} twice; fell back to candidate 0",
                    v.index.unwrap_or(index)
                )),
            }),
            Err(err) => Ok(Selection {
                verdict: VerifierVerdict::selection(0, verdict.analysis.clone()),
                incident: Some(format!(
                    "judge re-ask after out-of-range index failed ({err}); fell back to candidate 0"
                )),
            }),
        }
    }
}
