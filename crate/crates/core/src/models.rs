//! Rollout-model interface: sampling parameters, model references and pools,
//! generation contexts, and the runtime that routes a generation request to
//! either the scripted simulator or a remote chat backend.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_monotonic, DomainError, StepRecord, FINAL_ANSWER_MARKER};
use crate::gateway::ChatBackend;
use crate::scripted::ScriptedWorld;

/// Endpoint literal that routes a model reference to the scripted simulator.
pub const SCRIPTED_ENDPOINT: &str = "scripted";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("model pool rejected: {0}")]
    InvalidPool(String),
    #[error("scripted model references never carry credentials")]
    ScriptedWithAuth,
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("no scripted world is bound to this run")]
    NoScriptedWorld,
    #[error("scripted model `{0}` cannot serve raw chat completions")]
    ScriptedChat(String),
    #[error("remote backend unavailable: {0}")]
    NoRemoteBackend(String),
    #[error("{endpoint} rejected the request ({status}): {detail}")]
    NonRetryable {
        endpoint: String,
        status: String,
        detail: String,
    },
    #[error("transport to {endpoint} failed after {attempts} attempts; last error: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("malformed completion payload: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Decoding knobs shared by every model call. `seed` doubles as the
/// deterministic key for the scripted simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64, seed: u64) -> Result<Self, ModelError> {
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(ModelError::InvalidParams(format!(
                "temperature must be finite and >= 0 (got {temperature})"
            )));
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "top_p must lie in (0, 1] (got {top_p})"
            )));
        }
        Ok(Self { temperature, top_p, seed })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for SamplingParams {
    /// Diversity defaults for parallel candidates.
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.95, seed: 0 }
    }
}

/// A named model: either the scripted simulator or a remote chat endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
}

impl ModelRef {
    pub fn scripted(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint: SCRIPTED_ENDPOINT.to_string(),
            auth_env_var: None,
        }
    }

    pub fn remote(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        auth_env_var: Option<String>,
    ) -> Result<Self, ModelError> {
        let endpoint = endpoint.into();
        if endpoint == SCRIPTED_ENDPOINT && auth_env_var.is_some() {
            return Err(ModelError::ScriptedWithAuth);
        }
        Ok(Self { name: name.into(), endpoint, auth_env_var })
    }

    pub fn is_scripted(&self) -> bool {
        self.endpoint == SCRIPTED_ENDPOINT
    }

    /// Resolve the bearer token for a remote reference, or fail before any
    /// call is made.
    pub fn resolve_credentials(&self) -> Result<Option<String>, ModelError> {
        match &self.auth_env_var {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(token) if !token.is_empty() => Ok(Some(token)),
                _ => Err(ModelError::MissingCredentials(var.clone())),
            },
        }
    }
}

/// Ordered set of rollout models; parallel rollouts are assigned round-robin
/// so heterogeneous pools spread diversity across candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ModelRef>", into = "Vec<ModelRef>")]
pub struct ModelPool {
    members: Vec<ModelRef>,
}

impl ModelPool {
    pub fn new(members: Vec<ModelRef>) -> Result<Self, ModelError> {
        if members.is_empty() {
            return Err(ModelError::InvalidPool("pool must be nonempty".into()));
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].iter().any(|other| other.name == m.name) {
                return Err(ModelError::InvalidPool(format!(
                    "duplicate member name `{}`",
                    m.name
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ModelRef] {
        &self.members
    }

    /// Model serving rollout `rollout_index` (round-robin).
    pub fn assign(&self, rollout_index: u32) -> &ModelRef {
        &self.members[rollout_index as usize % self.members.len()]
    }

    pub fn all_scripted(&self) -> bool {
        self.members.iter().all(ModelRef::is_scripted)
    }
}

impl TryFrom<Vec<ModelRef>> for ModelPool {
    type Error = ModelError;
    fn try_from(members: Vec<ModelRef>) -> Result<Self, Self::Error> {
        ModelPool::new(members)
    }
}

impl From<ModelPool> for Vec<ModelRef> {
    fn from(pool: ModelPool) -> Self {
        pool.members
    }
}

/// Everything a model sees when generating the next step: the task question,
/// the committed history, and at most one injected reflection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub question: String,
    pub history: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_summary: Option<String>,
}

impl GenerationContext {
    pub fn new(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            history: Vec::new(),
            injected_summary: None,
        }
    }

    pub fn from_parts(
        question: impl Into<String>,
        history: Vec<StepRecord>,
        injected_summary: Option<String>,
    ) -> Result<Self, DomainError> {
        validate_monotonic(&history)?;
        Ok(Self {
            question: question.into(),
            history,
            injected_summary,
        })
    }

    pub fn push_step(&mut self, step: StepRecord) {
        debug_assert!(self
            .history
            .last()
            .is_none_or(|last| last.step_number < step.step_number));
        self.history.push(step);
    }

    pub fn next_step_number(&self) -> u32 {
        self.history.last().map_or(1, |s| s.step_number + 1)
    }
}

/// Routes generation and chat calls for a run: scripted references hit the
/// bound simulator, everything else goes through the chat backend.
pub struct ModelRuntime {
    world: Option<ScriptedWorld>,
    backend: Arc<dyn ChatBackend>,
}

impl ModelRuntime {
    pub fn new(world: Option<ScriptedWorld>, backend: Arc<dyn ChatBackend>) -> Self {
        Self { world, backend }
    }

    /// Simulator-only runtime; any remote call fails loudly.
    pub fn scripted(world: ScriptedWorld) -> Self {
        Self {
            world: Some(world),
            backend: Arc::new(crate::gateway::NoRemoteBackend),
        }
    }

    pub fn world(&self) -> Option<&ScriptedWorld> {
        self.world.as_ref()
    }

    /// Generate the next step. Remote transport failures after retries are
    /// materialized in the step's `error` field; only configuration problems
    /// surface as `Err`.
    pub async fn generate(
        &self,
        model: &ModelRef,
        ctx: &GenerationContext,
        params: &SamplingParams,
    ) -> Result<StepRecord, ModelError> {
        if model.is_scripted() {
            let world = self.world.as_ref().ok_or(ModelError::NoScriptedWorld)?;
            return Ok(world.generate(ctx, params));
        }
        model.resolve_credentials()?;
        let prompt = render_policy_prompt(ctx);
        let step_number = ctx.next_step_number();
        match self.backend.chat(model, &prompt, params).await {
            Ok(text) => {
                let trimmed = text.trim().to_string();
                Ok(StepRecord::new(step_number, text, trimmed, ""))
            }
            Err(err @ ModelError::MissingCredentials(_)) => Err(err),
            Err(err) => {
                let mut step = StepRecord::new(step_number, "", "", "");
                step.error = Some(err.to_string());
                Ok(step)
            }
        }
    }

    /// Raw completion call for judge, reflection, and remote policy prompts.
    pub async fn chat(
        &self,
        model: &ModelRef,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<String, ModelError> {
        if model.is_scripted() {
            return Err(ModelError::ScriptedChat(model.name.clone()));
        }
        model.resolve_credentials()?;
        self.backend.chat(model, prompt, params).await
    }
}

/// Render a generation context into a single policy prompt for remote
/// backends.
pub fn render_policy_prompt(ctx: &GenerationContext) -> String {
    let mut out = String::new();
    out.push_str("You are an agent solving a task step by step.\n");
    out.push_str(&format!(
        "When the answer is known, reply with a single line starting with `{FINAL_ANSWER_MARKER}` followed by the answer.\n\n"
    ));
    out.push_str(&format!("Task:\n{}\n", ctx.question));
    if !ctx.history.is_empty() {
        out.push_str("\nPrevious steps (oldest first):\n");
        for step in &ctx.history {
            out.push_str(&format!(
                "- step {}: {}\n  action output: {}\n",
                step.step_number, step.model_output, step.action_output
            ));
            if !step.observations.is_empty() {
                out.push_str(&format!("  observations: {}\n", step.observations));
            }
            if let Some(err) = &step.error {
                out.push_str(&format!("  error: {err}\n"));
            }
        }
    }
    if let Some(summary) = &ctx.injected_summary {
        out.push_str(&format!("\n{summary}\n"));
    }
    out.push_str("\nNext step:");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_param_bounds() {
        assert!(SamplingParams::new(0.0, 1.0, 1).is_ok());
        assert!(SamplingParams::new(-0.1, 1.0, 1).is_err());
        assert!(SamplingParams::new(1.0, 0.0, 1).is_err());
        assert!(SamplingParams::new(1.0, 1.1, 1).is_err());
    }

    #[test]
    fn pool_assignment_is_round_robin() {
        let pool = ModelPool::new(vec![
            ModelRef::scripted("a"),
            ModelRef::scripted("b"),
            ModelRef::scripted("c"),
            ModelRef::scripted("d"),
        ])
        .unwrap();
        let names: Vec<&str> = (0..4).map(|i| pool.assign(i).name.as_str()).collect();
        assert_eq!(names, vec!["a", "b", "c", "d"]);

        let single = ModelPool::new(vec![ModelRef::scripted("a")]).unwrap();
        assert_eq!(single.assign(17).name, "a");

        let pair = ModelPool::new(vec![ModelRef::scripted("a"), ModelRef::scripted("b")]).unwrap();
        assert_eq!(pair.assign(5).name, "b");
    }

    #[test]
    fn pool_rejects_duplicates_and_empty() {
        assert!(ModelPool::new(vec![]).is_err());
        assert!(ModelPool::new(vec![ModelRef::scripted("a"), ModelRef::scripted("a")]).is_err());
    }

    #[test]
    fn scripted_refs_never_carry_auth() {
        let err = ModelRef::remote("sim", SCRIPTED_ENDPOINT, Some("KEY".into()));
        assert!(matches!(err, Err(ModelError::ScriptedWithAuth)));
        assert!(ModelRef::scripted("sim").auth_env_var.is_none());
    }

    #[test]
    fn context_tracks_step_numbers() {
        let mut ctx = GenerationContext::new("q");
        assert_eq!(ctx.next_step_number(), 1);
        ctx.push_step(StepRecord::new(1, "m", "a", ""));
        assert_eq!(ctx.next_step_number(), 2);

        let bad = GenerationContext::from_parts(
            "q",
            vec![StepRecord::new(2, "m", "a", ""), StepRecord::new(1, "m", "a", "")],
            None,
        );
        assert!(bad.is_err());
    }
}
