//! Core domain types: tasks, action steps, and candidate trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reflection::ReflectionNote;

/// A step whose action output begins with this line terminates a trajectory;
/// the remainder of the line is the final answer.
pub const FINAL_ANSWER_MARKER: &str = "FINAL ANSWER:";

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("task question must be nonempty")]
    EmptyQuestion,
    #[error("task level must be 1, 2, or 3 (got {0})")]
    InvalidLevel(u8),
    #[error("step score must lie in 0..=10 (got {0})")]
    ScoreOutOfRange(i64),
    #[error("history step numbers must be strictly increasing")]
    NonMonotonicHistory,
}

/// One benchmark task: a question, a difficulty level, and (for scored sets)
/// the gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    pub level: u8,
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub file_refs: Vec<String>,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        level: u8,
        ground_truth: Option<String>,
    ) -> Result<Self, DomainError> {
        let question = question.into();
        if question.is_empty() {
            return Err(DomainError::EmptyQuestion);
        }
        if !(1..=3).contains(&level) {
            return Err(DomainError::InvalidLevel(level));
        }
        Ok(Self {
            id: id.into(),
            question,
            level,
            ground_truth,
            file_refs: Vec::new(),
        })
    }
}

/// One agent action step: what the model said, what the action produced, and
/// what the judge/reflector attached afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Depth of this step within its trajectory, starting at 1.
    pub step_number: u32,
    pub model_output: String,
    pub action_output: String,
    pub observations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Judge score in 0..=10 when the step was verified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<ReflectionNote>,
}

impl StepRecord {
    pub fn new(
        step_number: u32,
        model_output: impl Into<String>,
        action_output: impl Into<String>,
        observations: impl Into<String>,
    ) -> Self {
        Self {
            step_number,
            model_output: model_output.into(),
            action_output: action_output.into(),
            observations: observations.into(),
            error: None,
            score: None,
            reflection: None,
        }
    }

    /// Validated score attachment; fractional or out-of-range judge output is
    /// rejected upstream at parse time, this is the last line of defense.
    pub fn with_score(mut self, score: u8) -> Result<Self, DomainError> {
        if score > 10 {
            return Err(DomainError::ScoreOutOfRange(i64::from(score)));
        }
        self.score = Some(score);
        Ok(self)
    }

    /// The final answer carried by this step, if its action output starts
    /// with the terminal marker line.
    pub fn final_answer(&self) -> Option<&str> {
        let first_line = self.action_output.lines().next()?;
        first_line
            .strip_prefix(FINAL_ANSWER_MARKER)
            .map(str::trim)
    }

    pub fn is_terminal(&self) -> bool {
        self.final_answer().is_some()
    }
}

/// A complete or truncated rollout for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
    pub final_answer: Option<String>,
    /// True iff a final answer was produced or the step cap was reached.
    pub terminated: bool,
    /// Ledger total snapshot at the time the trajectory was extracted.
    pub calls_used: u64,
}

impl Trajectory {
    /// Assemble a trajectory from committed steps, marking termination per
    /// the step-cap contract.
    pub fn from_steps(task_id: impl Into<String>, steps: Vec<StepRecord>, step_cap: u32) -> Self {
        let final_answer = steps
            .last()
            .and_then(|s| s.final_answer())
            .map(str::to_owned);
        let terminated = final_answer.is_some() || steps.len() as u32 >= step_cap;
        Self {
            task_id: task_id.into(),
            steps,
            final_answer,
            terminated,
            calls_used: 0,
        }
    }

    pub fn last_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}

/// Check that step numbers increase strictly; shared by context and
/// trajectory validation.
pub fn validate_monotonic(steps: &[StepRecord]) -> Result<(), DomainError> {
    let ok = steps.windows(2).all(|w| w[0].step_number < w[1].step_number);
    if ok {
        Ok(())
    } else {
        Err(DomainError::NonMonotonicHistory)
    }
}
