//! Test-time scaling engine for step-based agent rollouts.
//!
//! The crate runs agent tasks as trajectory trees under parallel-sampling
//! strategies (best-of-N, step-wise best-of-N, beam search, divided beam
//! search), vets steps with process-reward judges (scoring or list-wise),
//! optionally reflects on weak steps and injects the summary into the next
//! generation, and reduces candidate trajectories to one answer by voting,
//! scoring, or list-wise judgment. A deterministic scripted world makes
//! every piece testable offline; a chat gateway serves real backends.

pub mod artifact;
pub mod bench;
pub mod domain;
pub mod gateway;
pub mod ledger;
pub mod merging;
pub mod models;
pub mod reflection;
pub mod runner;
pub mod scripted;
pub mod seeds;
pub mod strategies;
pub mod tree;
pub mod verification;

pub use domain::{StepRecord, Task, Trajectory, FINAL_ANSWER_MARKER};
pub use ledger::{CallKind, CallLedger, SharedLedger};
pub use models::{GenerationContext, ModelPool, ModelRef, ModelRuntime, SamplingParams};
pub use reflection::{ReflectionNote, ReflectionPolicy};
pub use runner::{execute_run, RunSpec};
pub use scripted::ScriptedWorld;
pub use strategies::{RunConfig, RunEnv, Strategy, StrategyOutput, VerifyMethod};
pub use tree::{SearchNode, SearchTree};
pub use verification::{VerdictKind, VerifierVerdict};
