//! Shared helpers for integration tests: config builders, scripted
//! environments, and counting wrappers.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use ttscale::ledger::SharedLedger;
use ttscale::merging::MergeMethod;
use ttscale::models::{ModelPool, ModelRef, ModelRuntime, SamplingParams};
use ttscale::reflection::{ReflectError, ReflectionNote, ReflectionPolicy, Reflector};
use ttscale::scripted::{ScriptedJudge, ScriptedWorld};
use ttscale::strategies::{RunConfig, RunEnv, Strategy, VerifyMethod};
use ttscale::domain::{StepRecord, Task};
use ttscale::verification::{Candidates, Selection, VerifierVerdict, Verifier, VerifyError};

pub fn cfg(strategy: Strategy, n: u32, k: u32, cap: u32, run_seed: u64) -> RunConfig {
    RunConfig {
        strategy,
        sample_width: n,
        beam_width: k,
        subtree_count: 1,
        step_cap: cap,
        reflection: ReflectionPolicy::off(),
        verify_method: VerifyMethod::Listwise,
        merge_method: MergeMethod::Listwise,
        pool: ModelPool::new(vec![ModelRef::scripted("sim")]).unwrap(),
        params: SamplingParams::default().with_seed(run_seed),
    }
}

pub fn task(id: &str) -> Task {
    let question = format!("question for {id}");
    let gold = ScriptedWorld::expected_answer(&question);
    Task::new(id, question, 1, Some(gold)).unwrap()
}

/// Environment with the scripted world and its task-aware oracle judge.
pub fn scripted_env(world: &ScriptedWorld, task: &Task) -> RunEnv {
    RunEnv {
        runtime: Arc::new(ModelRuntime::scripted(world.clone())),
        verifier: Arc::new(ScriptedJudge::for_task(world.clone(), task)),
        reflector: None,
        ledger: SharedLedger::new(),
    }
}

/// Environment with an explicit judge.
pub fn env_with(world: &ScriptedWorld, verifier: Arc<dyn Verifier>) -> RunEnv {
    RunEnv {
        runtime: Arc::new(ModelRuntime::scripted(world.clone())),
        verifier,
        reflector: None,
        ledger: SharedLedger::new(),
    }
}

/// Value-tree world: eleven tokens v00..v10 carrying values 0..=10.
pub fn value_tree_world(seed: u64, depth: u32) -> ScriptedWorld {
    let mut per_step_value = BTreeMap::new();
    for v in 0..=10u8 {
        per_step_value.insert(format!("v{v:02}"), v);
    }
    ScriptedWorld::with_step_values(seed, 0.5, depth, per_step_value).unwrap()
}

/// Judge wrapper counting every score/select invocation.
pub struct CountingVerifier {
    inner: Arc<dyn Verifier>,
    pub score_calls: AtomicU64,
    pub select_calls: AtomicU64,
}

impl CountingVerifier {
    pub fn new(inner: Arc<dyn Verifier>) -> Self {
        Self { inner, score_calls: AtomicU64::new(0), select_calls: AtomicU64::new(0) }
    }

    pub fn total(&self) -> u64 {
        self.score_calls.load(Ordering::Relaxed) + self.select_calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl Verifier for CountingVerifier {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        history: &[StepRecord],
    ) -> Result<VerifierVerdict, VerifyError> {
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score_step(candidate, history).await
    }

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        history: &[StepRecord],
    ) -> Result<Selection, VerifyError> {
        self.select_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.select_among(candidates, history).await
    }
}

/// Reflector wrapper counting invocations.
pub struct CountingReflector {
    inner: Arc<dyn Reflector>,
    pub calls: AtomicU64,
}

impl CountingReflector {
    pub fn new(inner: Arc<dyn Reflector>) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }
}

#[async_trait]
impl Reflector for CountingReflector {
    async fn reflect(
        &self,
        step: &StepRecord,
        history: &[StepRecord],
    ) -> Result<ReflectionNote, ReflectError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.reflect(step, history).await
    }
}

/// Serialize candidate trajectories for byte-exact comparisons.
pub fn trajectory_bytes(candidates: &[ttscale::Trajectory]) -> String {
    candidates
        .iter()
        .map(|t| serde_json::to_string(t).unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}
