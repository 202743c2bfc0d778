//! Full-run orchestration: execute the configured strategy over a task set,
//! merge candidates, score outcomes, and assemble the persistable artifact.

use std::sync::Arc;

use futures::StreamExt;
use thiserror::Error;

use crate::artifact::{RunArtifact, RunManifest, TaskArtifact, TemplateVersions};
use crate::bench::{build_report, exact_match, BenchError, TaskOutcome};
use crate::domain::Task;
use crate::gateway::{ChatBackend, HttpGateway, NoRemoteBackend, RetryPolicy};
use crate::ledger::{CallKind, SharedLedger};
use crate::merging::{merge, MergeDecision};
use crate::models::{ModelError, ModelRef, ModelRuntime, SamplingParams};
use crate::reflection::{LlmReflector, ReflectionMode, Reflector};
use crate::scripted::{ScriptedJudge, ScriptedReflector, ScriptedWorld};
use crate::seeds::{hash_str, mix};
use crate::strategies::{run_strategy, Incident, RunConfig, RunEnv, StrategyError};
use crate::verification::{JudgeClient, Verifier};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("run configuration invalid: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

/// Resolved run description: the strategy config plus everything the engine
/// needs to wire models, judges, and reflection.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: RunConfig,
    /// Scripted world; required when any involved model reference is
    /// scripted.
    pub world: Option<ScriptedWorld>,
    /// Judge model; defaults to the first pool member.
    pub judge: Option<ModelRef>,
    /// Reflection model; defaults to the judge.
    pub reflection_model: Option<ModelRef>,
    /// Wrong-verdict probability for the scripted judge (simulating a noisy
    /// process reward model).
    pub judge_error_prob: f64,
    /// Bound on concurrent remote calls and on tasks in flight.
    pub max_in_flight: usize,
}

impl RunSpec {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            world: None,
            judge: None,
            reflection_model: None,
            judge_error_prob: 0.0,
            max_in_flight: 8,
        }
    }

    pub fn with_world(mut self, world: ScriptedWorld) -> Self {
        self.world = Some(world);
        self
    }

    fn judge_ref(&self) -> ModelRef {
        self.judge
            .clone()
            .unwrap_or_else(|| self.config.pool.members()[0].clone())
    }

    fn reflection_ref(&self) -> ModelRef {
        self.reflection_model.clone().unwrap_or_else(|| self.judge_ref())
    }

    fn all_scripted(&self) -> bool {
        self.config.pool.all_scripted()
            && self.judge_ref().is_scripted()
            && self.reflection_ref().is_scripted()
    }

    /// Fail fast on structural problems: invalid strategy config, a missing
    /// scripted world, or unresolvable remote credentials — all before any
    /// model call.
    pub fn validate(&self) -> Result<(), RunError> {
        self.config
            .validate()
            .map_err(|err| RunError::Config(err.to_string()))?;
        let needs_world = self.config.pool.members().iter().any(ModelRef::is_scripted)
            || self.judge_ref().is_scripted()
            || self.reflection_ref().is_scripted();
        if needs_world && self.world.is_none() {
            return Err(RunError::Config(
                "a scripted model reference requires a scripted world".into(),
            ));
        }
        for member in self.config.pool.members() {
            member.resolve_credentials()?;
        }
        self.judge_ref().resolve_credentials()?;
        self.reflection_ref().resolve_credentials()?;
        Ok(())
    }
}

/// Judge decoding is greedy regardless of the rollout sampling knobs.
fn judge_params(run_seed: u64, salt: &str) -> SamplingParams {
    SamplingParams { temperature: 0.0, top_p: 1.0, seed: mix(run_seed, hash_str(salt)) }
}

fn verifier_for_task(
    spec: &RunSpec,
    runtime: &Arc<ModelRuntime>,
    task: &Task,
) -> Arc<dyn Verifier> {
    let judge_ref = spec.judge_ref();
    if judge_ref.is_scripted() {
        let world = spec.world.clone().expect("validated: scripted judge has a world");
        let judge = ScriptedJudge::for_task(world, task)
            .with_error_prob(spec.judge_error_prob, hash_str(&task.id));
        Arc::new(judge)
    } else {
        Arc::new(JudgeClient::new(
            runtime.clone(),
            judge_ref,
            judge_params(spec.config.params.seed, "judge"),
        ))
    }
}

fn reflector_for_run(spec: &RunSpec, runtime: &Arc<ModelRuntime>) -> Option<Arc<dyn Reflector>> {
    if spec.config.reflection.mode == ReflectionMode::Off {
        return None;
    }
    let model = spec.reflection_ref();
    if model.is_scripted() {
        let world = spec.world.clone().expect("validated: scripted reflector has a world");
        Some(Arc::new(ScriptedReflector::new(world)))
    } else {
        Some(Arc::new(LlmReflector::new(
            runtime.clone(),
            model,
            judge_params(spec.config.params.seed, "reflection"),
        )))
    }
}

/// Build the model runtime for a spec. Scripted-only specs get a backend
/// that rejects any remote call, so a run that claims to be offline really
/// is.
pub fn runtime_for(spec: &RunSpec) -> Arc<ModelRuntime> {
    let backend: Arc<dyn ChatBackend> = if spec.all_scripted() {
        Arc::new(NoRemoteBackend)
    } else {
        Arc::new(HttpGateway::new(spec.max_in_flight, RetryPolicy::default()))
    };
    Arc::new(ModelRuntime::new(spec.world.clone(), backend))
}

/// Execute one task end to end: strategy, merge, outcome. Task-level
/// failures are converted into failed outcomes with incidents; they never
/// abort the run.
pub async fn run_task(
    spec: &RunSpec,
    runtime: &Arc<ModelRuntime>,
    task: &Task,
) -> TaskArtifact {
    let ledger = SharedLedger::new();
    let verifier = verifier_for_task(spec, runtime, task);
    let env = RunEnv {
        runtime: runtime.clone(),
        verifier: verifier.clone(),
        reflector: reflector_for_run(spec, runtime),
        ledger: ledger.clone(),
    };

    let mut incidents: Vec<Incident> = Vec::new();
    let (trajectories, trees) = match run_strategy(task, &spec.config, &env).await {
        Ok(output) => {
            incidents.extend(output.incidents);
            (output.candidates, output.trees)
        }
        Err(err @ (StrategyError::InvalidConfig(_) | StrategyError::WrongStrategy { .. })) => {
            // Structural config problems surface identically on every task;
            // record and produce a failed outcome.
            incidents.push(Incident { scope: "strategy".into(), detail: err.to_string() });
            (Vec::new(), Vec::new())
        }
        Err(err) => {
            incidents.push(Incident {
                scope: "strategy".into(),
                detail: format!("strategy failed ({err}); task marked failed"),
            });
            (Vec::new(), Vec::new())
        }
    };

    let decision: Option<MergeDecision> = if trajectories.is_empty() {
        None
    } else {
        ledger.record(CallKind::Merge);
        match merge(spec.config.merge_method, &trajectories, verifier.as_ref()).await {
            Ok(mut decision) => {
                incidents.extend(decision.incidents.drain(..).map(|detail| Incident {
                    scope: "merge".into(),
                    detail,
                }));
                Some(decision)
            }
            Err(err) => {
                incidents.push(Incident {
                    scope: "merge".into(),
                    detail: format!("merge failed ({err})"),
                });
                None
            }
        }
    };

    let gold = task.ground_truth.as_deref();
    let rollout_correct: Vec<bool> = trajectories
        .iter()
        .map(|t| match (&t.final_answer, gold) {
            (Some(answer), Some(gold)) => exact_match(answer, gold),
            _ => false,
        })
        .collect();
    let merged_correct = match (&decision, gold) {
        (Some(d), Some(gold)) => exact_match(&d.final_answer, gold),
        _ => false,
    };

    TaskArtifact {
        outcome: TaskOutcome {
            task_id: task.id.clone(),
            level: task.level,
            rollout_correct,
            merged_correct,
            calls: ledger.snapshot(),
        },
        task: task.clone(),
        trajectories,
        trees,
        merge: decision,
        incidents,
    }
}

/// Execute a full run over `tasks`, with bounded task parallelism, gathering
/// results in input order.
pub async fn execute_run(spec: &RunSpec, tasks: &[Task]) -> Result<RunArtifact, RunError> {
    spec.validate()?;
    let runtime = runtime_for(spec);

    let artifacts: Vec<TaskArtifact> = futures::stream::iter(tasks)
        .map(|task| run_task(spec, &runtime, task))
        .buffered(spec.max_in_flight.max(1))
        .collect()
        .await;

    let outcomes: Vec<TaskOutcome> = artifacts.iter().map(|a| a.outcome.clone()).collect();
    let report = build_report(&outcomes, &spec.config)?;
    let ledger = outcomes
        .iter()
        .fold(crate::ledger::CallLedger::default(), |acc, o| acc.add(&o.calls));

    Ok(RunArtifact {
        manifest: RunManifest {
            config: spec.config.clone(),
            world: spec.world.clone(),
            template_versions: TemplateVersions::default(),
        },
        report,
        ledger,
        tasks: artifacts,
    })
}

/// Deterministic synthetic task whose gold answer matches what a productive
/// scripted rollout produces.
pub fn synthetic_task(index: usize, level: u8) -> Task {
    let question = format!("synthetic question {index}");
    let gold = ScriptedWorld::expected_answer(&question);
    Task::new(format!("synth-{index:05}"), question, level, Some(gold))
        .expect("synthetic tasks are valid")
}

/// A batch of synthetic tasks cycling through the three levels.
pub fn synthetic_tasks(count: usize) -> Vec<Task> {
    (0..count)
        .map(|i| synthetic_task(i, (i % 3) as u8 + 1))
        .collect()
}
