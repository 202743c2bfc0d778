//! Parallel-sampling strategies over agent rollouts: single-rollout
//! baseline, best-of-N over complete trajectories, step-wise best-of-N,
//! beam search, and divided beam search over independently seeded subtrees.
//!
//! Degenerate configurations collapse exactly: width-1 best-of-N (plain or
//! step-wise) replays the baseline bit for bit, and a single-subtree divided
//! search is a plain beam search. The seed chaining in [`crate::seeds`]
//! carries those identities.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{StepRecord, Task, Trajectory};
use crate::ledger::{CallKind, SharedLedger};
use crate::merging::MergeMethod;
use crate::models::{GenerationContext, ModelError, ModelPool, ModelRuntime, SamplingParams};
use crate::reflection::{
    inject_summary, render_note, should_reflect, ReflectError, ReflectionPolicy, Reflector,
};
use crate::seeds::{candidate_seed, rollout_seed, subtree_seed};
use crate::tree::{NodeId, SearchTree, TreeError};
use crate::verification::{select_best, Candidates, Verifier, VerifyError};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("operation requires strategy `{expected}` but config selects `{actual}`")]
    WrongStrategy { expected: &'static str, actual: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reflect(#[from] ReflectError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("every subtree of the divided search failed; last error: {0}")]
    AllSubtreesFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    Bon,
    BonWise,
    Beam,
    Dvts,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Bon => "bon",
            Strategy::BonWise => "bon_wise",
            Strategy::Beam => "beam",
            Strategy::Dvts => "dvts",
        }
    }
}

/// How candidate steps are vetted during a search: per-step scoring or
/// list-wise selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMethod {
    Scoring,
    Listwise,
}

/// Full strategy configuration for a run. `params.seed` is the run seed from
/// which every rollout, candidate, and subtree seed is derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// N: candidates sampled per rollout set or per expansion.
    pub sample_width: u32,
    /// K: beam slots.
    pub beam_width: u32,
    /// Subtree count for the divided search.
    pub subtree_count: u32,
    pub step_cap: u32,
    pub reflection: ReflectionPolicy,
    pub verify_method: VerifyMethod,
    pub merge_method: MergeMethod,
    pub pool: ModelPool,
    pub params: SamplingParams,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.sample_width == 0 {
            return Err(StrategyError::InvalidConfig("sample_width must be >= 1".into()));
        }
        if self.beam_width == 0 {
            return Err(StrategyError::InvalidConfig("beam_width must be >= 1".into()));
        }
        if self.subtree_count == 0 {
            return Err(StrategyError::InvalidConfig("subtree_count must be >= 1".into()));
        }
        if self.step_cap == 0 {
            return Err(StrategyError::InvalidConfig("step_cap must be >= 1".into()));
        }
        // The beam must be fillable from the first level on: one frontier
        // leaf expands into N candidates, so K <= N implies K <= N x
        // frontier at every later level too.
        if matches!(self.strategy, Strategy::Beam | Strategy::Dvts)
            && self.beam_width > self.sample_width
        {
            return Err(StrategyError::InvalidConfig(format!(
                "beam_width {} exceeds sample_width {}; the beam could never fill",
                self.beam_width, self.sample_width
            )));
        }
        self.reflection
            .validate()
            .map_err(|e| StrategyError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    fn expect_strategy(&self, expected: Strategy) -> Result<(), StrategyError> {
        if self.strategy == expected {
            Ok(())
        } else {
            Err(StrategyError::WrongStrategy {
                expected: expected.as_str(),
                actual: self.strategy.as_str().to_string(),
            })
        }
    }
}

/// An anomaly tolerated during a run: judge fallbacks, failed reflections,
/// errored subtrees. Incidents never abort a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub scope: String,
    pub detail: String,
}

/// Shared services a strategy executes against.
pub struct RunEnv {
    pub runtime: Arc<ModelRuntime>,
    pub verifier: Arc<dyn Verifier>,
    pub reflector: Option<Arc<dyn Reflector>>,
    pub ledger: SharedLedger,
}

/// What a strategy produces for one task: candidate trajectories in
/// deterministic order, the search tree(s) that generated them, and any
/// incidents, in deterministic order.
#[derive(Debug)]
pub struct StrategyOutput {
    pub candidates: Vec<Trajectory>,
    pub trees: Vec<SearchTree>,
    pub incidents: Vec<Incident>,
}

struct Engine<'a> {
    task: &'a Task,
    cfg: &'a RunConfig,
    env: &'a RunEnv,
}

impl Engine<'_> {
    /// One policy call: generate a candidate step for `ctx` using the model
    /// assigned to `model_index` and the given derived seed.
    async fn generate(
        &self,
        ctx: &GenerationContext,
        model_index: u32,
        seed: u64,
    ) -> Result<(StepRecord, u64), StrategyError> {
        let model = self.cfg.pool.assign(model_index);
        let params = self.cfg.params.with_seed(seed);
        self.env.ledger.record(CallKind::Policy);
        let step = self.env.runtime.generate(model, ctx, &params).await?;
        Ok((step, seed))
    }

    /// Post-commit hook: score the committed step when the reflection policy
    /// needs one, then reflect when triggered. Returns the note to inject
    /// into the next generation context.
    async fn finalize_committed(
        &self,
        step: &mut StepRecord,
        history: &[StepRecord],
        scope: &str,
        incidents: &mut Vec<Incident>,
    ) -> Result<Option<crate::reflection::ReflectionNote>, StrategyError> {
        if self.cfg.reflection.needs_score() && step.score.is_none() {
            self.env.ledger.record(CallKind::Verifier);
            match self.env.verifier.score_step(step, history).await {
                Ok(verdict) => step.score = verdict.score,
                Err(err) => incidents.push(Incident {
                    scope: scope.to_string(),
                    detail: format!("scoring committed step failed ({err})"),
                }),
            }
        }

        let trigger = match should_reflect(&self.cfg.reflection, step.score) {
            Ok(t) => t,
            Err(ReflectError::MissingScore) => {
                incidents.push(Incident {
                    scope: scope.to_string(),
                    detail: "committed step has no score; reflection skipped".into(),
                });
                false
            }
            Err(other) => return Err(other.into()),
        };
        if !trigger {
            return Ok(None);
        }
        let Some(reflector) = &self.env.reflector else {
            return Ok(None);
        };
        self.env.ledger.record(CallKind::Reflection);
        match reflector.reflect(step, history).await {
            Ok(note) => {
                step.reflection = Some(note.clone());
                Ok(Some(note))
            }
            Err(err) => {
                incidents.push(Incident {
                    scope: scope.to_string(),
                    detail: format!("reflection failed ({err}); continuing without a note"),
                });
                Ok(None)
            }
        }
    }

    /// One linear rollout up to the step cap or a terminal step.
    async fn rollout_chain(
        &self,
        rollout_index: u32,
    ) -> Result<(Vec<StepRecord>, Vec<Incident>), StrategyError> {
        let seed = rollout_seed(self.cfg.params.seed, &self.task.id, rollout_index);
        let mut ctx = GenerationContext::new(&self.task.question);
        let mut chain = Vec::new();
        let mut incidents = Vec::new();

        for depth in 1..=self.cfg.step_cap {
            let (mut step, _) = self.generate(&ctx, rollout_index, seed).await?;
            let scope = format!("rollout {rollout_index} depth {depth}");
            let note = self
                .finalize_committed(&mut step, &ctx.history, &scope, &mut incidents)
                .await?;
            let terminal = step.is_terminal();
            ctx.push_step(step.clone());
            chain.push(step);
            // A summary informs exactly the next generation; it expires
            // unless a fresh note replaces it.
            ctx.injected_summary = None;
            if let Some(note) = note {
                ctx = inject_summary(&ctx, &note);
            }
            if terminal {
                break;
            }
        }
        Ok((chain, incidents))
    }

    /// Choose among sibling candidate steps per the configured verify
    /// method. Attaches scores under the scoring method. Falls back to
    /// candidate 0 on verifier failure, recording the incident.
    async fn choose_step(
        &self,
        cands: &mut [(StepRecord, u64)],
        shared_history: &[StepRecord],
        scope: &str,
        incidents: &mut Vec<Incident>,
    ) -> Result<usize, StrategyError> {
        if cands.len() <= 1 {
            return Ok(0);
        }
        match self.cfg.verify_method {
            VerifyMethod::Listwise => {
                self.env.ledger.record(CallKind::Verifier);
                let steps: Vec<StepRecord> = cands.iter().map(|(s, _)| s.clone()).collect();
                match select_best(
                    self.env.verifier.as_ref(),
                    &Candidates::Steps(&steps),
                    shared_history,
                )
                .await
                {
                    Ok(selection) => {
                        let index = selection.index().min(cands.len() - 1);
                        if let Some(incident) = selection.incident {
                            incidents.push(Incident { scope: scope.to_string(), detail: incident });
                        }
                        Ok(index)
                    }
                    Err(err) => {
                        incidents.push(Incident {
                            scope: scope.to_string(),
                            detail: format!("step selection failed ({err}); fell back to candidate 0"),
                        });
                        Ok(0)
                    }
                }
            }
            VerifyMethod::Scoring => {
                let futures = cands.iter().map(|(step, _)| {
                    self.env.ledger.record(CallKind::Verifier);
                    self.env.verifier.score_step(step, shared_history)
                });
                let verdicts = futures::future::join_all(futures).await;
                let mut best: usize = 0;
                let mut best_score: i32 = -1;
                for (i, verdict) in verdicts.into_iter().enumerate() {
                    match verdict {
                        Ok(v) => {
                            let score = v.score.unwrap_or(0);
                            cands[i].0.score = Some(score);
                            if i32::from(score) > best_score {
                                best_score = i32::from(score);
                                best = i;
                            }
                        }
                        Err(err) => incidents.push(Incident {
                            scope: scope.to_string(),
                            detail: format!("scoring candidate {i} failed ({err}); treated as lowest"),
                        }),
                    }
                }
                if best_score < 0 {
                    incidents.push(Incident {
                        scope: scope.to_string(),
                        detail: "every candidate scoring failed; fell back to candidate 0".into(),
                    });
                }
                Ok(best)
            }
        }
    }

    fn stamp(&self, trajectories: &mut [Trajectory], trees: &mut [SearchTree]) {
        let snapshot = self.env.ledger.total();
        for t in trajectories.iter_mut() {
            t.calls_used = snapshot;
        }
        for tree in trees.iter_mut() {
            tree.calls_snapshot = snapshot;
        }
    }
}

/// Build a tree from independent rollout chains: the root fans out to one
/// head per rollout, each chain hanging below its head.
fn graft_chains(
    task: &Task,
    chains: &[(Vec<StepRecord>, u64)],
) -> Result<SearchTree, StrategyError> {
    let mut tree = SearchTree::new(task.clone());
    let heads: Vec<(StepRecord, u64)> = chains
        .iter()
        .filter(|(chain, _)| !chain.is_empty())
        .map(|(chain, seed)| (chain[0].clone(), *seed))
        .collect();
    if heads.is_empty() {
        return Ok(tree);
    }
    let head_ids = tree.expand(0, heads)?;
    let mut head_iter = head_ids.into_iter();
    for (chain, seed) in chains {
        if chain.is_empty() {
            continue;
        }
        let mut parent = head_iter.next().expect("one head per nonempty chain");
        for step in &chain[1..] {
            parent = tree.expand(parent, vec![(step.clone(), *seed)])?[0];
        }
    }
    Ok(tree)
}

// ---------------------------------------------------------------------------
// Baseline and best-of-N
// ---------------------------------------------------------------------------

/// Single linear rollout.
pub async fn run_baseline(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    cfg.expect_strategy(Strategy::Baseline)?;
    let engine = Engine { task, cfg, env };
    let (chain, incidents) = engine.rollout_chain(0).await?;
    let seed = rollout_seed(cfg.params.seed, &task.id, 0);
    let mut tree = graft_chains(task, &[(chain.clone(), seed)])?;
    let mut trajectories = vec![Trajectory::from_steps(&task.id, chain, cfg.step_cap)];
    engine.stamp(&mut trajectories, std::slice::from_mut(&mut tree));
    Ok(StrategyOutput { candidates: trajectories, trees: vec![tree], incidents })
}

/// N independent rollouts with per-rollout derived seeds and round-robin
/// model assignment. A rollout whose steps all error still yields a (failed)
/// trajectory; the batch never aborts wholesale.
pub async fn run_bon(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    cfg.expect_strategy(Strategy::Bon)?;
    let engine = Engine { task, cfg, env };
    let futures = (0..cfg.sample_width).map(|i| engine.rollout_chain(i));
    let results = futures::future::join_all(futures).await;

    let mut chains = Vec::with_capacity(cfg.sample_width as usize);
    let mut incidents = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        let (chain, rollout_incidents) = result?;
        incidents.extend(rollout_incidents);
        chains.push((chain, rollout_seed(cfg.params.seed, &task.id, i as u32)));
    }

    let mut tree = graft_chains(task, &chains)?;
    let mut trajectories: Vec<Trajectory> = chains
        .into_iter()
        .map(|(chain, _)| Trajectory::from_steps(&task.id, chain, cfg.step_cap))
        .collect();
    engine.stamp(&mut trajectories, std::slice::from_mut(&mut tree));
    Ok(StrategyOutput { candidates: trajectories, trees: vec![tree], incidents })
}

// ---------------------------------------------------------------------------
// Step-wise best-of-N
// ---------------------------------------------------------------------------

/// At each depth, sample N candidate steps, commit the verifier's choice,
/// and keep the rejected siblings in the tree as dead leaves.
pub async fn run_bon_wise(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    cfg.expect_strategy(Strategy::BonWise)?;
    let engine = Engine { task, cfg, env };
    let mut tree = SearchTree::new(task.clone());
    let base_seed = rollout_seed(cfg.params.seed, &task.id, 0);
    tree.nodes[0].seed = base_seed;

    let mut ctx = GenerationContext::new(&task.question);
    let mut parent_node: NodeId = 0;
    let mut parent_seed = base_seed;
    let mut committed_steps: Vec<StepRecord> = Vec::new();
    let mut incidents = Vec::new();

    for depth in 1..=cfg.step_cap {
        let futures = (0..cfg.sample_width)
            .map(|i| engine.generate(&ctx, i, candidate_seed(parent_seed, depth, i)));
        let generated = futures::future::join_all(futures).await;
        let mut cands: Vec<(StepRecord, u64)> = Vec::with_capacity(cfg.sample_width as usize);
        for result in generated {
            cands.push(result?);
        }

        let scope = format!("depth {depth}");
        let chosen = engine
            .choose_step(&mut cands, &ctx.history, &scope, &mut incidents)
            .await?;

        let mut committed = cands[chosen].0.clone();
        let committed_seed = cands[chosen].1;
        let note = engine
            .finalize_committed(&mut committed, &ctx.history, &scope, &mut incidents)
            .await?;
        cands[chosen].0 = committed.clone();

        let ids = tree.expand(parent_node, cands)?;
        let committed_id = ids[chosen];
        tree.prune_frontier(&[committed_id])?;
        parent_node = committed_id;
        parent_seed = committed_seed;

        let terminal = committed.is_terminal();
        ctx.push_step(committed.clone());
        committed_steps.push(committed);
        ctx.injected_summary = None;
        if let Some(note) = note {
            ctx = inject_summary(&ctx, &note);
        }
        if terminal {
            break;
        }
    }

    let mut trajectories = vec![Trajectory::from_steps(&task.id, committed_steps, cfg.step_cap)];
    engine.stamp(&mut trajectories, std::slice::from_mut(&mut tree));
    Ok(StrategyOutput { candidates: trajectories, trees: vec![tree], incidents })
}

// ---------------------------------------------------------------------------
// Beam search
// ---------------------------------------------------------------------------

struct LevelCandidate {
    leaf: NodeId,
    step: StepRecord,
    seed: u64,
    /// Root-to-candidate steps, for judge context.
    path: Vec<StepRecord>,
}

/// Beam search seeded from the task's rollout seed.
pub async fn run_beam(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    cfg.expect_strategy(Strategy::Beam)?;
    let base = rollout_seed(cfg.params.seed, &task.id, 0);
    run_beam_seeded(task, cfg, env, base, None).await
}

/// Beam search from an explicit base seed; the divided search uses this with
/// per-subtree seeds and tags.
pub async fn run_beam_seeded(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
    base_seed: u64,
    subtree_tag: Option<u32>,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    let engine = Engine { task, cfg, env };
    let beam_width = cfg.beam_width as usize;

    let mut tree = SearchTree::new(task.clone());
    tree.nodes[0].seed = base_seed;
    tree.nodes[0].subtree_tag = subtree_tag;

    let mut frozen: Vec<NodeId> = Vec::new();
    let mut live: Vec<NodeId> = vec![0];
    let mut incidents = Vec::new();

    for depth in 1..=cfg.step_cap {
        if live.is_empty() || frozen.len() >= beam_width {
            break;
        }

        // Fan out N candidates per live leaf across the whole level. The
        // context for a leaf is its root-to-leaf path plus the summary of
        // the leaf step's own reflection note, when present.
        let mut specs: Vec<(NodeId, GenerationContext, u64, u32)> = Vec::new();
        for &leaf in &live {
            let node = tree.node(leaf)?;
            let path = tree.path_steps(leaf)?;
            let summary = node
                .step
                .as_ref()
                .and_then(|s| s.reflection.as_ref())
                .map(render_note);
            let leaf_seed = node.seed;
            for i in 0..cfg.sample_width {
                let ctx = GenerationContext {
                    question: task.question.clone(),
                    history: path.clone(),
                    injected_summary: summary.clone(),
                };
                specs.push((leaf, ctx, candidate_seed(leaf_seed, depth, i), i));
            }
        }
        let futures = specs
            .iter()
            .map(|(_, ctx, seed, i)| engine.generate(ctx, *i, *seed));
        let generated = futures::future::join_all(futures).await;

        let mut pool: Vec<LevelCandidate> = Vec::with_capacity(specs.len());
        for ((leaf, ctx, _, _), result) in specs.iter().zip(generated) {
            let (step, seed) = result?;
            pool.push(LevelCandidate { leaf: *leaf, step, seed, path: ctx.history.clone() });
        }

        // A level where every candidate errors terminates the search with
        // the best partial trajectories.
        if pool.iter().all(|c| c.step.error.is_some()) {
            incidents.push(Incident {
                scope: format!("depth {depth}"),
                detail: "every candidate at this level errored; returning partial trajectories".into(),
            });
            break;
        }

        let slots = beam_width - frozen.len();
        let kept = engine
            .rank_level(&mut pool, slots, &format!("depth {depth}"), &mut incidents)
            .await?;

        // Reflection hook on kept (committed) steps before tree insertion.
        let mut kept_sorted = kept;
        kept_sorted.sort_unstable();
        for &pool_index in &kept_sorted {
            let scope = format!("depth {depth} kept candidate {pool_index}");
            let path = pool[pool_index].path.clone();
            let mut step = pool[pool_index].step.clone();
            engine
                .finalize_committed(&mut step, &path, &scope, &mut incidents)
                .await?;
            pool[pool_index].step = step;
        }

        // Insert the whole level into the tree, leaf by leaf, then prune the
        // frontier to frozen leaves plus the kept candidates.
        let mut kept_ids: Vec<NodeId> = Vec::with_capacity(kept_sorted.len());
        for &leaf in &live {
            let members: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].leaf == leaf).collect();
            let batch: Vec<(StepRecord, u64)> = members
                .iter()
                .map(|&i| (pool[i].step.clone(), pool[i].seed))
                .collect();
            let ids = tree.expand(leaf, batch)?;
            for (member_pos, &pool_index) in members.iter().enumerate() {
                if kept_sorted.contains(&pool_index) {
                    kept_ids.push(ids[member_pos]);
                }
            }
        }
        kept_ids.sort_unstable();

        let mut next_frontier = frozen.clone();
        next_frontier.extend(&kept_ids);
        tree.prune_frontier(&next_frontier)?;

        live = Vec::new();
        for id in kept_ids {
            let terminal = tree
                .node(id)?
                .step
                .as_ref()
                .is_some_and(StepRecord::is_terminal);
            if terminal {
                frozen.push(id);
            } else {
                live.push(id);
            }
        }
    }

    // Terminated leaves: answered (frozen) plus whatever remains live, which
    // is either cap-bound or a partial result after an all-error level.
    let mut result_ids = frozen;
    result_ids.extend(live);
    result_ids.sort_unstable();

    tree.calls_snapshot = env.ledger.total();
    let mut trajectories = Vec::with_capacity(result_ids.len());
    for id in result_ids {
        let mut t = tree.extract_trajectory(id)?;
        t.terminated = t.final_answer.is_some() || t.steps.len() as u32 >= cfg.step_cap;
        trajectories.push(t);
    }
    engine.stamp(&mut trajectories, std::slice::from_mut(&mut tree));
    Ok(StrategyOutput { candidates: trajectories, trees: vec![tree], incidents })
}

impl Engine<'_> {
    /// Reduce a level's candidate pool to `slots` survivors per the verify
    /// method. Returns pool indices. Scoring ranks by (score desc, creation
    /// order asc); list-wise selection picks iteratively.
    async fn rank_level(
        &self,
        pool: &mut [LevelCandidate],
        slots: usize,
        scope: &str,
        incidents: &mut Vec<Incident>,
    ) -> Result<Vec<usize>, StrategyError> {
        if pool.len() <= slots {
            return Ok((0..pool.len()).collect());
        }
        match self.cfg.verify_method {
            VerifyMethod::Scoring => {
                let futures = pool.iter().map(|c| {
                    self.env.ledger.record(CallKind::Verifier);
                    self.env.verifier.score_step(&c.step, &c.path)
                });
                let verdicts = futures::future::join_all(futures).await;
                let mut scored: Vec<(i32, usize)> = Vec::with_capacity(pool.len());
                for (i, verdict) in verdicts.into_iter().enumerate() {
                    match verdict {
                        Ok(v) => {
                            let score = v.score.unwrap_or(0);
                            pool[i].step.score = Some(score);
                            scored.push((i32::from(score), i));
                        }
                        Err(err) => {
                            incidents.push(Incident {
                                scope: scope.to_string(),
                                detail: format!("scoring candidate {i} failed ({err}); ranked lowest"),
                            });
                            scored.push((-1, i));
                        }
                    }
                }
                // Ties break toward earlier creation order (lower node id).
                scored.sort_by_key(|&(score, order)| (std::cmp::Reverse(score), order));
                Ok(scored.into_iter().take(slots).map(|(_, i)| i).collect())
            }
            VerifyMethod::Listwise => {
                let mut remaining: Vec<usize> = (0..pool.len()).collect();
                let mut kept = Vec::with_capacity(slots);
                while kept.len() < slots {
                    if remaining.len() == 1 {
                        kept.push(remaining.pop().expect("nonempty"));
                        break;
                    }
                    let partials: Vec<Trajectory> = remaining
                        .iter()
                        .map(|&i| {
                            let mut steps = pool[i].path.clone();
                            steps.push(pool[i].step.clone());
                            Trajectory {
                                task_id: self.task.id.clone(),
                                final_answer: pool[i].step.final_answer().map(str::to_owned),
                                terminated: pool[i].step.is_terminal(),
                                steps,
                                calls_used: 0,
                            }
                        })
                        .collect();
                    self.env.ledger.record(CallKind::Verifier);
                    let pick = match select_best(
                        self.env.verifier.as_ref(),
                        &Candidates::Trajectories(&partials),
                        &[],
                    )
                    .await
                    {
                        Ok(selection) => {
                            let index = selection.index().min(remaining.len() - 1);
                            if let Some(incident) = selection.incident {
                                incidents.push(Incident {
                                    scope: scope.to_string(),
                                    detail: incident,
                                });
                            }
                            index
                        }
                        Err(err) => {
                            incidents.push(Incident {
                                scope: scope.to_string(),
                                detail: format!(
                                    "beam selection failed ({err}); kept earliest candidate"
                                ),
                            });
                            0
                        }
                    };
                    kept.push(remaining.remove(pick));
                }
                Ok(kept)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Divided beam search
// ---------------------------------------------------------------------------

/// `subtree_count` independently seeded beam searches; candidates are pooled
/// across subtrees. A failed subtree contributes nothing. With a single
/// subtree this is exactly `run_beam`, tags included.
pub async fn run_dvts(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    cfg.validate()?;
    cfg.expect_strategy(Strategy::Dvts)?;
    let task_seed = rollout_seed(cfg.params.seed, &task.id, 0);
    let mut candidates = Vec::new();
    let mut trees = Vec::new();
    let mut incidents = Vec::new();
    let mut last_error = String::new();

    for j in 0..cfg.subtree_count {
        let base = subtree_seed(task_seed, j);
        let tag = (cfg.subtree_count > 1).then_some(j);
        match run_beam_seeded(task, cfg, env, base, tag).await {
            Ok(output) => {
                candidates.extend(output.candidates);
                trees.extend(output.trees);
                incidents.extend(output.incidents.into_iter().map(|mut incident| {
                    incident.scope = format!("subtree {j} {}", incident.scope);
                    incident
                }));
            }
            Err(err) => {
                last_error = err.to_string();
                incidents.push(Incident {
                    scope: format!("subtree {j}"),
                    detail: format!("subtree failed ({err}); contributing nothing"),
                });
            }
        }
    }

    if trees.is_empty() {
        return Err(StrategyError::AllSubtreesFailed(last_error));
    }
    let snapshot = env.ledger.total();
    for t in &mut candidates {
        t.calls_used = snapshot;
    }
    for tree in &mut trees {
        tree.calls_snapshot = snapshot;
    }
    Ok(StrategyOutput { candidates, trees, incidents })
}

/// Dispatch on the configured strategy.
pub async fn run_strategy(
    task: &Task,
    cfg: &RunConfig,
    env: &RunEnv,
) -> Result<StrategyOutput, StrategyError> {
    match cfg.strategy {
        Strategy::Baseline => run_baseline(task, cfg, env).await,
        Strategy::Bon => run_bon(task, cfg, env).await,
        Strategy::BonWise => run_bon_wise(task, cfg, env).await,
        Strategy::Beam => run_beam(task, cfg, env).await,
        Strategy::Dvts => run_dvts(task, cfg, env).await,
    }
}
