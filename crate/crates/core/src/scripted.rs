//! Deterministic scripted model: a desk-scale world in which rollouts,
//! judges, and reflection are pure functions of seeds.
//!
//! Each generated step draws two values from a keyed RNG: whether the step
//! is productive (with probability `success_prob`) and which action token it
//! carries. Tokens map to judge-visible integer values via `per_step_value`;
//! productive steps draw from the upper half of the configured value levels,
//! unproductive ones from the lower half. At depth `steps_to_answer` the
//! step emits a terminal answer — the expected answer for the question when
//! productive, a seed-keyed decoy otherwise.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::domain::{StepRecord, Task, Trajectory, FINAL_ANSWER_MARKER};
use crate::merging::normalize_answer;
use crate::models::{GenerationContext, SamplingParams};
use crate::reflection::{ConfidenceLevel, ReflectError, ReflectionNote, Reflector};
use crate::seeds::{candidate_seed, hash_str, mix, mix3, unit};
use crate::verification::{Candidates, Selection, VerifierVerdict, VerifyError, Verifier};

const SALT_GOOD: u64 = 0x9d39_2474_a1b2_0e11;
const SALT_TOKEN: u64 = 0x41c6_44e0_7bd8_92f3;
const SALT_DECOY: u64 = 0x6a09_e667_f3bc_c908;
const SALT_JUDGE: u64 = 0xbb67_ae85_84ca_a73b;
const MASK48: u64 = 0xffff_ffff_ffff;

#[derive(Debug, Error)]
pub enum ScriptedError {
    #[error("success_prob must lie in [0, 1] (got {0})")]
    BadProbability(f64),
    #[error("steps_to_answer must be at least 1")]
    ZeroSteps,
    #[error("per_step_value must be nonempty")]
    NoTokens,
    #[error("step value for token `{token}` must lie in 0..=10 (got {value})")]
    BadValue { token: String, value: u8 },
    #[error("action token `{0}` must be nonempty and free of whitespace")]
    BadToken(String),
}

/// One deterministic step draw: the action token, its configured value, and
/// whether the step counts as productive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedDraw {
    pub token: String,
    pub value: u8,
    pub good: bool,
}

type TokenEntry = (String, u8);

/// Serializable form of a scripted world; validated on conversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedWorldConfig {
    pub seed: u64,
    pub success_prob: f64,
    pub steps_to_answer: u32,
    #[serde(default)]
    pub per_step_value: BTreeMap<String, u8>,
}

/// The scripted world bound to a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScriptedWorldConfig", into = "ScriptedWorldConfig")]
pub struct ScriptedWorld {
    seed: u64,
    success_prob: f64,
    steps_to_answer: u32,
    /// Token/value pairs sorted ascending by (value, token).
    entries: Vec<TokenEntry>,
}

impl ScriptedWorld {
    /// World with the default two-token vocabulary: `advance` (value 8) for
    /// productive steps and `retread` (value 2) otherwise.
    pub fn new(seed: u64, success_prob: f64, steps_to_answer: u32) -> Result<Self, ScriptedError> {
        let mut per_step_value = BTreeMap::new();
        per_step_value.insert("advance".to_string(), 8);
        per_step_value.insert("retread".to_string(), 2);
        Self::with_step_values(seed, success_prob, steps_to_answer, per_step_value)
    }

    pub fn with_step_values(
        seed: u64,
        success_prob: f64,
        steps_to_answer: u32,
        per_step_value: BTreeMap<String, u8>,
    ) -> Result<Self, ScriptedError> {
        if !(0.0..=1.0).contains(&success_prob) || !success_prob.is_finite() {
            return Err(ScriptedError::BadProbability(success_prob));
        }
        if steps_to_answer == 0 {
            return Err(ScriptedError::ZeroSteps);
        }
        if per_step_value.is_empty() {
            return Err(ScriptedError::NoTokens);
        }
        let mut entries: Vec<TokenEntry> = Vec::with_capacity(per_step_value.len());
        for (token, value) in per_step_value {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(ScriptedError::BadToken(token));
            }
            if value > 10 {
                return Err(ScriptedError::BadValue { token, value });
            }
            entries.push((token, value));
        }
        entries.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        Ok(Self { seed, success_prob, steps_to_answer, entries })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn steps_to_answer(&self) -> u32 {
        self.steps_to_answer
    }

    pub fn per_step_value(&self) -> &[TokenEntry] {
        &self.entries
    }

    /// Lower and upper halves of the value levels; a single-token vocabulary
    /// serves as both halves.
    fn halves(&self) -> (&[TokenEntry], &[TokenEntry]) {
        let n = self.entries.len();
        if n == 1 {
            return (&self.entries, &self.entries);
        }
        let split = n.div_ceil(2);
        (&self.entries[..split], &self.entries[split..])
    }

    /// The answer a productive rollout reaches for `question`. Synthetic
    /// task generators use the same digest for the gold answer.
    pub fn expected_answer(question: &str) -> String {
        format!("answer-{:012x}", hash_str(question) & MASK48)
    }

    fn decoy_answer(&self, node_seed: u64, depth: u32) -> String {
        let key = mix3(self.seed, node_seed, u64::from(depth));
        format!("decoy-{:012x}", mix(key, SALT_DECOY) & MASK48)
    }

    /// The deterministic draw for a node: pure in (world seed, node seed,
    /// depth).
    pub fn draw(&self, node_seed: u64, depth: u32) -> ScriptedDraw {
        let key = mix3(self.seed, node_seed, u64::from(depth));
        let good = unit(mix(key, SALT_GOOD)) < self.success_prob;
        let (lower, upper) = self.halves();
        let half = if good { upper } else { lower };
        let pick = ((unit(mix(key, SALT_TOKEN)) * half.len() as f64) as usize).min(half.len() - 1);
        let (token, value) = &half[pick];
        ScriptedDraw { token: token.clone(), value: *value, good }
    }

    /// Generate the next step for a context: pure in (world seed,
    /// `params.seed`, history length, `success_prob`).
    pub fn generate(&self, ctx: &GenerationContext, params: &SamplingParams) -> StepRecord {
        let depth = ctx.next_step_number();
        let draw = self.draw(params.seed, depth);
        let model_output = format!(
            "step {depth}: token={} node_seed={:016x}",
            draw.token, params.seed
        );
        let action_output = if depth >= self.steps_to_answer {
            let answer = if draw.good {
                Self::expected_answer(&ctx.question)
            } else {
                self.decoy_answer(params.seed, depth)
            };
            format!("{FINAL_ANSWER_MARKER} {answer}")
        } else {
            draw.token.clone()
        };
        let observations = format!("simulated outcome of {} at depth {depth}", draw.token);
        StepRecord::new(depth, model_output, action_output, observations)
    }

    pub fn token_value(&self, token: &str) -> Option<u8> {
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map(|(_, v)| *v)
    }

    /// Whether a token belongs to the productive (upper) half.
    pub fn token_is_productive(&self, token: &str) -> Option<bool> {
        let (_, upper) = self.halves();
        if upper.iter().any(|(t, _)| t == token) {
            Some(true)
        } else if self.entries.iter().any(|(t, _)| t == token) {
            Some(false)
        } else {
            None
        }
    }
}

impl TryFrom<ScriptedWorldConfig> for ScriptedWorld {
    type Error = ScriptedError;
    fn try_from(cfg: ScriptedWorldConfig) -> Result<Self, Self::Error> {
        if cfg.per_step_value.is_empty() {
            ScriptedWorld::new(cfg.seed, cfg.success_prob, cfg.steps_to_answer)
        } else {
            ScriptedWorld::with_step_values(
                cfg.seed,
                cfg.success_prob,
                cfg.steps_to_answer,
                cfg.per_step_value,
            )
        }
    }
}

impl From<ScriptedWorld> for ScriptedWorldConfig {
    fn from(world: ScriptedWorld) -> Self {
        ScriptedWorldConfig {
            seed: world.seed,
            success_prob: world.success_prob,
            steps_to_answer: world.steps_to_answer,
            per_step_value: world.entries.into_iter().collect(),
        }
    }
}

/// Action token carried by a scripted step, parsed from its model output.
pub fn parse_token(step: &StepRecord) -> Option<&str> {
    let rest = step.model_output.split("token=").nth(1)?;
    let token = rest.split_whitespace().next()?;
    if token.is_empty() {
        None
    } else {
        Some(token)
    }
}

/// Node seed carried by a scripted step, parsed from its model output.
pub fn parse_node_seed(step: &StepRecord) -> Option<u64> {
    let rest = step.model_output.split("node_seed=").nth(1)?;
    let hex = rest.split_whitespace().next()?;
    u64::from_str_radix(hex, 16).ok()
}

// ---------------------------------------------------------------------------
// Scripted judge
// ---------------------------------------------------------------------------

/// Rubric-faithful deterministic judge for scripted runs. Scores a step by
/// its token value (errors collapse to 0, the fatal tier); selects by answer
/// correctness when the gold answer is known, then by token value, then by
/// lowest index. An optional error probability makes selection verdicts
/// deliberately wrong at a configured deterministic rate.
#[derive(Debug, Clone)]
pub struct ScriptedJudge {
    world: ScriptedWorld,
    gold: Option<String>,
    error_prob: f64,
    noise_salt: u64,
}

impl ScriptedJudge {
    pub fn new(world: ScriptedWorld) -> Self {
        Self { world, gold: None, error_prob: 0.0, noise_salt: SALT_JUDGE }
    }

    /// Judge with access to the task's ground truth (or the scripted
    /// expected answer when the task carries none).
    pub fn for_task(world: ScriptedWorld, task: &Task) -> Self {
        let gold = task
            .ground_truth
            .clone()
            .unwrap_or_else(|| ScriptedWorld::expected_answer(&task.question));
        Self {
            world,
            gold: Some(normalize_answer(&gold)),
            error_prob: 0.0,
            noise_salt: SALT_JUDGE,
        }
    }

    pub fn with_error_prob(mut self, error_prob: f64, salt: u64) -> Self {
        self.error_prob = error_prob.clamp(0.0, 1.0);
        self.noise_salt = mix(SALT_JUDGE, salt);
        self
    }

    fn step_quality(&self, step: &StepRecord) -> (i64, i64, i64) {
        let clean = i64::from(step.error.is_none());
        let value = parse_token(step)
            .and_then(|t| self.world.token_value(t))
            .map_or(5, i64::from);
        let correct = match (&self.gold, step.final_answer()) {
            (Some(gold), Some(answer)) => i64::from(normalize_answer(answer) == *gold),
            _ => 0,
        };
        (correct, clean, value)
    }

    fn trajectory_quality(&self, trajectory: &Trajectory) -> (i64, i64, i64) {
        let clean = i64::from(trajectory.steps.iter().all(|s| s.error.is_none()));
        let value = trajectory
            .last_step()
            .and_then(parse_token)
            .and_then(|t| self.world.token_value(t))
            .map_or(0, i64::from);
        let correct = match (&self.gold, &trajectory.final_answer) {
            (Some(gold), Some(answer)) => i64::from(normalize_answer(answer) == *gold),
            _ => 0,
        };
        (correct, clean, value)
    }

    fn fingerprint(&self, candidates: &Candidates<'_>) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        match candidates {
            Candidates::Steps(steps) => {
                for s in *steps {
                    acc = mix(acc, hash_str(&s.model_output));
                    acc = mix(acc, hash_str(&s.action_output));
                }
            }
            Candidates::Trajectories(trajectories) => {
                for t in *trajectories {
                    for s in &t.steps {
                        acc = mix(acc, hash_str(&s.model_output));
                    }
                    acc = mix(acc, hash_str(t.final_answer.as_deref().unwrap_or("-")));
                }
            }
        }
        acc
    }
}

#[async_trait]
impl Verifier for ScriptedJudge {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        _history: &[StepRecord],
    ) -> Result<VerifierVerdict, VerifyError> {
        let score = if candidate.error.is_some() {
            0
        } else {
            parse_token(candidate)
                .and_then(|t| self.world.token_value(t))
                .unwrap_or(5)
        };
        let analysis = format!(
            "simulated rubric: token {} at depth {} scored {score}",
            parse_token(candidate).unwrap_or("?"),
            candidate.step_number
        );
        VerifierVerdict::score(score, analysis)
    }

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        _history: &[StepRecord],
    ) -> Result<Selection, VerifyError> {
        let count = candidates.len();
        if count == 0 {
            return Err(VerifyError::EmptyCandidates);
        }
        let qualities: Vec<(i64, i64, i64)> = match candidates {
            Candidates::Steps(steps) => steps.iter().map(|s| self.step_quality(s)).collect(),
            Candidates::Trajectories(trajectories) => {
                trajectories.iter().map(|t| self.trajectory_quality(t)).collect()
            }
        };
        let mut best = 0;
        for (i, quality) in qualities.iter().enumerate() {
            if *quality > qualities[best] {
                best = i;
            }
        }

        let mut chosen = best;
        if self.error_prob > 0.0 {
            let key = mix3(self.noise_salt, self.fingerprint(candidates), count as u64);
            if unit(key) < self.error_prob && count > 1 {
                let others: Vec<usize> = (0..count).filter(|&i| i != best).collect();
                let pick = ((unit(mix(key, 1)) * others.len() as f64) as usize).min(others.len() - 1);
                chosen = others[pick];
            }
        }

        let analysis = format!("simulated rubric selected candidate {chosen} of {count}");
        Ok(Selection::clean(VerifierVerdict::selection(chosen, analysis)))
    }
}

// ---------------------------------------------------------------------------
// Exact-value lookahead judge
// ---------------------------------------------------------------------------

/// Exact-value verifier for scripted value trees: ranks candidates by the
/// precise best total token value achievable through them, enumerating the
/// deterministic subtree below each candidate. With this judge a beam search
/// retains the globally optimal path at every level.
#[derive(Debug, Clone)]
pub struct LookaheadJudge {
    world: ScriptedWorld,
    branching: u32,
}

impl LookaheadJudge {
    pub fn new(world: ScriptedWorld, branching: u32) -> Self {
        Self { world, branching: branching.max(1) }
    }

    /// Best achievable value sum strictly below a node at `depth` holding
    /// `node_seed`, given the run's candidate-seed chaining.
    pub fn completion_value(&self, node_seed: u64, depth: u32) -> u64 {
        if depth >= self.world.steps_to_answer() {
            return 0;
        }
        (0..self.branching)
            .map(|i| {
                let child = candidate_seed(node_seed, depth + 1, i);
                let draw = self.world.draw(child, depth + 1);
                u64::from(draw.value) + self.completion_value(child, depth + 1)
            })
            .max()
            .unwrap_or(0)
    }

    fn path_value(&self, steps: &[StepRecord]) -> u64 {
        steps
            .iter()
            .map(|s| {
                parse_token(s)
                    .and_then(|t| self.world.token_value(t))
                    .map_or(0, u64::from)
            })
            .sum()
    }

    fn potential(&self, steps: &[StepRecord], history: &[StepRecord]) -> u64 {
        let realized = self.path_value(history) + self.path_value(steps);
        match steps.last().or_else(|| history.last()) {
            Some(last) => {
                let seed = parse_node_seed(last).unwrap_or(0);
                realized + self.completion_value(seed, last.step_number)
            }
            None => realized,
        }
    }
}

#[async_trait]
impl Verifier for LookaheadJudge {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        history: &[StepRecord],
    ) -> Result<VerifierVerdict, VerifyError> {
        let potential = self.potential(std::slice::from_ref(candidate), history);
        let clamped = potential.min(10) as u8;
        VerifierVerdict::score(clamped, format!("exact achievable value {potential}"))
    }

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        history: &[StepRecord],
    ) -> Result<Selection, VerifyError> {
        if candidates.is_empty() {
            return Err(VerifyError::EmptyCandidates);
        }
        let potentials: Vec<u64> = match candidates {
            Candidates::Steps(steps) => steps
                .iter()
                .map(|s| self.potential(std::slice::from_ref(s), history))
                .collect(),
            Candidates::Trajectories(trajectories) => trajectories
                .iter()
                .map(|t| self.potential(&t.steps, history))
                .collect(),
        };
        let mut best = 0;
        for (i, p) in potentials.iter().enumerate() {
            if *p > potentials[best] {
                best = i;
            }
        }
        Ok(Selection::clean(VerifierVerdict::selection(
            best,
            format!("exact achievable value {}", potentials[best]),
        )))
    }
}

// ---------------------------------------------------------------------------
// Scripted reflector
// ---------------------------------------------------------------------------

/// Deterministic reflection model for scripted runs.
#[derive(Debug, Clone)]
pub struct ScriptedReflector {
    world: ScriptedWorld,
}

impl ScriptedReflector {
    pub fn new(world: ScriptedWorld) -> Self {
        Self { world }
    }
}

#[async_trait]
impl Reflector for ScriptedReflector {
    async fn reflect(
        &self,
        step: &StepRecord,
        _history: &[StepRecord],
    ) -> Result<ReflectionNote, ReflectError> {
        let token = parse_token(step).unwrap_or("an-action");
        let productive = step.error.is_none()
            && self.world.token_is_productive(token).unwrap_or(false);
        let confidence = if step.error.is_some() {
            ConfidenceLevel::Low
        } else if productive {
            ConfidenceLevel::High
        } else {
            ConfidenceLevel::Medium
        };
        let lessons_learned = if productive {
            "The action advanced the task; continue along this path.".to_string()
        } else {
            format!("`{token}` yielded little progress; prefer a different action at the next step.")
        };
        Ok(ReflectionNote {
            experience_summary: format!(
                "Step {} executed `{token}`: {}",
                step.step_number, step.observations
            ),
            confidence_assessment: confidence,
            lessons_learned,
            comments: None,
        })
    }
}
