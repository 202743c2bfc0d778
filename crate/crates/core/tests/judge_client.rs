//! LLM judge client behavior against scripted chat replies: re-ask policy,
//! out-of-range fallback, selection stability, and reflection parsing.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use ttscale::domain::{StepRecord, Trajectory};
use ttscale::gateway::ChatBackend;
use ttscale::models::{ModelError, ModelRef, ModelRuntime, SamplingParams};
use ttscale::reflection::{LlmReflector, ReflectError, Reflector};
use ttscale::verification::{select_best, Candidates, JudgeClient, Verifier, VerifyError};

/// Chat backend replaying a fixed reply sequence, recording prompts.
struct SequenceBackend {
    replies: Vec<String>,
    cursor: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl SequenceBackend {
    fn new(replies: &[&str]) -> Arc<Self> {
        Arc::new(Self {
            replies: replies.iter().map(|s| s.to_string()).collect(),
            cursor: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        })
    }

    fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for SequenceBackend {
    async fn chat(
        &self,
        _model: &ModelRef,
        prompt: &str,
        _params: &SamplingParams,
    ) -> Result<String, ModelError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        let index = self.cursor.fetch_add(1, Ordering::SeqCst);
        Ok(self
            .replies
            .get(index)
            .cloned()
            .unwrap_or_else(|| self.replies.last().cloned().unwrap_or_default()))
    }
}

fn judge_with(backend: Arc<SequenceBackend>) -> JudgeClient {
    let runtime = Arc::new(ModelRuntime::new(None, backend));
    let model = ModelRef::remote("judge", "http://judge.invalid/v1", None).unwrap();
    JudgeClient::new(runtime, model, SamplingParams { temperature: 0.0, top_p: 1.0, seed: 1 })
}

fn step(text: &str) -> StepRecord {
    StepRecord::new(1, format!("model says {text}"), text, "")
}

fn trajectories(answers: &[&str]) -> Vec<Trajectory> {
    answers
        .iter()
        .map(|a| {
            Trajectory::from_steps(
                "t",
                vec![StepRecord::new(1, "m", format!("FINAL ANSWER: {a}"), "")],
                5,
            )
        })
        .collect()
}

#[tokio::test]
async fn score_parses_wellformed_reply_first_try() {
    let backend = SequenceBackend::new(&[r#"{"analysis":"fine","score":7}"#]);
    let judge = judge_with(backend.clone());
    let verdict = judge.score_step(&step("probe"), &[]).await.unwrap();
    assert_eq!(verdict.score, Some(7));
    assert_eq!(backend.calls(), 1);
}

#[tokio::test]
async fn score_reasks_twice_then_errors() {
    let backend = SequenceBackend::new(&["no object here", "still nothing", "nope"]);
    let judge = judge_with(backend.clone());
    let err = judge.score_step(&step("probe"), &[]).await.unwrap_err();
    assert!(matches!(err, VerifyError::Exhausted { attempts: 3, .. }), "{err}");
    assert_eq!(backend.calls(), 3);
    // Re-asks carry a format reminder; the first ask does not.
    let prompts = backend.prompts.lock().unwrap();
    assert!(!prompts[0].contains("Reminder:"));
    assert!(prompts[1].contains("Reminder:"));
    assert!(prompts[2].contains("Reminder:"));
}

#[tokio::test]
async fn score_recovers_on_reask() {
    let backend =
        SequenceBackend::new(&["hmm, thinking...", r#"{"analysis":"after reminder","score":4}"#]);
    let judge = judge_with(backend.clone());
    let verdict = judge.score_step(&step("probe"), &[]).await.unwrap();
    assert_eq!(verdict.score, Some(4));
    assert_eq!(backend.calls(), 2);
}

#[tokio::test]
async fn selection_accepts_in_range_index() {
    let backend = SequenceBackend::new(&[r#"{"index":2,"analysis":"best"}"#]);
    let judge = judge_with(backend.clone());
    let candidates = trajectories(&["a", "b", "c", "d"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&candidates), &[])
        .await
        .unwrap();
    assert_eq!(selection.index(), 2);
    assert!(selection.incident.is_none());
}

#[tokio::test]
async fn selection_out_of_range_reasks_once_then_falls_back() {
    let backend = SequenceBackend::new(&[
        r#"{"index":9,"analysis":"overshoot"}"#,
        r#"{"index":12,"analysis":"overshoot again"}"#,
    ]);
    let judge = judge_with(backend.clone());
    let candidates = trajectories(&["a", "b", "c"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&candidates), &[])
        .await
        .unwrap();
    assert_eq!(selection.index(), 0, "falls back to candidate 0");
    assert!(selection.incident.is_some());
    assert_eq!(backend.calls(), 2, "exactly one re-ask after the out-of-range index");
}

#[tokio::test]
async fn selection_out_of_range_recovered_by_reask() {
    let backend = SequenceBackend::new(&[
        r#"{"index":9,"analysis":"overshoot"}"#,
        r#"{"index":1,"analysis":"corrected"}"#,
    ]);
    let judge = judge_with(backend.clone());
    let candidates = trajectories(&["a", "b", "c"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&candidates), &[])
        .await
        .unwrap();
    assert_eq!(selection.index(), 1);
    assert!(selection.incident.is_none());
}

#[tokio::test]
async fn single_candidate_selection_makes_no_judge_call() {
    let backend = SequenceBackend::new(&[r#"{"index":0,"analysis":"unused"}"#]);
    let judge = judge_with(backend.clone());
    let candidates = trajectories(&["only"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&candidates), &[])
        .await
        .unwrap();
    assert_eq!(selection.index(), 0);
    assert_eq!(backend.calls(), 0);
}

/// A deterministic stub judge keyed on candidate content: selection follows
/// the candidate itself through any permutation.
struct ContentKeyedJudge;

#[async_trait]
impl Verifier for ContentKeyedJudge {
    async fn score_step(
        &self,
        candidate: &StepRecord,
        _history: &[StepRecord],
    ) -> Result<ttscale::VerifierVerdict, VerifyError> {
        let score = (candidate.action_output.len() % 11) as u8;
        ttscale::VerifierVerdict::score(score, "keyed")
    }

    async fn select_among(
        &self,
        candidates: &Candidates<'_>,
        _history: &[StepRecord],
    ) -> Result<ttscale::verification::Selection, VerifyError> {
        let Candidates::Trajectories(list) = candidates else {
            return Err(VerifyError::BadRequest("trajectories only".into()));
        };
        let best = (0..list.len())
            .max_by_key(|&i| list[i].final_answer.as_deref().map_or(0, str::len))
            .unwrap();
        Ok(ttscale::verification::Selection::clean(
            ttscale::VerifierVerdict::selection(best, "longest answer"),
        ))
    }
}

#[tokio::test]
async fn selection_identity_is_stable_under_permutation() {
    let judge = ContentKeyedJudge;
    let original = trajectories(&["aa", "bbbbbb", "cccc"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&original), &[])
        .await
        .unwrap();
    let chosen = original[selection.index()].final_answer.clone();

    let permuted = trajectories(&["cccc", "aa", "bbbbbb"]);
    let selection = select_best(&judge, &Candidates::Trajectories(&permuted), &[])
        .await
        .unwrap();
    let chosen_permuted = permuted[selection.index()].final_answer.clone();
    assert_eq!(chosen, chosen_permuted, "index moves, identity does not");
}

// ---------------------------------------------------------------------------
// Reflection via the LLM reflector
// ---------------------------------------------------------------------------

fn reflector_with(backend: Arc<SequenceBackend>) -> LlmReflector {
    let runtime = Arc::new(ModelRuntime::new(None, backend));
    let model = ModelRef::remote("reflector", "http://reflect.invalid/v1", None).unwrap();
    LlmReflector::new(runtime, model, SamplingParams { temperature: 0.0, top_p: 1.0, seed: 2 })
}

#[tokio::test]
async fn reflector_parses_four_field_note() {
    let backend = SequenceBackend::new(&[
        r#"{"experience_summary":"did a thing","confidence_assessment":"High","lessons_learned":"keep going","comments":"minor"}"#,
    ]);
    let reflector = reflector_with(backend);
    let note = reflector.reflect(&step("x"), &[]).await.unwrap();
    assert_eq!(note.confidence_assessment, ttscale::reflection::ConfidenceLevel::High);
    assert_eq!(note.comments.as_deref(), Some("minor"));
}

#[tokio::test]
async fn reflector_gives_up_after_two_reasks() {
    let backend = SequenceBackend::new(&[
        r#"{"experience_summary":"s","confidence_assessment":"Certain","lessons_learned":"l"}"#,
    ]);
    let reflector = reflector_with(backend.clone());
    let err = reflector.reflect(&step("x"), &[]).await.unwrap_err();
    assert!(matches!(err, ReflectError::Exhausted { attempts: 3, .. }));
    assert_eq!(backend.calls(), 3);
}
