//! Result merging: reduce N candidate trajectories to one final answer by
//! majority voting, per-candidate scoring, or list-wise judgment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Trajectory;
use crate::verification::{select_best, Candidates, Verifier, VerifyError};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("cannot merge an empty candidate list")]
    NoCandidates,
    #[error("no candidate carries a final answer")]
    NoAnswers,
    #[error("every candidate scoring attempt failed; last error: {0}")]
    AllScoringFailed(String),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    Voting,
    Scoring,
    Listwise,
}

/// The outcome of merging: which candidate won and with what answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub method: MergeMethod,
    pub chosen_index: usize,
    pub final_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_candidate_scores: Option<Vec<u8>>,
    /// Incidents hit while merging (judge fallbacks, failed scorings).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub incidents: Vec<String>,
}

/// Canonical answer form used for voting and exact-match scoring: trimmed,
/// case-folded, enclosing quotes and one trailing period stripped, and
/// numeric strings canonicalized (thousands separators removed, an all-zero
/// fraction dropped, no leading plus sign).
pub fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim();

    // One matching pair of enclosing quotes.
    for quote in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(quote) && s.ends_with(quote) {
            s = &s[1..s.len() - 1];
            s = s.trim();
            break;
        }
    }
    let mut text = s.strip_suffix('.').map_or_else(|| s.to_string(), |t| t.trim_end().to_string());
    text = text.to_lowercase();

    if let Some(numeric) = canonicalize_numeric(&text) {
        return numeric;
    }
    text
}

/// Canonical form for strings that are entirely numeric; `None` otherwise.
fn canonicalize_numeric(text: &str) -> Option<String> {
    let stripped = text.strip_prefix('+').unwrap_or(text);
    let (sign, body) = match stripped.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", stripped),
    };
    if body.is_empty() {
        return None;
    }

    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };

    let digits = if int_part.contains(',') {
        // Thousands separators must group digits in threes.
        let groups: Vec<&str> = int_part.split(',').collect();
        if groups.len() < 2
            || groups[0].is_empty()
            || groups[0].len() > 3
            || !groups.iter().all(|g| g.chars().all(|c| c.is_ascii_digit()))
            || groups[1..].iter().any(|g| g.len() != 3)
        {
            return None;
        }
        groups.concat()
    } else {
        if int_part.is_empty() || !int_part.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        int_part.to_string()
    };

    match frac_part {
        None => Some(format!("{sign}{digits}")),
        Some(frac) => {
            if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            if frac.chars().all(|c| c == '0') {
                Some(format!("{sign}{digits}"))
            } else {
                Some(format!("{sign}{digits}.{frac}"))
            }
        }
    }
}

/// Majority vote over normalized final answers. Candidates without an answer
/// are excluded first; ties break to the answer whose earliest holder has the
/// lowest index, and `chosen_index` is that holder.
pub fn merge_voting(candidates: &[Trajectory]) -> Result<MergeDecision, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::NoCandidates);
    }
    let answered: Vec<(usize, String)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.final_answer.as_deref().map(|a| (i, normalize_answer(a))))
        .collect();
    if answered.is_empty() {
        return Err(MergeError::NoAnswers);
    }

    // (count, earliest index) per distinct answer, in first-seen order.
    let mut tallies: Vec<(String, usize, usize)> = Vec::new();
    for (index, answer) in &answered {
        match tallies.iter_mut().find(|(a, _, _)| a == answer) {
            Some((_, count, _)) => *count += 1,
            None => tallies.push((answer.clone(), 1, *index)),
        }
    }
    let (winner, count, chosen_index) = tallies
        .iter()
        .max_by(|a, b| (a.1, std::cmp::Reverse(a.2)).cmp(&(b.1, std::cmp::Reverse(b.2))))
        .cloned()
        .expect("tallies nonempty");

    Ok(MergeDecision {
        method: MergeMethod::Voting,
        chosen_index,
        final_answer: winner.clone(),
        rationale: Some(format!(
            "`{winner}` held by {count} of {} answered candidates",
            answered.len()
        )),
        per_candidate_scores: None,
        incidents: Vec::new(),
    })
}

/// Score each candidate's final step with the judge and take the argmax,
/// ties to the lowest index. Failed scorings count as 0 and are recorded;
/// the merge fails only if every scoring fails.
pub async fn merge_scoring(
    candidates: &[Trajectory],
    judge: &dyn Verifier,
) -> Result<MergeDecision, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::NoCandidates);
    }
    let mut incidents = Vec::new();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut last_error = String::new();
    let mut any_ok = false;

    let futures = candidates.iter().map(|t| async move {
        match t.last_step() {
            None => Err(VerifyError::BadRequest("empty trajectory".into())),
            Some(last) => {
                let history = &t.steps[..t.steps.len() - 1];
                judge.score_step(last, history).await
            }
        }
    });
    let verdicts = futures::future::join_all(futures).await;

    for (i, verdict) in verdicts.into_iter().enumerate() {
        match verdict {
            Ok(v) => {
                any_ok = true;
                scores.push(v.score.unwrap_or(0));
            }
            Err(err) => {
                last_error = err.to_string();
                incidents.push(format!("scoring candidate {i} failed ({err}); scored as 0"));
                scores.push(0);
            }
        }
    }
    if !any_ok {
        return Err(MergeError::AllScoringFailed(last_error));
    }

    let mut chosen_index = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[chosen_index] {
            chosen_index = i;
        }
    }
    let final_answer = candidates[chosen_index]
        .final_answer
        .clone()
        .unwrap_or_default();
    Ok(MergeDecision {
        method: MergeMethod::Scoring,
        chosen_index,
        final_answer,
        rationale: Some(format!("argmax of per-candidate final-step scores {scores:?}")),
        per_candidate_scores: Some(scores),
        incidents,
    })
}

/// Ask the judge to select the best trajectory outright; on selection
/// failure, fall back to voting and record the incident.
pub async fn merge_listwise(
    candidates: &[Trajectory],
    judge: &dyn Verifier,
) -> Result<MergeDecision, MergeError> {
    if candidates.is_empty() {
        return Err(MergeError::NoCandidates);
    }
    match select_best(judge, &Candidates::Trajectories(candidates), &[]).await {
        Ok(selection) => {
            let chosen_index = selection.index().min(candidates.len() - 1);
            let final_answer = candidates[chosen_index]
                .final_answer
                .clone()
                .unwrap_or_default();
            Ok(MergeDecision {
                method: MergeMethod::Listwise,
                chosen_index,
                final_answer,
                rationale: Some(selection.verdict.analysis),
                per_candidate_scores: None,
                incidents: selection.incident.into_iter().collect(),
            })
        }
        Err(err) => {
            let mut decision = merge_voting(candidates)?;
            decision
                .incidents
                .push(format!("list-wise selection failed ({err}); fell back to voting"));
            Ok(decision)
        }
    }
}

/// Dispatch on the configured method.
pub async fn merge(
    method: MergeMethod,
    candidates: &[Trajectory],
    judge: &dyn Verifier,
) -> Result<MergeDecision, MergeError> {
    match method {
        MergeMethod::Voting => merge_voting(candidates),
        MergeMethod::Scoring => merge_scoring(candidates, judge).await,
        MergeMethod::Listwise => merge_listwise(candidates, judge).await,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::StepRecord;
    use crate::verification::{Selection, VerifierVerdict};
    use async_trait::async_trait;

    fn candidate(task: &str, answer: Option<&str>) -> Trajectory {
        let steps = match answer {
            Some(a) => vec![StepRecord::new(1, "m", format!("FINAL ANSWER: {a}"), "")],
            None => vec![StepRecord::new(1, "m", "probe", "")],
        };
        Trajectory::from_steps(task, steps, 10)
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer(" Paris."), "paris");
        assert_eq!(normalize_answer("1,000"), "1000");
        assert_eq!(normalize_answer("3.0"), "3");
        assert_eq!(normalize_answer("+5"), "5");
        assert_eq!(normalize_answer("\"Quoted\""), "quoted");
        assert_eq!(normalize_answer("-2.50"), "-2.50"); // only all-zero fractions drop
        assert_eq!(normalize_answer("Paris, France"), "paris, france");
        assert_eq!(normalize_answer("1,00"), "1,00"); // not a valid thousands grouping
        assert_eq!(normalize_answer("3.00"), "3");
    }

    #[test]
    fn voting_majority_and_ties() {
        let c = vec![
            candidate("t", Some("Paris")),
            candidate("t", Some("Paris")),
            candidate("t", Some("London")),
        ];
        let d = merge_voting(&c).unwrap();
        assert_eq!(d.final_answer, "paris");
        assert_eq!(d.chosen_index, 0);

        let c = vec![
            candidate("t", Some(" 3")),
            candidate("t", Some("3.0")),
            candidate("t", Some("4")),
        ];
        let d = merge_voting(&c).unwrap();
        assert_eq!(d.final_answer, "3");
        assert_eq!(d.chosen_index, 0);

        let c = vec![candidate("t", Some("a")), candidate("t", Some("b"))];
        let d = merge_voting(&c).unwrap();
        assert_eq!(d.final_answer, "a");
        assert_eq!(d.chosen_index, 0);
    }

    #[test]
    fn voting_excludes_answerless_and_fails_when_all_are() {
        let c = vec![
            candidate("t", None),
            candidate("t", Some("x")),
            candidate("t", None),
        ];
        let d = merge_voting(&c).unwrap();
        assert_eq!(d.chosen_index, 1);

        let c = vec![candidate("t", None), candidate("t", None)];
        assert!(matches!(merge_voting(&c), Err(MergeError::NoAnswers)));
    }

    /// Stub judge scoring a trajectory by a fixed per-index table and
    /// selecting the argmax of the same table.
    struct TableJudge {
        scores: Vec<u8>,
    }

    #[async_trait]
    impl Verifier for TableJudge {
        async fn score_step(
            &self,
            candidate: &StepRecord,
            _history: &[StepRecord],
        ) -> Result<VerifierVerdict, VerifyError> {
            // Key on the answer text so permutations follow candidates.
            let idx = candidate
                .final_answer()
                .and_then(|a| a.strip_prefix("c"))
                .and_then(|n| n.parse::<usize>().ok())
                .unwrap_or(0);
            VerifierVerdict::score(self.scores[idx], "table")
        }

        async fn select_among(
            &self,
            candidates: &Candidates<'_>,
            _history: &[StepRecord],
        ) -> Result<Selection, VerifyError> {
            let n = candidates.len();
            let best = (0..n).max_by_key(|i| self.scores[*i]).unwrap_or(0);
            Ok(Selection::clean(VerifierVerdict::selection(best, "table")))
        }
    }

    #[tokio::test]
    async fn scoring_takes_argmax_with_low_index_ties() {
        let c: Vec<Trajectory> = (0..3).map(|i| candidate("t", Some(&format!("c{i}")))).collect();
        let judge = TableJudge { scores: vec![3, 9, 5] };
        let d = merge_scoring(&c, &judge).await.unwrap();
        assert_eq!(d.chosen_index, 1);
        assert_eq!(d.per_candidate_scores, Some(vec![3, 9, 5]));

        let c: Vec<Trajectory> = (0..2).map(|i| candidate("t", Some(&format!("c{i}")))).collect();
        let judge = TableJudge { scores: vec![7, 7] };
        let d = merge_scoring(&c, &judge).await.unwrap();
        assert_eq!(d.chosen_index, 0);
    }

    /// Judge failing on one specific candidate.
    struct FlakyJudge;

    #[async_trait]
    impl Verifier for FlakyJudge {
        async fn score_step(
            &self,
            candidate: &StepRecord,
            _history: &[StepRecord],
        ) -> Result<VerifierVerdict, VerifyError> {
            if candidate.final_answer() == Some("c1") {
                return Err(VerifyError::NotFound);
            }
            VerifierVerdict::score(6, "ok")
        }

        async fn select_among(
            &self,
            _c: &Candidates<'_>,
            _h: &[StepRecord],
        ) -> Result<Selection, VerifyError> {
            Err(VerifyError::NotFound)
        }
    }

    #[tokio::test]
    async fn scoring_partial_failures_score_zero_with_incident() {
        let c: Vec<Trajectory> = (0..3).map(|i| candidate("t", Some(&format!("c{i}")))).collect();
        let d = merge_scoring(&c, &FlakyJudge).await.unwrap();
        assert_eq!(d.per_candidate_scores, Some(vec![6, 0, 6]));
        assert_eq!(d.chosen_index, 0, "ties break low after the failure scores 0");
        assert_eq!(d.incidents.len(), 1);
    }

    #[tokio::test]
    async fn scoring_fails_only_when_every_scoring_fails() {
        struct AllFail;
        #[async_trait]
        impl Verifier for AllFail {
            async fn score_step(
                &self,
                _c: &StepRecord,
                _h: &[StepRecord],
            ) -> Result<VerifierVerdict, VerifyError> {
                Err(VerifyError::NotFound)
            }
            async fn select_among(
                &self,
                _c: &Candidates<'_>,
                _h: &[StepRecord],
            ) -> Result<Selection, VerifyError> {
                Err(VerifyError::NotFound)
            }
        }
        let c = vec![candidate("t", Some("a")), candidate("t", Some("b"))];
        assert!(matches!(
            merge_scoring(&c, &AllFail).await,
            Err(MergeError::AllScoringFailed(_))
        ));
    }

    #[tokio::test]
    async fn scoring_choice_invariant_under_rank_preserving_shift() {
        let c: Vec<Trajectory> = (0..3).map(|i| candidate("t", Some(&format!("c{i}")))).collect();
        let base = TableJudge { scores: vec![3, 9, 5] };
        let shifted = TableJudge { scores: vec![4, 10, 6] };
        let a = merge_scoring(&c, &base).await.unwrap();
        let b = merge_scoring(&c, &shifted).await.unwrap();
        assert_eq!(a.chosen_index, b.chosen_index);
    }

    #[tokio::test]
    async fn listwise_single_candidate_short_circuits() {
        struct PanicJudge;
        #[async_trait]
        impl Verifier for PanicJudge {
            async fn score_step(
                &self,
                _c: &StepRecord,
                _h: &[StepRecord],
            ) -> Result<VerifierVerdict, VerifyError> {
                panic!("judge must not be called");
            }
            async fn select_among(
                &self,
                _c: &Candidates<'_>,
                _h: &[StepRecord],
            ) -> Result<Selection, VerifyError> {
                panic!("judge must not be called");
            }
        }
        let c = vec![candidate("t", Some("only"))];
        let d = merge_listwise(&c, &PanicJudge).await.unwrap();
        assert_eq!(d.chosen_index, 0);
        assert_eq!(d.final_answer, "only");
    }

    #[tokio::test]
    async fn listwise_falls_back_to_voting_on_selection_failure() {
        struct FailingJudge;
        #[async_trait]
        impl Verifier for FailingJudge {
            async fn score_step(
                &self,
                _c: &StepRecord,
                _h: &[StepRecord],
            ) -> Result<VerifierVerdict, VerifyError> {
                Err(VerifyError::NotFound)
            }
            async fn select_among(
                &self,
                _c: &Candidates<'_>,
                _h: &[StepRecord],
            ) -> Result<Selection, VerifyError> {
                Err(VerifyError::Exhausted { attempts: 3, last: "noise".into() })
            }
        }
        let c = vec![
            candidate("t", Some("x")),
            candidate("t", Some("x")),
            candidate("t", Some("y")),
        ];
        let d = merge_listwise(&c, &FailingJudge).await.unwrap();
        assert_eq!(d.final_answer, "x");
        assert_eq!(d.incidents.len(), 1);
    }
}
