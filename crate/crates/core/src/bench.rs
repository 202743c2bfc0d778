//! Benchmark harness: task-file ingestion, quasi-exact-match scoring,
//! per-level accuracy, pass@k, and report assembly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::Task;
use crate::ledger::CallLedger;
use crate::merging::normalize_answer;
use crate::strategies::RunConfig;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read task file {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("task file line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("task file line {line}: unknown level value `{value}`")]
    UnknownLevel { line: usize, value: String },
    #[error("pass@{k} requires {k} rollouts per task, but task {task_id} has {actual}")]
    NotEnoughRollouts { k: usize, task_id: String, actual: usize },
    #[error("report requires at least one outcome")]
    NoOutcomes,
}

/// Per-task result: correctness of each rollout in seed order, correctness
/// of the merged answer, and the task's call ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub level: u8,
    pub rollout_correct: Vec<bool>,
    pub merged_correct: bool,
    pub calls: CallLedger,
}

/// Aggregated run report. All percentages lie in [0, 100]; levels with no
/// tasks are omitted rather than reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub average: f64,
    pub per_level: BTreeMap<u8, f64>,
    pub pass_at_k: BTreeMap<u32, f64>,
    pub config_digest: String,
    pub ledger_totals: CallLedger,
}

// ---------------------------------------------------------------------------
// Task loading
// ---------------------------------------------------------------------------

fn field<'v>(object: &'v Value, names: &[&str]) -> Option<&'v Value> {
    names.iter().find_map(|name| object.get(name))
}

fn parse_line(line: &str, line_number: usize) -> Result<Task, BenchError> {
    let object: Value = serde_json::from_str(line).map_err(|err| BenchError::MalformedLine {
        line: line_number,
        detail: err.to_string(),
    })?;

    let id = field(&object, &["task_id", "id"])
        .and_then(Value::as_str)
        .ok_or_else(|| BenchError::MalformedLine {
            line: line_number,
            detail: "missing string field `task_id`".into(),
        })?
        .to_string();

    let question = field(&object, &["Question", "question"])
        .and_then(Value::as_str)
        .ok_or_else(|| BenchError::MalformedLine {
            line: line_number,
            detail: "missing string field `Question`".into(),
        })?
        .to_string();

    let level_value = field(&object, &["Level", "level"]).ok_or_else(|| {
        BenchError::MalformedLine { line: line_number, detail: "missing field `Level`".into() }
    })?;
    let level = match level_value {
        Value::Number(n) => n.as_u64().and_then(|v| u8::try_from(v).ok()),
        Value::String(s) => s.trim().parse::<u8>().ok(),
        _ => None,
    }
    .ok_or_else(|| BenchError::UnknownLevel {
        line: line_number,
        value: level_value.to_string(),
    })?;

    let ground_truth = field(&object, &["Final answer", "final_answer"])
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "?")
        .map(str::to_owned);

    let mut task = Task::new(id, question, level, ground_truth).map_err(|err| match err {
        crate::domain::DomainError::InvalidLevel(v) => {
            BenchError::UnknownLevel { line: line_number, value: v.to_string() }
        }
        other => BenchError::MalformedLine { line: line_number, detail: other.to_string() },
    })?;

    if let Some(refs) = field(&object, &["file_refs"]).and_then(Value::as_array) {
        task.file_refs = refs
            .iter()
            .filter_map(Value::as_str)
            .map(str::to_owned)
            .collect();
    } else if let Some(name) = field(&object, &["file_name"]).and_then(Value::as_str) {
        if !name.is_empty() {
            task.file_refs = vec![name.to_string()];
        }
    }
    Ok(task)
}

/// Load a line-delimited task file, preserving line order. Blank lines are
/// skipped; malformed lines fail with their line number.
pub fn load_tasks(path: &Path, level_filter: Option<&[u8]>) -> Result<Vec<Task>, BenchError> {
    let content = std::fs::read_to_string(path).map_err(|err| BenchError::Io {
        path: path.display().to_string(),
        detail: err.to_string(),
    })?;
    let mut tasks = Vec::new();
    for (index, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task = parse_line(line, index + 1)?;
        if level_filter.is_none_or(|levels| levels.contains(&task.level)) {
            tasks.push(task);
        }
    }
    Ok(tasks)
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Quasi-exact match: normalized string equality.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Percentage of tasks where any of the first `k` rollouts (in seed order)
/// is correct.
pub fn pass_at_k(outcomes: &[TaskOutcome], k: usize) -> Result<f64, BenchError> {
    if outcomes.is_empty() {
        return Err(BenchError::NoOutcomes);
    }
    for outcome in outcomes {
        if outcome.rollout_correct.len() < k {
            return Err(BenchError::NotEnoughRollouts {
                k,
                task_id: outcome.task_id.clone(),
                actual: outcome.rollout_correct.len(),
            });
        }
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.rollout_correct[..k].iter().any(|&c| c))
        .count();
    Ok(percent(hits, outcomes.len()))
}

fn percent(numerator: usize, denominator: usize) -> f64 {
    100.0 * numerator as f64 / denominator as f64
}

/// Stable digest of a resolved run config, recorded in every report.
pub fn config_digest(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("run config serializes");
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Assemble the run report: merged-answer average, per-level averages over
/// nonempty level subsets, pass@k for k in {1, 2, 4} where rollout counts
/// allow, and summed ledger totals.
pub fn build_report(outcomes: &[TaskOutcome], cfg: &RunConfig) -> Result<BenchReport, BenchError> {
    if outcomes.is_empty() {
        return Err(BenchError::NoOutcomes);
    }
    let correct = outcomes.iter().filter(|o| o.merged_correct).count();
    let average = percent(correct, outcomes.len());

    let mut per_level = BTreeMap::new();
    for level in 1..=3u8 {
        let subset: Vec<&TaskOutcome> = outcomes.iter().filter(|o| o.level == level).collect();
        if subset.is_empty() {
            continue;
        }
        let hits = subset.iter().filter(|o| o.merged_correct).count();
        per_level.insert(level, percent(hits, subset.len()));
    }

    let mut pass = BTreeMap::new();
    for k in [1usize, 2, 4] {
        if outcomes.iter().all(|o| o.rollout_correct.len() >= k) {
            pass.insert(k as u32, pass_at_k(outcomes, k)?);
        }
    }

    let ledger_totals = outcomes
        .iter()
        .fold(CallLedger::default(), |acc, o| acc.add(&o.calls));

    Ok(BenchReport {
        average,
        per_level,
        pass_at_k: pass,
        config_digest: config_digest(cfg),
        ledger_totals,
    })
}

// ---------------------------------------------------------------------------
// Plain-text rendering
// ---------------------------------------------------------------------------

fn fmt_pct(value: Option<&f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// One table row per labeled report, with the familiar accuracy columns.
pub fn render_table(rows: &[(String, &BenchReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "run", "average", "level 1", "level 2", "level 3", "pass@1", "pass@2", "pass@4"
    ));
    out.push_str(&format!("{}\n", "-".repeat(24 + 8 * 7 + 7)));
    for (label, report) in rows {
        out.push_str(&format!(
            "{:<24} {:>8.2} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            label,
            report.average,
            fmt_pct(report.per_level.get(&1)),
            fmt_pct(report.per_level.get(&2)),
            fmt_pct(report.per_level.get(&3)),
            fmt_pct(report.pass_at_k.get(&1)),
            fmt_pct(report.pass_at_k.get(&2)),
            fmt_pct(report.pass_at_k.get(&4)),
        ));
    }
    out
}

/// Full single-run report text: the accuracy table plus budget totals.
pub fn render_report(label: &str, report: &BenchReport) -> String {
    let mut out = render_table(&[(label.to_string(), report)]);
    let l = &report.ledger_totals;
    out.push_str(&format!(
        "\nconfig digest: {}\ncalls: policy={} verifier={} reflection={} merge={} (total {})\n",
        report.config_digest,
        l.policy_calls,
        l.verifier_calls,
        l.reflection_calls,
        l.merge_calls,
        l.total()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::CallKind;
    use std::io::Write;

    fn outcome(task_id: &str, level: u8, rollouts: &[bool], merged: bool) -> TaskOutcome {
        TaskOutcome {
            task_id: task_id.into(),
            level,
            rollout_correct: rollouts.to_vec(),
            merged_correct: merged,
            calls: CallLedger::default().record(CallKind::Policy),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn loads_wellformed_gaia_style_lines() {
        let file = write_lines(&[
            r#"{"task_id":"a","Question":"q1","Level":1,"Final answer":"42","file_name":""}"#,
            r#"{"task_id":"b","Question":"q2","Level":"2","Final answer":"x","file_name":"data.csv"}"#,
            r#"{"task_id":"c","question":"q3","level":1,"final_answer":"y"}"#,
        ]);
        let tasks = load_tasks(file.path(), None).unwrap();
        assert_eq!(tasks.len(), 3);
        assert_eq!(tasks[1].level, 2);
        assert_eq!(tasks[1].file_refs, vec!["data.csv"]);
        assert_eq!(tasks[2].ground_truth.as_deref(), Some("y"));
    }

    #[test]
    fn level_filter_keeps_order() {
        let file = write_lines(&[
            r#"{"task_id":"a","Question":"q","Level":1,"Final answer":"1"}"#,
            r#"{"task_id":"b","Question":"q","Level":2,"Final answer":"2"}"#,
            r#"{"task_id":"c","Question":"q","Level":1,"Final answer":"3"}"#,
        ]);
        let tasks = load_tasks(file.path(), Some(&[1])).unwrap();
        let ids: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let file = write_lines(&[
            r#"{"task_id":"a","Question":"q","Level":1,"Final answer":"1"}"#,
            "not json at all",
        ]);
        let err = load_tasks(file.path(), None).unwrap_err();
        assert!(matches!(err, BenchError::MalformedLine { line: 2, .. }), "{err}");

        let file = write_lines(&[r#"{"task_id":"a","Question":"q","Level":7,"Final answer":"1"}"#]);
        let err = load_tasks(file.path(), None).unwrap_err();
        assert!(matches!(err, BenchError::UnknownLevel { line: 1, .. }), "{err}");
    }

    #[test]
    fn loads_full_benchmark_shaped_file() {
        // 165 tasks with the benchmark's level sizes 53/86/26.
        let mut file = tempfile::NamedTempFile::new().unwrap();
        let mut index = 0;
        for (level, count) in [(1u8, 53usize), (2, 86), (3, 26)] {
            for _ in 0..count {
                writeln!(
                    file,
                    r#"{{"task_id":"t{index}","Question":"q{index}","Level":{level},"Final answer":"a{index}","file_name":""}}"#
                )
                .unwrap();
                index += 1;
            }
        }
        let tasks = load_tasks(file.path(), None).unwrap();
        assert_eq!(tasks.len(), 165);
        let count = |l: u8| tasks.iter().filter(|t| t.level == l).count();
        assert_eq!((count(1), count(2), count(3)), (53, 86, 26));
    }

    #[test]
    fn exact_match_normalizes_both_sides() {
        assert!(exact_match("Paris", "paris"));
        assert!(!exact_match("Paris, France", "Paris"));
        assert!(exact_match("1,000", "1000"));
    }

    #[test]
    fn pass_at_k_counts_first_k_only() {
        let outcomes = vec![
            outcome("a", 1, &[true, false, false, false], true),
            outcome("b", 1, &[false, false, false, false], false),
        ];
        assert_eq!(pass_at_k(&outcomes, 4).unwrap(), 50.0);

        let outcomes = vec![
            outcome("a", 1, &[false, true], false),
            outcome("b", 1, &[true, false], true),
        ];
        assert_eq!(pass_at_k(&outcomes, 1).unwrap(), 50.0);

        let err = pass_at_k(&outcomes, 3).unwrap_err();
        assert!(matches!(err, BenchError::NotEnoughRollouts { k: 3, .. }));
    }

    #[test]
    fn pass_at_k_nondecreasing_in_k() {
        let outcomes: Vec<TaskOutcome> = (0..50)
            .map(|i| {
                let bits = [i % 7 == 0, i % 3 == 0, i % 5 == 0, i % 2 == 0];
                outcome(&format!("t{i}"), 1 + (i % 3) as u8, &bits, bits[0])
            })
            .collect();
        let p1 = pass_at_k(&outcomes, 1).unwrap();
        let p2 = pass_at_k(&outcomes, 2).unwrap();
        let p4 = pass_at_k(&outcomes, 4).unwrap();
        assert!(p1 <= p2 && p2 <= p4, "{p1} {p2} {p4}");
    }

    fn any_config() -> RunConfig {
        use crate::models::{ModelPool, ModelRef, SamplingParams};
        RunConfig {
            strategy: crate::strategies::Strategy::Bon,
            sample_width: 4,
            beam_width: 2,
            subtree_count: 1,
            step_cap: 5,
            reflection: crate::reflection::ReflectionPolicy::off(),
            verify_method: crate::strategies::VerifyMethod::Listwise,
            merge_method: crate::merging::MergeMethod::Listwise,
            pool: ModelPool::new(vec![ModelRef::scripted("sim")]).unwrap(),
            params: SamplingParams::default(),
        }
    }

    #[test]
    fn report_arithmetic_on_synthetic_165_task_set() {
        // Level sizes 53/86/26 with correct counts 38/50/7.
        let mut outcomes = Vec::new();
        let spec = [(1u8, 53usize, 38usize), (2, 86, 50), (3, 26, 7)];
        for (level, total, correct) in spec {
            for i in 0..total {
                outcomes.push(outcome(
                    &format!("l{level}-{i}"),
                    level,
                    &[i < correct],
                    i < correct,
                ));
            }
        }
        let report = build_report(&outcomes, &any_config()).unwrap();
        assert!((report.average - 57.58).abs() < 0.005, "{}", report.average);
        assert!((report.per_level[&1] - 71.70).abs() < 0.005);
        assert!((report.per_level[&2] - 58.14).abs() < 0.005);
        assert!((report.per_level[&3] - 26.92).abs() < 0.005);
        assert_eq!(report.ledger_totals.policy_calls, 165);
    }

    #[test]
    fn single_task_report_and_empty_level_omission() {
        let outcomes = vec![outcome("a", 1, &[true], true)];
        let report = build_report(&outcomes, &any_config()).unwrap();
        assert_eq!(report.average, 100.0);
        assert_eq!(report.per_level.get(&1), Some(&100.0));
        assert!(!report.per_level.contains_key(&2), "empty levels are omitted");
        assert!(!report.per_level.contains_key(&3));
        assert_eq!(report.pass_at_k.get(&1), Some(&100.0));
        assert!(!report.pass_at_k.contains_key(&2), "needs 2 rollouts");
    }

    #[test]
    fn digest_tracks_config_changes() {
        let a = any_config();
        let mut b = any_config();
        b.sample_width = 8;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a), config_digest(&any_config()));
    }
}
