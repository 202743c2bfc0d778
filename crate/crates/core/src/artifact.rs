//! Run-artifact persistence: a run directory holds the resolved config, the
//! report (structured and plain text), one ledger for the run, per-task
//! outcomes, and a per-task directory with the search tree, candidate
//! trajectories, and the merge decision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{render_report, BenchReport, TaskOutcome};
use crate::domain::{StepRecord, Task, Trajectory};
use crate::ledger::CallLedger;
use crate::merging::MergeDecision;
use crate::scripted::ScriptedWorld;
use crate::strategies::{Incident, RunConfig};
use crate::tree::SearchTree;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const CONFIG_JSON: &str = "config.json";
pub const LEDGER_JSON: &str = "ledger.json";
pub const OUTCOMES_JSONL: &str = "outcomes.jsonl";
pub const INCIDENTS_JSONL: &str = "incidents.jsonl";
pub const TASKS_DIR: &str = "tasks";
pub const TREE_FILE: &str = "tree.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const MERGE_FILE: &str = "merge.json";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact io failure at {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("artifact {path} is corrupt: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("task `{task_id}` has a corrupt artifact ({path}): {detail}")]
    CorruptTask { task_id: String, path: String, detail: String },
    #[error("artifact directory {0} is missing required file {1}")]
    Missing(String, String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |err| ArtifactError::Io { path: path.display().to_string(), detail: err.to_string() }
}

/// Resolved run description persisted alongside results, sufficient to
/// reproduce the run and to regenerate its report offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<ScriptedWorld>,
    pub template_versions: TemplateVersions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateVersions {
    pub prm_score: String,
    pub prm_list: String,
    pub reflection: String,
}

impl Default for TemplateVersions {
    fn default() -> Self {
        Self {
            prm_score: crate::verification::PRM_SCORE_TEMPLATE_VERSION.to_string(),
            prm_list: crate::verification::PRM_LIST_TEMPLATE_VERSION.to_string(),
            reflection: crate::reflection::REFLECTION_TEMPLATE_VERSION.to_string(),
        }
    }
}

/// Everything persisted for one task.
#[derive(Debug)]
pub struct TaskArtifact {
    pub task: Task,
    pub outcome: TaskOutcome,
    pub trajectories: Vec<Trajectory>,
    pub trees: Vec<SearchTree>,
    pub merge: Option<MergeDecision>,
    pub incidents: Vec<Incident>,
}

/// A complete run ready for persistence.
#[derive(Debug)]
pub struct RunArtifact {
    pub manifest: RunManifest,
    pub report: BenchReport,
    pub ledger: CallLedger,
    pub tasks: Vec<TaskArtifact>,
}

/// One tree node per line in the task's tree file.
#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    tree: usize,
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subtree: Option<u32>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<StepRecord>,
}

/// Directory name for a task id: conservative charset, collisions avoided by
/// keeping ids unique upstream.
pub fn task_dir_name(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

fn write_text(path: &Path, content: &str) -> Result<(), ArtifactError> {
    fs::write(path, content).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|err| ArtifactError::Io {
        path: path.display().to_string(),
        detail: err.to_string(),
    })?;
    body.push('\n');
    write_text(path, &body)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), ArtifactError> {
    let mut body = String::new();
    for item in items {
        body.push_str(&serde_json::to_string(&item).map_err(|err| ArtifactError::Io {
            path: path.display().to_string(),
            detail: err.to_string(),
        })?);
        body.push('\n');
    }
    write_text(path, &body)
}

/// Persist a run into `dir`, creating it as needed.
pub fn write_run(dir: &Path, run: &RunArtifact) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(CONFIG_JSON), &run.manifest)?;
    write_json(&dir.join(REPORT_JSON), &run.report)?;
    write_text(&dir.join(REPORT_TXT), &render_report(run.manifest.config.strategy.as_str(), &run.report))?;
    write_json(&dir.join(LEDGER_JSON), &run.ledger)?;
    write_jsonl(&dir.join(OUTCOMES_JSONL), run.tasks.iter().map(|t| &t.outcome))?;

    let incidents: Vec<_> = run
        .tasks
        .iter()
        .flat_map(|t| {
            t.incidents.iter().map(|i| {
                serde_json::json!({ "task_id": t.task.id, "scope": i.scope, "detail": i.detail })
            })
        })
        .collect();
    write_jsonl(&dir.join(INCIDENTS_JSONL), incidents.into_iter())?;

    let tasks_root = dir.join(TASKS_DIR);
    fs::create_dir_all(&tasks_root).map_err(io_err(&tasks_root))?;
    for task in &run.tasks {
        let task_dir = tasks_root.join(task_dir_name(&task.task.id));
        fs::create_dir_all(&task_dir).map_err(io_err(&task_dir))?;

        let records = task.trees.iter().enumerate().flat_map(|(tree_index, tree)| {
            tree.nodes.iter().map(move |node| NodeRecord {
                tree: tree_index,
                id: node.node_id,
                parent: node.parent_id,
                subtree: node.subtree_tag,
                seed: node.seed,
                step: node.step.clone(),
            })
        });
        write_jsonl(&task_dir.join(TREE_FILE), records)?;
        write_jsonl(&task_dir.join(TRAJECTORIES_FILE), task.trajectories.iter())?;
        if let Some(merge) = &task.merge {
            write_json(&task_dir.join(MERGE_FILE), merge)?;
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Load the persisted run manifest.
pub fn read_manifest(dir: &Path) -> Result<RunManifest, ArtifactError> {
    let path = dir.join(CONFIG_JSON);
    if !path.exists() {
        return Err(ArtifactError::Missing(dir.display().to_string(), CONFIG_JSON.into()));
    }
    serde_json::from_str(&read_text(&path)?).map_err(|err| ArtifactError::Corrupt {
        path: path.display().to_string(),
        detail: err.to_string(),
    })
}

/// Load per-task outcomes in persisted order.
pub fn read_outcomes(dir: &Path) -> Result<Vec<TaskOutcome>, ArtifactError> {
    let path = dir.join(OUTCOMES_JSONL);
    if !path.exists() {
        return Err(ArtifactError::Missing(dir.display().to_string(), OUTCOMES_JSONL.into()));
    }
    let mut outcomes = Vec::new();
    for (index, line) in read_text(&path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str(line).map_err(|err| ArtifactError::Corrupt {
            path: path.display().to_string(),
            detail: format!("line {}: {err}", index + 1),
        })?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Validate each task's persisted artifacts, naming the offending task on
/// the first corruption found.
pub fn validate_task_dirs(dir: &Path, outcomes: &[TaskOutcome]) -> Result<(), ArtifactError> {
    for outcome in outcomes {
        let task_dir = dir.join(TASKS_DIR).join(task_dir_name(&outcome.task_id));
        let trajectories = task_dir.join(TRAJECTORIES_FILE);
        if !trajectories.exists() {
            return Err(ArtifactError::CorruptTask {
                task_id: outcome.task_id.clone(),
                path: trajectories.display().to_string(),
                detail: "missing trajectories file".into(),
            });
        }
        for (index, line) in read_text(&trajectories)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            serde_json::from_str::<Trajectory>(line).map_err(|err| ArtifactError::CorruptTask {
                task_id: outcome.task_id.clone(),
                path: trajectories.display().to_string(),
                detail: format!("line {}: {err}", index + 1),
            })?;
        }
        let merge = task_dir.join(MERGE_FILE);
        if merge.exists() {
            serde_json::from_str::<MergeDecision>(&read_text(&merge)?).map_err(|err| {
                ArtifactError::CorruptTask {
                    task_id: outcome.task_id.clone(),
                    path: merge.display().to_string(),
                    detail: err.to_string(),
                }
            })?;
        }
    }
    Ok(())
}

/// Path to a task's directory inside a run directory.
pub fn task_dir(dir: &Path, task_id: &str) -> PathBuf {
    dir.join(TASKS_DIR).join(task_dir_name(task_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_dir_names_are_filesystem_safe() {
        assert_eq!(task_dir_name("abc-123_x.y"), "abc-123_x.y");
        assert_eq!(task_dir_name("a/b:c d"), "a_b_c_d");
    }
}
