//! Command implementations for the `ttscale` binary: run an experiment,
//! compare strategy configs under a shared seed, and regenerate reports from
//! persisted artifacts.

pub mod config;

use std::path::{Path, PathBuf};

use thiserror::Error;

use ttscale::artifact::{self, RunArtifact};
use ttscale::bench::{build_report, load_tasks, render_report, render_table};
use ttscale::runner::execute_run;

use config::{build_spec, load_config};

/// Exit codes: 0 success, 1 usage/config error, 2 runtime failure that
/// prevented report emission.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Arguments shared by `run` and each config of `compare`.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub output_dir: PathBuf,
    pub run_seed: Option<u64>,
    pub level_filter: Vec<u8>,
    pub max_in_flight: Option<usize>,
}

fn level_filter_slice(cli_levels: &[u8], config_levels: &[u8]) -> Option<Vec<u8>> {
    let chosen: &[u8] = if cli_levels.is_empty() { config_levels } else { cli_levels };
    if chosen.is_empty() {
        None
    } else {
        Some(chosen.to_vec())
    }
}

async fn execute_request(req: &RunRequest) -> Result<RunArtifact, CliError> {
    let file = load_config(&req.config_path, &req.overrides)?;
    let config_dir = req
        .config_path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let (spec, tasks_path, config_levels) =
        build_spec(&file, &config_dir, req.run_seed, req.max_in_flight)?;

    let filter = level_filter_slice(&req.level_filter, &config_levels);
    let tasks = load_tasks(&tasks_path, filter.as_deref())
        .map_err(|err| CliError::Config(err.to_string()))?;
    if tasks.is_empty() {
        return Err(CliError::Config(format!(
            "no tasks to run from {} with the given level filter",
            tasks_path.display()
        )));
    }

    spec.validate().map_err(|err| CliError::Config(err.to_string()))?;
    execute_run(&spec, &tasks)
        .await
        .map_err(|err| CliError::Runtime(err.to_string()))
}

/// Run one experiment and persist its artifacts. Per-task failures are
/// tolerated and summarized; the command still succeeds.
pub async fn cmd_run(req: &RunRequest) -> Result<(), CliError> {
    let run = execute_request(req).await?;
    artifact::write_run(&req.output_dir, &run)
        .map_err(|err| CliError::Runtime(err.to_string()))?;

    print!(
        "{}",
        render_report(run.manifest.config.strategy.as_str(), &run.report)
    );
    let incident_count: usize = run.tasks.iter().map(|t| t.incidents.len()).sum();
    let failed: usize = run
        .tasks
        .iter()
        .filter(|t| t.trajectories.is_empty())
        .count();
    println!(
        "{} tasks ({failed} failed), {incident_count} incidents; artifacts in {}",
        run.tasks.len(),
        req.output_dir.display()
    );
    Ok(())
}

/// Run each config under a shared run seed and emit a side-by-side table
/// keyed by strategy.
pub async fn cmd_compare(requests: &[RunRequest], shared_seed: u64) -> Result<(), CliError> {
    if requests.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --config files".into()));
    }

    let mut labeled = Vec::new();
    let mut runs = Vec::new();
    for (index, base) in requests.iter().enumerate() {
        let mut req = base.clone();
        req.run_seed = Some(shared_seed);
        req.output_dir = base.output_dir.join(format!("run-{index}"));
        let run = execute_request(&req).await?;
        artifact::write_run(&req.output_dir, &run)
            .map_err(|err| CliError::Runtime(err.to_string()))?;
        runs.push(run);
    }

    // Rows are keyed by strategy; repeated strategies are disambiguated by
    // their merge method, and failing that by position.
    let base: Vec<String> = runs
        .iter()
        .map(|r| r.manifest.config.strategy.as_str().to_string())
        .collect();
    let mut labels = base.clone();
    for i in 0..labels.len() {
        if base.iter().filter(|l| **l == base[i]).count() > 1 {
            let merge = serde_json::to_value(runs[i].manifest.config.merge_method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_else(|| format!("{i}"));
            labels[i] = format!("{}/{merge}", base[i]);
        }
    }
    let second_pass = labels.clone();
    for i in 0..labels.len() {
        if second_pass.iter().filter(|l| **l == second_pass[i]).count() > 1 {
            labels[i] = format!("{}#{i}", second_pass[i]);
        }
    }
    for (label, run) in labels.iter().zip(&runs) {
        labeled.push((label.clone(), &run.report));
    }

    let table = render_table(
        &labeled
            .iter()
            .map(|(l, r)| (l.clone(), *r))
            .collect::<Vec<_>>(),
    );
    print!("{table}");

    let out_root = &requests[0].output_dir;
    std::fs::create_dir_all(out_root)
        .map_err(|err| CliError::Runtime(format!("cannot create {}: {err}", out_root.display())))?;
    std::fs::write(out_root.join("compare.txt"), &table)
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    let json: Vec<serde_json::Value> = labeled
        .iter()
        .map(|(label, report)| serde_json::json!({ "label": label, "report": report }))
        .collect();
    let mut body = serde_json::to_string_pretty(&json).expect("reports serialize");
    body.push('\n');
    std::fs::write(out_root.join("compare.json"), body)
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    Ok(())
}

/// Regenerate a report from persisted artifacts, without any model calls.
pub async fn cmd_report(
    artifact_dir: &Path,
    level_filter: &[u8],
    out_file: Option<&Path>,
) -> Result<(), CliError> {
    let manifest = artifact::read_manifest(artifact_dir)
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    let outcomes = artifact::read_outcomes(artifact_dir)
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    artifact::validate_task_dirs(artifact_dir, &outcomes)
        .map_err(|err| CliError::Runtime(err.to_string()))?;

    let filtered: Vec<_> = if level_filter.is_empty() {
        outcomes
    } else {
        outcomes
            .into_iter()
            .filter(|o| level_filter.contains(&o.level))
            .collect()
    };
    if filtered.is_empty() {
        return Err(CliError::Runtime(
            "no outcomes match the requested level filter".into(),
        ));
    }

    let report = build_report(&filtered, &manifest.config)
        .map_err(|err| CliError::Runtime(err.to_string()))?;
    print!(
        "{}",
        render_report(manifest.config.strategy.as_str(), &report)
    );
    if let Some(path) = out_file {
        let mut body = serde_json::to_string_pretty(&report)
            .map_err(|err| CliError::Runtime(err.to_string()))?;
        body.push('\n');
        std::fs::write(path, body).map_err(|err| CliError::Runtime(err.to_string()))?;
    }
    Ok(())
}
