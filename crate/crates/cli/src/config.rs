//! Config file schema and override handling.
//!
//! The file is flat, human-editable TOML with one section per engine module.
//! Override keys (`--set key=value`) name either `section.key` or a bare
//! `key` that is unique across sections; overrides can only touch keys that
//! exist in the schema.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use ttscale::merging::MergeMethod;
use ttscale::models::{ModelPool, ModelRef, SamplingParams};
use ttscale::reflection::{ReflectionMode, ReflectionPolicy};
use ttscale::runner::RunSpec;
use ttscale::scripted::ScriptedWorld;
use ttscale::strategies::{RunConfig, Strategy, VerifyMethod};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub strategy: StrategySection,
    pub models: ModelsSection,
    pub scripted: ScriptedSection,
    pub reflection: ReflectionSection,
    pub verify: VerifySection,
    pub merge: MergeSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySection {
    pub strategy: Strategy,
    pub sample_width: u32,
    pub beam_width: u32,
    pub subtree_count: u32,
    pub step_cap: u32,
    pub run_seed: u64,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Baseline,
            sample_width: 4,
            beam_width: 2,
            subtree_count: 2,
            step_cap: 8,
            run_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub pool: Vec<ModelSpec>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reflection_model: Option<ModelSpec>,
    pub max_in_flight: usize,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            pool: vec![ModelSpec::Name("scripted".into())],
            temperature: 1.0,
            top_p: 0.95,
            judge: None,
            reflection_model: None,
            max_in_flight: 8,
        }
    }
}

/// A model in config: `"scripted"`, `"name@endpoint"`, or the full table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Name(String),
    Full {
        name: String,
        endpoint: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_env: Option<String>,
    },
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ModelRef, CliError> {
        match self {
            ModelSpec::Name(raw) if raw == "scripted" => Ok(ModelRef::scripted("scripted")),
            ModelSpec::Name(raw) => match raw.split_once('@') {
                Some((name, endpoint)) if !name.is_empty() && !endpoint.is_empty() => {
                    ModelRef::remote(name, endpoint, None)
                        .map_err(|err| CliError::Config(err.to_string()))
                }
                _ => Err(CliError::Config(format!(
                    "model spec `{raw}` must be `scripted` or `name@endpoint`"
                ))),
            },
            ModelSpec::Full { name, endpoint, auth_env } => {
                if endpoint == "scripted" {
                    if auth_env.is_some() {
                        return Err(CliError::Config(format!(
                            "scripted model `{name}` must not carry auth_env"
                        )));
                    }
                    Ok(ModelRef::scripted(name.clone()))
                } else {
                    ModelRef::remote(name.clone(), endpoint.clone(), auth_env.clone())
                        .map_err(|err| CliError::Config(err.to_string()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedSection {
    pub world_seed: u64,
    pub success_prob: f64,
    pub steps_to_answer: u32,
    pub judge_error_prob: f64,
    /// Empty map selects the built-in two-token vocabulary.
    pub per_step_value: BTreeMap<String, u8>,
}

impl Default for ScriptedSection {
    fn default() -> Self {
        Self {
            world_seed: 0,
            success_prob: 0.5,
            steps_to_answer: 3,
            judge_error_prob: 0.0,
            per_step_value: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReflectionSection {
    pub mode: ReflectionMode,
    pub threshold: u8,
}

impl Default for ReflectionSection {
    fn default() -> Self {
        Self { mode: ReflectionMode::Off, threshold: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub method: VerifyMethod,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { method: VerifyMethod::Listwise }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSection {
    pub method: MergeMethod,
}

impl Default for MergeSection {
    fn default() -> Self {
        Self { method: MergeMethod::Listwise }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub tasks: String,
    pub levels: Vec<u8>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { tasks: "tasks.jsonl".into(), levels: Vec::new() }
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(existing)), Value::Table(incoming)) => {
                merge_tables(existing, incoming);
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Locate an override key in the table: `section.key` directly, or a bare
/// key that appears in exactly one section.
fn resolve_key(table: &toml::Table, key: &str) -> Result<(String, String), CliError> {
    if let Some((section, field)) = key.split_once('.') {
        let exists = table
            .get(section)
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key(field));
        if exists {
            return Ok((section.to_string(), field.to_string()));
        }
        return Err(CliError::Config(format!("unknown config key `{key}`")));
    }
    let mut hits: Vec<String> = Vec::new();
    for (section, value) in table {
        if let Some(section_table) = value.as_table() {
            if section_table.contains_key(key) {
                hits.push(section.clone());
            }
        }
    }
    match hits.as_slice() {
        [section] => Ok((section.clone(), key.to_string())),
        [] => Err(CliError::Config(format!("unknown config key `{key}`"))),
        many => Err(CliError::Config(format!(
            "ambiguous config key `{key}` (present in sections: {})",
            many.join(", ")
        ))),
    }
}

fn parse_override_value(raw: &str) -> Value {
    // Try TOML literal syntax first (numbers, booleans, arrays, quoted
    // strings), then fall back to a bare string.
    if let Ok(table) = toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        if let Some(value) = table.get("v") {
            return value.clone();
        }
    }
    Value::String(raw.to_string())
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw_value) = assignment.split_once('=').ok_or_else(|| {
        CliError::Usage(format!("override `{assignment}` must have the form key=value"))
    })?;
    let (section, field) = resolve_key(table, key.trim())?;
    let value = parse_override_value(raw_value.trim());
    table
        .get_mut(&section)
        .and_then(Value::as_table_mut)
        .expect("section resolved above")
        .insert(field, value);
    Ok(())
}

/// Load a config file, apply `--set` overrides, and deserialize against the
/// full schema (defaults filled, unknown keys rejected).
pub fn load_config(path: &Path, overrides: &[String]) -> Result<FileConfig, CliError> {
    let content = std::fs::read_to_string(path).map_err(|err| {
        CliError::Config(format!("cannot read config {}: {err}", path.display()))
    })?;
    let user: toml::Table = toml::from_str(&content).map_err(|err| {
        CliError::Config(format!("config {} does not parse: {err}", path.display()))
    })?;

    let defaults = toml::Table::try_from(FileConfig::default())
        .expect("default config serializes to a table");
    let mut merged = defaults;
    merge_tables(&mut merged, user);
    for assignment in overrides {
        apply_override(&mut merged, assignment)?;
    }

    merged
        .try_into()
        .map_err(|err| CliError::Config(format!("config invalid: {err}")))
}

/// Resolve a file config into the engine's run spec plus the task-file path
/// (relative paths resolve against the config file's directory).
pub fn build_spec(
    file: &FileConfig,
    config_dir: &Path,
    seed_override: Option<u64>,
    max_in_flight_override: Option<usize>,
) -> Result<(RunSpec, PathBuf, Vec<u8>), CliError> {
    let members = file
        .models
        .pool
        .iter()
        .map(ModelSpec::resolve)
        .collect::<Result<Vec<_>, _>>()?;
    let pool = ModelPool::new(members).map_err(|err| CliError::Config(err.to_string()))?;

    let run_seed = seed_override.unwrap_or(file.strategy.run_seed);
    let params = SamplingParams::new(file.models.temperature, file.models.top_p, run_seed)
        .map_err(|err| CliError::Config(err.to_string()))?;

    let reflection = match file.reflection.mode {
        ReflectionMode::Off => ReflectionPolicy::off(),
        ReflectionMode::EveryStep => ReflectionPolicy::every_step(),
        ReflectionMode::Threshold => ReflectionPolicy::threshold(file.reflection.threshold)
            .map_err(|err| CliError::Config(err.to_string()))?,
    };

    let config = RunConfig {
        strategy: file.strategy.strategy,
        sample_width: file.strategy.sample_width,
        beam_width: file.strategy.beam_width,
        subtree_count: file.strategy.subtree_count,
        step_cap: file.strategy.step_cap,
        reflection,
        verify_method: file.verify.method,
        merge_method: file.merge.method,
        pool,
        params,
    };

    let world = if file.scripted.per_step_value.is_empty() {
        ScriptedWorld::new(
            file.scripted.world_seed,
            file.scripted.success_prob,
            file.scripted.steps_to_answer,
        )
    } else {
        ScriptedWorld::with_step_values(
            file.scripted.world_seed,
            file.scripted.success_prob,
            file.scripted.steps_to_answer,
            file.scripted.per_step_value.clone(),
        )
    }
    .map_err(|err| CliError::Config(err.to_string()))?;

    let judge = file.models.judge.as_ref().map(ModelSpec::resolve).transpose()?;
    let reflection_model = file
        .models
        .reflection_model
        .as_ref()
        .map(ModelSpec::resolve)
        .transpose()?;

    let mut spec = RunSpec::new(config).with_world(world);
    spec.judge = judge;
    spec.reflection_model = reflection_model;
    spec.judge_error_prob = file.scripted.judge_error_prob;
    spec.max_in_flight = max_in_flight_override.unwrap_or(file.models.max_in_flight);

    let tasks_path = {
        let raw = PathBuf::from(&file.bench.tasks);
        if raw.is_absolute() {
            raw
        } else {
            config_dir.join(raw)
        }
    };
    Ok((spec, tasks_path, file.bench.levels.clone()))
}
