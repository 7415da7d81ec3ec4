//! Fixture tasks bundled with the crate.
//!
//! `scripted-qa` is a two-step retrieve/answer pipeline whose script makes a
//! few prompt rewrites visibly pay off on the dev split. `loop-dialogue`
//! interviews a simulated patient in a loop, so its steps run several times
//! per case.

use crate::backend::ScriptFile;
use crate::error::{Error, Result};
use crate::pipeline::graph::GraphDefinition;
use crate::pipeline::{Pipeline, PromptSet};

use super::dataset::{parse_dataset, Example};

pub const BUILTIN_TASKS: [&str; 2] = ["scripted-qa", "loop-dialogue"];

/// File names every fixture ships.
pub const FIXTURE_FILES: [&str; 5] = [
    "pipeline.json",
    "prompts.json",
    "train.jsonl",
    "dev.jsonl",
    "script.json",
];

macro_rules! fixture_files {
    ($dir:literal) => {
        [
            include_str!(concat!("../../assets/fixtures/", $dir, "/pipeline.json")),
            include_str!(concat!("../../assets/fixtures/", $dir, "/prompts.json")),
            include_str!(concat!("../../assets/fixtures/", $dir, "/train.jsonl")),
            include_str!(concat!("../../assets/fixtures/", $dir, "/dev.jsonl")),
            include_str!(concat!("../../assets/fixtures/", $dir, "/script.json")),
        ]
    };
}

/// Raw text of `file` from the named fixture.
pub fn builtin_asset(task: &str, file: &str) -> Result<&'static str> {
    let files = match task {
        "scripted-qa" => fixture_files!("scripted_qa"),
        "loop-dialogue" => fixture_files!("loop_dialogue"),
        other => {
            return Err(Error::config(format!(
                "unknown built-in task `{other}` (expected one of {BUILTIN_TASKS:?})"
            )))
        }
    };
    FIXTURE_FILES
        .iter()
        .position(|f| *f == file)
        .map(|i| files[i])
        .ok_or_else(|| Error::config(format!("built-in task `{task}` has no file `{file}`")))
}

#[derive(Debug, Clone)]
pub struct BuiltinTask {
    pub name: String,
    pub graph: GraphDefinition,
    pub prompts: PromptSet,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub script: ScriptFile,
    pub metric: String,
}

impl BuiltinTask {
    pub fn pipeline(&self) -> Result<Pipeline> {
        self.graph.clone().into_pipeline()
    }
}

pub fn builtin_task(name: &str) -> Result<BuiltinTask> {
    let asset = |file: &str| builtin_asset(name, file);
    let bad = |file: &str, msg: String| Error::config(format!("built-in `{name}/{file}`: {msg}"));
    let data = |file: &str, prefix: &str| {
        parse_dataset(asset(file)?, prefix).map_err(|(line, m)| bad(file, format!("line {line}: {m}")))
    };
    Ok(BuiltinTask {
        name: name.to_string(),
        graph: GraphDefinition::parse(asset("pipeline.json")?)?,
        prompts: serde_json::from_str(asset("prompts.json")?)
            .map_err(|e| bad("prompts.json", e.to_string()))?,
        train: data("train.jsonl", "train")?,
        dev: data("dev.jsonl", "dev")?,
        script: serde_json::from_str(asset("script.json")?).map_err(|e| bad("script.json", e.to_string()))?,
        metric: "exact_match".into(),
    })
}
