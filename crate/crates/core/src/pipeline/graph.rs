//! Declarative pipeline format.
//!
//! A graph file declares the steps and a `flow` of operations run in order
//! against a string environment. `input` holds the case input; inside a
//! `loop`, `iteration` holds the 0-based pass number. Strings in operations
//! are `{var}` templates.
//!
//! ```json
//! {
//!   "task_description": "answer questions",
//!   "steps": [{"step_id": "answer", "model_ref": "answer"}],
//!   "flow": [{"op": "call", "step": "answer", "input": "{input}", "output": "a"}],
//!   "output": "{a}"
//! }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LlmStep, Pipeline, Program, StepContext};
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub var: String,
    /// Regex searched in the variable's value.
    pub matches: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Call {
        step: String,
        input: String,
        output: String,
    },
    Set {
        var: String,
        value: String,
    },
    /// Appends the rendered value plus a newline.
    Append {
        var: String,
        value: String,
    },
    /// Stores capture group 1 (or the whole match) of `pattern` in `from`.
    Extract {
        var: String,
        from: String,
        pattern: String,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// Calls a non-LLM tool registered on the program.
    Tool {
        tool: String,
        input: String,
        output: String,
    },
    Branch {
        when: Condition,
        then: Vec<Op>,
        #[serde(default)]
        otherwise: Vec<Op>,
    },
    /// Runs `body` up to `max_iterations` times, stopping early once `until` matches.
    Loop {
        max_iterations: u32,
        body: Vec<Op>,
        #[serde(default)]
        until: Option<Condition>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDefinition {
    pub task_description: String,
    pub steps: Vec<LlmStep>,
    pub flow: Vec<Op>,
    pub output: String,
}

impl GraphDefinition {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                line: j.line(),
                message: j.to_string(),
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_pipeline(self) -> Result<Pipeline> {
        let steps = self.steps.clone();
        let task = self.task_description.clone();
        let program = GraphProgram::new(self)?;
        Pipeline::new(steps, Arc::new(program), task)
    }
}

pub type Tool = Arc<dyn Fn(&str) -> Result<String> + Send + Sync>;

pub struct GraphProgram {
    def: GraphDefinition,
    patterns: HashMap<String, Regex>,
    tools: HashMap<String, Tool>,
}

impl GraphProgram {
    pub fn new(def: GraphDefinition) -> Result<Self> {
        Self::with_tools(def, HashMap::new())
    }

    /// Builds the program with extra tools on top of the built-in `patient`.
    pub fn with_tools(def: GraphDefinition, tools: HashMap<String, Tool>) -> Result<Self> {
        let mut program = Self {
            def,
            patterns: HashMap::new(),
            tools,
        };
        program
            .tools
            .entry("patient".into())
            .or_insert_with(|| Arc::new(patient_tool));
        let flow = program.def.flow.clone();
        program.validate(&flow)?;
        text::placeholders(&program.def.output).map_err(Error::config)?;
        Ok(program)
    }

    fn compile(&mut self, pattern: &str) -> Result<()> {
        if !self.patterns.contains_key(pattern) {
            let re =
                Regex::new(pattern).map_err(|e| Error::config(format!("bad pattern `{pattern}`: {e}")))?;
            self.patterns.insert(pattern.to_string(), re);
        }
        Ok(())
    }

    fn validate(&mut self, ops: &[Op]) -> Result<()> {
        for op in ops {
            match op {
                Op::Call { step, input, .. } => {
                    if !self.def.steps.iter().any(|s| &s.step_id == step) {
                        return Err(Error::config(format!("flow calls undeclared step `{step}`")));
                    }
                    text::placeholders(input).map_err(Error::config)?;
                }
                Op::Set { value, .. } | Op::Append { value, .. } => {
                    text::placeholders(value).map_err(Error::config)?;
                }
                Op::Extract { pattern, .. } => self.compile(pattern)?,
                Op::Tool { tool, input, .. } => {
                    if !self.tools.contains_key(tool) {
                        return Err(Error::config(format!("unknown tool `{tool}`")));
                    }
                    text::placeholders(input).map_err(Error::config)?;
                }
                Op::Branch {
                    when,
                    then,
                    otherwise,
                } => {
                    self.compile(&when.matches)?;
                    self.validate(then)?;
                    self.validate(otherwise)?;
                }
                Op::Loop { body, until, .. } => {
                    if let Some(c) = until {
                        self.compile(&c.matches)?;
                    }
                    self.validate(body)?;
                }
            }
        }
        Ok(())
    }

    fn holds(&self, cond: &Condition, env: &BTreeMap<String, String>) -> Result<bool> {
        let value = env
            .get(&cond.var)
            .ok_or_else(|| Error::contract(format!("condition reads unset variable `{}`", cond.var)))?;
        Ok(self.patterns[&cond.matches].is_match(value))
    }

    fn run_ops(
        &self,
        ops: &[Op],
        ctx: &mut StepContext<'_>,
        env: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        for op in ops {
            match op {
                Op::Call { step, input, output } => {
                    let rendered = render(input, env)?;
                    let out = ctx.invoke(step, &rendered)?;
                    env.insert(output.clone(), out);
                }
                Op::Set { var, value } => {
                    let v = render(value, env)?;
                    env.insert(var.clone(), v);
                }
                Op::Append { var, value } => {
                    let v = render(value, env)?;
                    let slot = env.entry(var.clone()).or_default();
                    slot.push_str(&v);
                    slot.push('\n');
                }
                Op::Extract {
                    var,
                    from,
                    pattern,
                    fallback,
                } => {
                    let source = env
                        .get(from)
                        .ok_or_else(|| Error::contract(format!("extract reads unset variable `{from}`")))?;
                    let re = &self.patterns[pattern];
                    let value = match re.captures(source) {
                        Some(c) => c
                            .get(1)
                            .or_else(|| c.get(0))
                            .map(|m| m.as_str().trim().to_string()),
                        None => None,
                    };
                    let value = match (value, fallback) {
                        (Some(v), _) => v,
                        (None, Some(f)) => render(f, env)?,
                        (None, None) => source.trim().to_string(),
                    };
                    env.insert(var.clone(), value);
                }
                Op::Tool { tool, input, output } => {
                    let rendered = render(input, env)?;
                    let out = (self.tools[tool])(&rendered)?;
                    env.insert(output.clone(), out);
                }
                Op::Branch {
                    when,
                    then,
                    otherwise,
                } => {
                    if self.holds(when, env)? {
                        self.run_ops(then, ctx, env)?;
                    } else {
                        self.run_ops(otherwise, ctx, env)?;
                    }
                }
                Op::Loop {
                    max_iterations,
                    body,
                    until,
                } => {
                    for i in 0..*max_iterations {
                        env.insert("iteration".into(), i.to_string());
                        self.run_ops(body, ctx, env)?;
                        if let Some(c) = until {
                            if self.holds(c, env)? {
                                break;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl Program for GraphProgram {
    fn run(&self, ctx: &mut StepContext<'_>, input: &str) -> Result<String> {
        let mut env = BTreeMap::new();
        env.insert("input".to_string(), input.to_string());
        self.run_ops(&self.def.flow, ctx, &mut env)?;
        render(&self.def.output, &env)
    }

    fn describe(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            flow: &'a [Op],
            output: &'a str,
        }
        serde_json::to_string_pretty(&View {
            flow: &self.def.flow,
            output: &self.def.output,
        })
        .expect("flow serializes")
    }
}

fn render(template: &str, env: &BTreeMap<String, String>) -> Result<String> {
    text::fill(template, |name| env.get(name).map(String::as_str)).map_err(Error::Contract)
}

/// Simulated respondent: input is `fact; fact; ...` on the first line and a
/// 0-based index on the second; answers with that fact.
fn patient_tool(input: &str) -> Result<String> {
    let (facts, index) = input
        .rsplit_once('\n')
        .ok_or_else(|| Error::contract("patient tool expects `facts\\nindex`"))?;
    let index: usize = index
        .trim()
        .parse()
        .map_err(|_| Error::contract(format!("patient tool: bad index `{index}`")))?;
    Ok(facts
        .split(';')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .nth(index)
        .map(str::to_string)
        .unwrap_or_else(|| "Nothing else to report.".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptRule, ScriptedBackend};
    use crate::pipeline::{execute, PromptSet, PromptTemplate};

    fn backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            vec![
                ScriptRule {
                    role: "check".into(),
                    input_pattern: "(?s)### user\n(?:[^\n]+\n){3}\n$".into(),
                    response: "SUFFICIENT".into(),
                },
                ScriptRule {
                    role: "check".into(),
                    input_pattern: ".".into(),
                    response: "MORE".into(),
                },
                ScriptRule {
                    role: "*".into(),
                    input_pattern: "(?s).*### user\n(.*)\n$".into(),
                    response: "ANSWER: $1".into(),
                },
            ],
        )
        .unwrap()
    }

    fn def() -> GraphDefinition {
        GraphDefinition::parse(
            r#"{
              "task_description": "t",
              "steps": [
                {"step_id": "check", "model_ref": "check"},
                {"step_id": "final", "model_ref": "final"}
              ],
              "flow": [
                {"op": "set", "var": "notes", "value": ""},
                {"op": "loop", "max_iterations": 5, "until": {"var": "verdict", "matches": "^SUFFICIENT"},
                 "body": [
                   {"op": "tool", "tool": "patient", "input": "{input}\n{iteration}", "output": "fact"},
                   {"op": "append", "var": "notes", "value": "{fact}"},
                   {"op": "call", "step": "check", "input": "{notes}", "output": "verdict"}
                 ]},
                {"op": "call", "step": "final", "input": "{notes}", "output": "raw"},
                {"op": "extract", "var": "answer", "from": "raw", "pattern": "ANSWER:\\s*([^\\n]*)"}
              ],
              "output": "{answer}"
            }"#,
        )
        .unwrap()
    }

    fn prompts() -> PromptSet {
        ["check", "final"]
            .iter()
            .map(|s| (s.to_string(), PromptTemplate::new(*s, "go").unwrap()))
            .collect()
    }

    #[test]
    fn loop_stops_when_condition_matches() {
        let p = def().into_pipeline().unwrap();
        let t = execute(&p, &prompts(), "c", "a; b; c; d", &backend(), 0).unwrap();
        let checks = t.records.iter().filter(|r| r.step_id == "check").count();
        // Notes hold three lines after the third pass.
        assert_eq!(checks, 3);
        assert_eq!(t.final_output.as_deref(), Some("a"));
    }

    #[test]
    fn undeclared_call_rejected_at_load() {
        let mut d = def();
        d.flow.push(Op::Call {
            step: "ghost".into(),
            input: "x".into(),
            output: "y".into(),
        });
        assert!(matches!(d.into_pipeline(), Err(Error::Config(_))));
    }

    #[test]
    fn unset_variable_is_contract_error() {
        let mut d = def();
        d.output = "{nothing}".into();
        let p = d.into_pipeline().unwrap();
        let err = execute(&p, &prompts(), "c", "a", &backend(), 0).unwrap_err();
        assert!(matches!(err, Error::Execution { .. }));
    }

    #[test]
    fn patient_tool_reveals_in_order() {
        assert_eq!(patient_tool("x; y\n1").unwrap(), "y");
        assert_eq!(patient_tool("x; y\n5").unwrap(), "Nothing else to report.");
    }

    #[test]
    fn description_is_the_flow() {
        let p = GraphProgram::new(def()).unwrap();
        assert!(p.describe().contains("\"op\": \"loop\""));
    }
}
