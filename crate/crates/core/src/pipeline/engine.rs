use std::collections::HashMap;

use super::{render_prompt, Pipeline, PromptSet, StepRecord, Trace};
use crate::backend::{ModelBackend, ModelRequest};
use crate::error::{Error, Result};

/// Handle a running [`super::Program`] uses to call its LLM steps.
pub struct StepContext<'a> {
    pipeline: &'a Pipeline,
    prompts: &'a PromptSet,
    backend: &'a dyn ModelBackend,
    seed: u64,
    records: Vec<StepRecord>,
    counters: HashMap<String, u32>,
    violation: Option<String>,
}

impl<'a> StepContext<'a> {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Runs one LLM step on `step_input` under the current prompt for that
    /// step and records the call.
    pub fn invoke(&mut self, step_id: &str, step_input: &str) -> Result<String> {
        let Some(step) = self.pipeline.step(step_id) else {
            let msg = format!("program invoked undeclared step `{step_id}`");
            self.violation.get_or_insert(msg.clone());
            return Err(Error::Contract(msg));
        };
        let template = self
            .prompts
            .get(step_id)
            .ok_or_else(|| Error::contract(format!("no prompt for step `{step_id}`")))?;
        let request = ModelRequest::new(
            step.model_ref.clone(),
            render_prompt(template, step_input),
            self.seed,
        );
        let response = self.backend.complete(&request)?;
        let counter = self.counters.entry(step_id.to_string()).or_insert(0);
        let invocation_index = *counter;
        *counter += 1;
        self.records.push(StepRecord {
            step_id: step_id.to_string(),
            invocation_index,
            step_input: step_input.to_string(),
            step_output: response.text.clone(),
            latency_ms: response.latency_ms,
            prompt_tokens: response.token_counts.prompt,
            completion_tokens: response.token_counts.completion,
        });
        Ok(response.text)
    }

    /// Number of calls made to `step_id` so far in this case.
    pub fn invocations(&self, step_id: &str) -> u32 {
        self.counters.get(step_id).copied().unwrap_or(0)
    }
}

/// Runs `pipeline` on one input.
///
/// Backend failures surface as [`Error::Execution`] carrying the partial
/// trace; invoking an undeclared step is a [`Error::Contract`] violation even
/// if the program swallowed the error.
pub fn execute(
    pipeline: &Pipeline,
    prompts: &PromptSet,
    case_id: &str,
    input: &str,
    backend: &dyn ModelBackend,
    seed: u64,
) -> Result<Trace> {
    pipeline.check_prompts(prompts)?;
    let mut ctx = StepContext {
        pipeline,
        prompts,
        backend,
        seed,
        records: Vec::new(),
        counters: HashMap::new(),
        violation: None,
    };
    let outcome = pipeline.program().run(&mut ctx, input);
    if let Some(msg) = ctx.violation.take() {
        return Err(Error::Contract(msg));
    }
    let mut trace = Trace {
        case_id: case_id.to_string(),
        input: input.to_string(),
        final_output: None,
        records: ctx.records,
        seed,
        error: None,
    };
    match outcome {
        Ok(out) => {
            trace.final_output = Some(out);
            Ok(trace)
        }
        Err(e) => {
            trace.error = Some(e.to_string());
            Err(Error::Execution {
                case_id: case_id.to_string(),
                source: Box::new(e),
                partial: Box::new(trace),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::{ScriptRule, ScriptedBackend};
    use crate::pipeline::{FnProgram, LlmStep, PromptTemplate, StepContext};

    fn step(id: &str) -> LlmStep {
        LlmStep {
            step_id: id.into(),
            model_ref: id.into(),
            description: String::new(),
        }
    }

    fn prompts(ids: &[&str]) -> PromptSet {
        ids.iter()
            .map(|id| {
                (
                    id.to_string(),
                    PromptTemplate::new(*id, format!("do {id}")).unwrap(),
                )
            })
            .collect()
    }

    fn echo_backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            vec![ScriptRule {
                role: "*".into(),
                input_pattern: "(?s).*### user\n(.*)\n$".into(),
                response: "<$1>".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_program_has_no_records() {
        let prog = Arc::new(FnProgram::new("echo", |_: &mut StepContext<'_>, i: &str| {
            Ok(i.to_string())
        }));
        let p = Pipeline::new(vec![], prog, "echo").unwrap();
        let t = execute(&p, &PromptSet::new(), "c0", "hello", &echo_backend(), 0).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(t.final_output.as_deref(), Some("hello"));
    }

    #[test]
    fn refine_loop_records_every_invocation() {
        let prog = Arc::new(FnProgram::new("refine", |ctx: &mut StepContext<'_>, i: &str| {
            let mut draft = ctx.invoke("draft", i)?;
            for _ in 0..3 {
                draft = ctx.invoke("refine", &draft)?;
            }
            Ok(draft)
        }));
        let p = Pipeline::new(vec![step("draft"), step("refine")], prog, "t").unwrap();
        let t = execute(&p, &prompts(&["draft", "refine"]), "c", "x", &echo_backend(), 1).unwrap();
        let idx: Vec<u32> = t
            .records
            .iter()
            .filter(|r| r.step_id == "refine")
            .map(|r| r.invocation_index)
            .collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(t.final_output.as_deref(), Some("<<<<x>>>>"));
    }

    #[test]
    fn undeclared_step_is_contract_violation_even_if_swallowed() {
        let prog = Arc::new(FnProgram::new("", |ctx: &mut StepContext<'_>, _: &str| {
            let _ = ctx.invoke("ghost", "x");
            Ok("done".to_string())
        }));
        let p = Pipeline::new(vec![step("a")], prog, "t").unwrap();
        let err = execute(&p, &prompts(&["a"]), "c", "x", &echo_backend(), 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn backend_failure_keeps_partial_trace() {
        let backend = ScriptedBackend::new(
            vec![],
            vec![ScriptRule {
                role: "a".into(),
                input_pattern: ".".into(),
                response: "ok".into(),
            }],
        )
        .unwrap();
        let prog = Arc::new(FnProgram::new("", |ctx: &mut StepContext<'_>, i: &str| {
            let x = ctx.invoke("a", i)?;
            ctx.invoke("b", &x)
        }));
        let p = Pipeline::new(vec![step("a"), step("b")], prog, "t").unwrap();
        match execute(&p, &prompts(&["a", "b"]), "c", "x", &backend, 0) {
            Err(Error::Execution { partial, source, .. }) => {
                assert_eq!(partial.records.len(), 1);
                assert!(partial.final_output.is_none());
                assert!(partial.error.is_some());
                assert!(matches!(*source, Error::Unscripted { .. }));
            }
            other => panic!("expected execution error, got {other:?}"),
        }
    }

    #[test]
    fn missing_prompt_is_rejected_before_running() {
        let prog = Arc::new(FnProgram::new(
            "",
            |_: &mut StepContext<'_>, i: &str| Ok(i.into()),
        ));
        let p = Pipeline::new(vec![step("a")], prog, "t").unwrap();
        assert!(execute(&p, &PromptSet::new(), "c", "x", &echo_backend(), 0).is_err());
    }
}
