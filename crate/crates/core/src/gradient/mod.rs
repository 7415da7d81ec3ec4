//! Optimizer roles that turn end-to-end failures into per-step supervision.
//!
//! Once per round, E1 summarizes the pipeline and E2 explains, per step, how
//! the step's output drives the final result. Then for each bad case E3
//! enumerates the errors, E4 turns them into a correction at the final-output
//! level, E5 maps that correction onto every step invocation in the trace, and
//! E6 rewrites each invocation's output. The `(step input, revised output)`
//! pairs become the step datasets.

mod roles;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Message, ModelBackend, ModelRequest};
use crate::error::{Error, Result};
use crate::pipeline::{Demonstration, Pipeline, PromptSet, ScoredCase, TaskMetric, Trace};

pub use roles::{Role, RoleTemplates};

/// Marker appended to role texts used as dependencies when no good case exists.
pub const STRUCTURAL_ONLY: &str = "(structural only)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineUnderstanding {
    pub task_summary: String,
    pub step_roles: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyReport {
    pub dependencies: BTreeMap<String, String>,
    /// Case ids of the good traces shown to the analyzer.
    pub provenance: Vec<String>,
    pub structural_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextualLoss {
    pub case_id: String,
    pub discrepancies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalGradient {
    pub case_id: String,
    pub diagnosis: String,
    pub correction_direction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalGradient {
    pub case_id: String,
    pub step_id: String,
    pub invocation_index: u32,
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisedOutput {
    pub case_id: String,
    pub step_id: String,
    pub invocation_index: u32,
    pub revised_text: String,
}

/// Supervision pairs for one step: recorded inputs and the outputs it should
/// have produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDataset {
    pub step_id: String,
    pub pairs: Vec<Demonstration>,
}

impl StepDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// E3 to E6 output for one bad case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFeedback {
    pub loss: TextualLoss,
    pub global: GlobalGradient,
    pub locals: Vec<LocalGradient>,
    pub revised: Vec<RevisedOutput>,
}

/// Runs the optimizer roles against a backend.
#[derive(Debug, Clone)]
pub struct GradientEngine {
    templates: RoleTemplates,
    models: BTreeMap<Role, String>,
    n_good: usize,
    seed: u64,
}

impl Default for GradientEngine {
    fn default() -> Self {
        Self::new(RoleTemplates::builtin())
    }
}

impl GradientEngine {
    pub fn new(templates: RoleTemplates) -> Self {
        Self {
            templates,
            models: BTreeMap::new(),
            n_good: 4,
            seed: 0,
        }
    }

    /// Routes a role's requests to `model_ref` instead of the role id.
    pub fn with_model(mut self, role: Role, model_ref: impl Into<String>) -> Self {
        self.models.insert(role, model_ref.into());
        self
    }

    /// Caps how many good traces E2 sees per step.
    pub fn with_n_good(mut self, n_good: usize) -> Self {
        self.n_good = n_good;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn templates(&self) -> &RoleTemplates {
        &self.templates
    }

    pub fn model_ref(&self, role: Role) -> &str {
        self.models.get(&role).map(String::as_str).unwrap_or(role.id())
    }

    /// Renders the role template and returns the trimmed completion.
    pub fn call_role(&self, role: Role, vars: &[(&str, &str)], backend: &dyn ModelBackend) -> Result<String> {
        let prompt = self.templates.render(role, vars)?;
        let request = ModelRequest::new(self.model_ref(role), vec![Message::user(prompt)], self.seed);
        Ok(backend.complete(&request)?.text.trim().to_string())
    }

    /// E1.
    pub fn analyze_pipeline(
        &self,
        pipeline: &Pipeline,
        prompts: &PromptSet,
        backend: &dyn ModelBackend,
    ) -> Result<PipelineUnderstanding> {
        pipeline.check_prompts(prompts)?;
        let mut listing = String::new();
        for step in pipeline.steps() {
            let p = &prompts[&step.step_id];
            listing.push_str(&format!("[{}] model: {}", step.step_id, step.model_ref));
            if !step.description.is_empty() {
                listing.push_str(&format!("; {}", step.description));
            }
            listing.push_str(&format!(
                "\nInstruction: {}\nDemonstrations: {}\n",
                p.instruction,
                p.demonstrations.len()
            ));
        }
        let workflow = pipeline.program().describe();
        let reply = self.call_role(
            Role::Understand,
            &[
                ("task", pipeline.task_description()),
                ("workflow", &workflow),
                ("prompts", listing.trim_end()),
            ],
            backend,
        )?;

        let mut task_summary = None;
        let mut parsed = BTreeMap::new();
        for line in reply.lines().map(str::trim) {
            if let Some(rest) = line.strip_prefix("TASK:") {
                task_summary = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("STEP ") {
                if let Some((id, role)) = rest.split_once(':') {
                    parsed.insert(id.trim().to_string(), role.trim().to_string());
                }
            }
        }
        let step_roles = pipeline
            .steps()
            .iter()
            .map(|s| {
                let role = parsed
                    .remove(&s.step_id)
                    .filter(|r| !r.is_empty())
                    .unwrap_or_else(|| {
                        if s.description.is_empty() {
                            format!("Step `{}` of the pipeline.", s.step_id)
                        } else {
                            s.description.clone()
                        }
                    });
                (s.step_id.clone(), role)
            })
            .collect();
        Ok(PipelineUnderstanding {
            task_summary: task_summary.unwrap_or_else(|| pipeline.task_description().to_string()),
            step_roles,
        })
    }

    /// E2. With no good cases every entry is the step's E1 role text, marked
    /// [`STRUCTURAL_ONLY`], and no backend call is made.
    pub fn analyze_dependencies(
        &self,
        understanding: &PipelineUnderstanding,
        good_cases: &[ScoredCase],
        backend: &dyn ModelBackend,
    ) -> Result<DependencyReport> {
        if good_cases.is_empty() {
            return Ok(DependencyReport {
                dependencies: understanding
                    .step_roles
                    .iter()
                    .map(|(id, role)| (id.clone(), format!("{role} {STRUCTURAL_ONLY}")))
                    .collect(),
                provenance: Vec::new(),
                structural_only: true,
            });
        }
        let consulted = &good_cases[..good_cases.len().min(self.n_good)];
        let summary = render_understanding(understanding);
        let mut dependencies = BTreeMap::new();
        for (step_id, role) in &understanding.step_roles {
            let traces = render_good_traces(consulted, step_id);
            let text = self.call_role(
                Role::Dependency,
                &[
                    ("understanding", &summary),
                    ("step_id", step_id),
                    ("role", role),
                    ("trace", &traces),
                ],
                backend,
            )?;
            if text.is_empty() {
                return Err(malformed(Role::Dependency, "empty dependency text"));
            }
            dependencies.insert(step_id.clone(), text);
        }
        Ok(DependencyReport {
            dependencies,
            provenance: consulted.iter().map(|c| c.case_id().to_string()).collect(),
            structural_only: false,
        })
    }

    /// E3.
    pub fn compute_textual_loss(
        &self,
        bad_case: &ScoredCase,
        metric: &dyn TaskMetric,
        backend: &dyn ModelBackend,
    ) -> Result<TextualLoss> {
        if !bad_case.is_bad() {
            return Err(Error::contract(format!(
                "textual loss requested for good case `{}`",
                bad_case.case_id()
            )));
        }
        let final_output = final_output_text(&bad_case.trace);
        let reply = self.call_role(
            Role::Loss,
            &[
                ("metric", metric.metric_id()),
                ("input", &bad_case.trace.input),
                ("final_output", &final_output),
                ("label", &bad_case.label),
            ],
            backend,
        )?;
        let bullets: Vec<String> = reply
            .lines()
            .map(str::trim)
            .filter_map(|l| l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")))
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        let discrepancies = if bullets.is_empty() {
            reply
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()
        } else {
            bullets
        };
        if discrepancies.is_empty() {
            return Err(malformed(Role::Loss, "no discrepancies listed"));
        }
        Ok(TextualLoss {
            case_id: bad_case.case_id().to_string(),
            discrepancies,
        })
    }

    /// E4. `trace` supplies the input and final output the loss refers to.
    pub fn compute_global_gradient(
        &self,
        loss: &TextualLoss,
        trace: &Trace,
        backend: &dyn ModelBackend,
    ) -> Result<GlobalGradient> {
        check_case(&loss.case_id, trace)?;
        if loss.discrepancies.is_empty() {
            return Err(Error::contract("textual loss has no discrepancies"));
        }
        let listed = loss
            .discrepancies
            .iter()
            .map(|d| format!("- {d}"))
            .collect::<Vec<_>>()
            .join("\n");
        let final_output = final_output_text(trace);
        let reply = self.call_role(
            Role::GlobalGradient,
            &[
                ("input", &trace.input),
                ("final_output", &final_output),
                ("loss", &listed),
            ],
            backend,
        )?;
        let (diagnosis, direction) = parse_diagnosis(&reply)?;
        Ok(GlobalGradient {
            case_id: loss.case_id.clone(),
            diagnosis,
            correction_direction: direction,
        })
    }

    /// E5, once per step record (loop repeats included).
    pub fn compute_local_gradients(
        &self,
        global: &GlobalGradient,
        report: &DependencyReport,
        trace: &Trace,
        backend: &dyn ModelBackend,
    ) -> Result<Vec<LocalGradient>> {
        check_case(&global.case_id, trace)?;
        let correction = format!(
            "Diagnosis: {}\nDirection: {}",
            global.diagnosis, global.correction_direction
        );
        let final_output = final_output_text(trace);
        trace
            .records
            .iter()
            .map(|r| {
                let dependency = report.dependencies.get(&r.step_id).ok_or_else(|| {
                    Error::contract(format!("dependency report has no entry for `{}`", r.step_id))
                })?;
                let direction = self.call_role(
                    Role::LocalGradient,
                    &[
                        ("step_id", &r.step_id),
                        ("dependency", dependency),
                        ("global_gradient", &correction),
                        ("step_input", &r.step_input),
                        ("step_output", &r.step_output),
                        ("final_output", &final_output),
                    ],
                    backend,
                )?;
                if direction.is_empty() {
                    return Err(malformed(Role::LocalGradient, "empty direction"));
                }
                Ok(LocalGradient {
                    case_id: trace.case_id.clone(),
                    step_id: r.step_id.clone(),
                    invocation_index: r.invocation_index,
                    direction,
                })
            })
            .collect()
    }

    /// E6, one revised output per local gradient.
    pub fn generate_revised_outputs(
        &self,
        locals: &[LocalGradient],
        trace: &Trace,
        backend: &dyn ModelBackend,
    ) -> Result<Vec<RevisedOutput>> {
        locals
            .iter()
            .map(|g| {
                if g.case_id != trace.case_id {
                    return Err(Error::contract(format!(
                        "local gradient for case `{}` applied to trace `{}`",
                        g.case_id, trace.case_id
                    )));
                }
                let record = trace.record(&g.step_id, g.invocation_index).ok_or_else(|| {
                    Error::contract(format!(
                        "no record {}#{} in trace `{}`",
                        g.step_id, g.invocation_index, trace.case_id
                    ))
                })?;
                let revised_text = self.call_role(
                    Role::Revise,
                    &[
                        ("step_id", &g.step_id),
                        ("step_input", &record.step_input),
                        ("step_output", &record.step_output),
                        ("local_gradient", &g.direction),
                    ],
                    backend,
                )?;
                if revised_text.is_empty() {
                    return Err(malformed(Role::Revise, "empty revised output"));
                }
                Ok(RevisedOutput {
                    case_id: g.case_id.clone(),
                    step_id: g.step_id.clone(),
                    invocation_index: g.invocation_index,
                    revised_text,
                })
            })
            .collect()
    }

    /// E3 to E6 for every bad case, in parallel on the current rayon pool.
    /// Results keep the order of `bad_cases`.
    pub fn process_bad_cases(
        &self,
        bad_cases: &[ScoredCase],
        report: &DependencyReport,
        metric: &dyn TaskMetric,
        backend: &dyn ModelBackend,
    ) -> Result<Vec<CaseFeedback>> {
        bad_cases
            .par_iter()
            .map(|case| {
                let loss = self.compute_textual_loss(case, metric, backend)?;
                let global = self.compute_global_gradient(&loss, &case.trace, backend)?;
                let locals = self.compute_local_gradients(&global, report, &case.trace, backend)?;
                let revised = self.generate_revised_outputs(&locals, &case.trace, backend)?;
                Ok(CaseFeedback {
                    loss,
                    global,
                    locals,
                    revised,
                })
            })
            .collect()
    }
}

/// Groups revised outputs by step, pairing each with the recorded step input.
pub fn build_step_datasets(
    revised: &[RevisedOutput],
    traces: &[Trace],
) -> Result<BTreeMap<String, StepDataset>> {
    let mut out: BTreeMap<String, StepDataset> = BTreeMap::new();
    for r in revised {
        let record = traces
            .iter()
            .find(|t| t.case_id == r.case_id)
            .and_then(|t| t.record(&r.step_id, r.invocation_index))
            .ok_or_else(|| {
                Error::contract(format!(
                    "revised output {}#{} of case `{}` has no matching record",
                    r.step_id, r.invocation_index, r.case_id
                ))
            })?;
        out.entry(r.step_id.clone())
            .or_insert_with(|| StepDataset {
                step_id: r.step_id.clone(),
                pairs: Vec::new(),
            })
            .pairs
            .push(Demonstration {
                input: record.step_input.clone(),
                output: r.revised_text.clone(),
            });
    }
    Ok(out)
}

fn malformed(role: Role, message: &str) -> Error {
    Error::MalformedResponse {
        role: role.id().to_string(),
        message: message.to_string(),
    }
}

fn check_case(case_id: &str, trace: &Trace) -> Result<()> {
    if case_id != trace.case_id {
        return Err(Error::contract(format!(
            "case id mismatch: `{case_id}` vs trace `{}`",
            trace.case_id
        )));
    }
    Ok(())
}

fn final_output_text(trace: &Trace) -> String {
    match (&trace.final_output, &trace.error) {
        (Some(out), _) => out.clone(),
        (None, Some(err)) => format!("<no output: {err}>"),
        (None, None) => "<no output>".to_string(),
    }
}

fn render_understanding(u: &PipelineUnderstanding) -> String {
    let mut s = format!("Task: {}", u.task_summary);
    for (id, role) in &u.step_roles {
        s.push_str(&format!("\nStep {id}: {role}"));
    }
    s
}

fn render_good_traces(cases: &[ScoredCase], step_id: &str) -> String {
    let mut s = String::new();
    for case in cases {
        let t = &case.trace;
        s.push_str(&format!("Case {}\nInput: {}\n", t.case_id, t.input));
        for r in t.records.iter().filter(|r| r.step_id == step_id) {
            s.push_str(&format!(
                "{}#{} input: {}\n{}#{} output: {}\n",
                r.step_id, r.invocation_index, r.step_input, r.step_id, r.invocation_index, r.step_output
            ));
        }
        s.push_str(&format!("Final output: {}\n\n", final_output_text(t)));
    }
    s.trim_end().to_string()
}

fn parse_diagnosis(reply: &str) -> Result<(String, String)> {
    let d = reply.find("DIAGNOSIS:");
    let g = reply.find("DIRECTION:");
    let (Some(d), Some(g)) = (d, g) else {
        return Err(malformed(
            Role::GlobalGradient,
            "expected `DIAGNOSIS:` and `DIRECTION:` sections",
        ));
    };
    let section = |start: usize, end: usize| reply[start..end].trim().to_string();
    let (diagnosis, direction) = if d < g {
        (section(d + 10, g), section(g + 10, reply.len()))
    } else {
        (section(d + 10, reply.len()), section(g + 10, d))
    };
    if diagnosis.is_empty() || direction.is_empty() {
        return Err(malformed(Role::GlobalGradient, "empty diagnosis or direction"));
    }
    Ok((diagnosis, direction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptRule, ScriptedBackend};
    use crate::pipeline::{Classification, StepRecord};

    fn rule(role: &str, pattern: &str, response: &str) -> ScriptRule {
        ScriptRule {
            role: role.into(),
            input_pattern: pattern.into(),
            response: response.into(),
        }
    }

    fn record(step: &str, idx: u32, input: &str, output: &str) -> StepRecord {
        StepRecord {
            step_id: step.into(),
            invocation_index: idx,
            step_input: input.into(),
            step_output: output.into(),
            latency_ms: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
        }
    }

    fn bad_case(id: &str, records: Vec<StepRecord>) -> ScoredCase {
        ScoredCase {
            trace: Trace {
                case_id: id.into(),
                input: "q".into(),
                final_output: Some("wrong".into()),
                records,
                seed: 0,
                error: None,
            },
            label: "right".into(),
            score: 0.0,
            classification: Classification::Bad,
        }
    }

    struct Em;
    impl TaskMetric for Em {
        fn metric_id(&self) -> &str {
            "exact_match"
        }
        fn score(&self, a: &str, b: &str) -> f64 {
            f64::from(u8::from(a == b))
        }
    }

    fn backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            vec![
                rule(
                    "e3",
                    r"Final output: ([^\n]*)\nLabel: ([^\n]*)\n",
                    "- expected \"$2\", got \"$1\"",
                ),
                rule(
                    "e4",
                    r#"expected "([^"]*)""#,
                    "DIAGNOSIS: wrong value\nDIRECTION: say \"$1\"",
                ),
                rule("e5", r"Step: (\w+)\n", "fix $1"),
                rule("e6", r"Step: (\w+)\n(?s).*Direction: ([^\n]*)", "revised by $2"),
            ],
        )
        .unwrap()
    }

    fn report(steps: &[&str]) -> DependencyReport {
        DependencyReport {
            dependencies: steps
                .iter()
                .map(|s| (s.to_string(), "matters".to_string()))
                .collect(),
            provenance: vec![],
            structural_only: false,
        }
    }

    #[test]
    fn chain_preserves_case_id_and_counts_invocations() {
        let b = backend();
        let engine = GradientEngine::default();
        let case = bad_case(
            "c7",
            vec![
                record("a", 0, "x0", "y0"),
                record("a", 1, "x1", "y1"),
                record("b", 0, "x2", "y2"),
            ],
        );
        let out = engine
            .process_bad_cases(std::slice::from_ref(&case), &report(&["a", "b"]), &Em, &b)
            .unwrap();
        let fb = &out[0];
        assert_eq!(fb.loss.case_id, "c7");
        assert_eq!(fb.loss.discrepancies, vec!["expected \"right\", got \"wrong\""]);
        assert_eq!(fb.global.case_id, "c7");
        assert_eq!(fb.global.correction_direction, "say \"right\"");
        assert_eq!(fb.locals.len(), 3);
        assert_eq!(fb.revised.len(), 3);
        assert_eq!(fb.locals[1].direction, "fix a");
        assert_eq!(fb.revised[2].revised_text, "revised by fix b");
        let ds = build_step_datasets(&fb.revised, std::slice::from_ref(&case.trace)).unwrap();
        assert_eq!(ds["a"].len(), 2);
        assert_eq!(ds["a"].pairs[1].input, "x1");
        assert_eq!(ds["b"].len(), 1);
    }

    #[test]
    fn good_case_is_rejected_by_loss() {
        let mut case = bad_case("g", vec![]);
        case.classification = Classification::Good;
        let err = GradientEngine::default()
            .compute_textual_loss(&case, &Em, &backend())
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_records_gives_no_locals() {
        let b = backend();
        let engine = GradientEngine::default();
        let case = bad_case("z", vec![]);
        let g = GlobalGradient {
            case_id: "z".into(),
            diagnosis: "d".into(),
            correction_direction: "c".into(),
        };
        assert!(engine
            .compute_local_gradients(&g, &report(&[]), &case.trace, &b)
            .unwrap()
            .is_empty());
        assert!(engine
            .generate_revised_outputs(&[], &case.trace, &b)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mismatched_case_is_contract_error() {
        let case = bad_case("a", vec![]);
        let g = GlobalGradient {
            case_id: "b".into(),
            diagnosis: "d".into(),
            correction_direction: "c".into(),
        };
        assert!(matches!(
            GradientEngine::default().compute_local_gradients(&g, &report(&[]), &case.trace, &backend()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dangling_revised_reference_is_rejected() {
        let case = bad_case("a", vec![record("s", 0, "x", "y")]);
        let g = LocalGradient {
            case_id: "a".into(),
            step_id: "s".into(),
            invocation_index: 4,
            direction: "d".into(),
        };
        assert!(GradientEngine::default()
            .generate_revised_outputs(&[g], &case.trace, &backend())
            .is_err());
    }

    #[test]
    fn empty_good_cases_fall_back_to_roles() {
        let u = PipelineUnderstanding {
            task_summary: "t".into(),
            step_roles: [("s".to_string(), "finds things".to_string())].into(),
        };
        let empty = ScriptedBackend::new(vec![], vec![]).unwrap();
        let r = GradientEngine::default()
            .analyze_dependencies(&u, &[], &empty)
            .unwrap();
        assert!(r.structural_only);
        assert_eq!(r.dependencies["s"], "finds things (structural only)");
        assert_eq!(empty.calls(), 0);
    }

    #[test]
    fn diagnosis_parsing() {
        assert_eq!(
            parse_diagnosis("DIAGNOSIS: a\nb\nDIRECTION: c").unwrap(),
            ("a\nb".to_string(), "c".to_string())
        );
        assert!(parse_diagnosis("no sections").is_err());
    }

    #[test]
    fn datasets_empty_without_revisions() {
        assert!(build_step_datasets(&[], &[]).unwrap().is_empty());
    }
}
