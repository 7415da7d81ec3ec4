use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// The optimizer roles, each backed by one prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// E1: task summary and per-step roles.
    Understand,
    /// E2: how a step's output drives the final result.
    Dependency,
    /// E3: textual loss for a bad case.
    Loss,
    /// E4: correction direction at the final-output level.
    GlobalGradient,
    /// E5: per-invocation step direction.
    LocalGradient,
    /// E6: revised step output.
    Revise,
    /// Instruction rewriting used by the step optimizers.
    Propose,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Understand,
        Role::Dependency,
        Role::Loss,
        Role::GlobalGradient,
        Role::LocalGradient,
        Role::Revise,
        Role::Propose,
    ];

    /// Short id; also the default `model_ref` for the role's requests.
    pub fn id(self) -> &'static str {
        match self {
            Role::Understand => "e1",
            Role::Dependency => "e2",
            Role::Loss => "e3",
            Role::GlobalGradient => "e4",
            Role::LocalGradient => "e5",
            Role::Revise => "e6",
            Role::Propose => "propose",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Role::Understand => "e1_understand.txt",
            Role::Dependency => "e2_dependency.txt",
            Role::Loss => "e3_loss.txt",
            Role::GlobalGradient => "e4_global.txt",
            Role::LocalGradient => "e5_local.txt",
            Role::Revise => "e6_revise.txt",
            Role::Propose => "propose_instruction.txt",
        }
    }

    /// Exact placeholder set a template for this role must use.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Role::Understand => &["task", "workflow", "prompts"],
            Role::Dependency => &["understanding", "step_id", "role", "trace"],
            Role::Loss => &["metric", "input", "final_output", "label"],
            Role::GlobalGradient => &["input", "final_output", "loss"],
            Role::LocalGradient => &[
                "step_id",
                "dependency",
                "global_gradient",
                "step_input",
                "step_output",
                "final_output",
            ],
            Role::Revise => &["step_id", "step_input", "step_output", "local_gradient"],
            Role::Propose => &[
                "step_id",
                "instruction",
                "dependency",
                "examples",
                "candidate_index",
                "budget",
            ],
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            Role::Understand => include_str!("../../assets/roles/e1_understand.txt"),
            Role::Dependency => include_str!("../../assets/roles/e2_dependency.txt"),
            Role::Loss => include_str!("../../assets/roles/e3_loss.txt"),
            Role::GlobalGradient => include_str!("../../assets/roles/e4_global.txt"),
            Role::LocalGradient => include_str!("../../assets/roles/e5_local.txt"),
            Role::Revise => include_str!("../../assets/roles/e6_revise.txt"),
            Role::Propose => include_str!("../../assets/roles/propose_instruction.txt"),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| Error::config(format!("unknown optimizer role `{s}`")))
    }
}

/// Role prompt templates, validated against [`Role::placeholders`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTemplates {
    templates: BTreeMap<Role, String>,
}

impl RoleTemplates {
    /// Templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = Role::ALL
            .into_iter()
            .map(|r| (r, r.builtin().to_string()))
            .collect();
        Self { templates }
    }

    /// Built-in templates overridden by any `<role file name>` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut out = Self::builtin();
        for role in Role::ALL {
            let path = dir.join(role.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
                out.set(role, text)?;
            }
        }
        Ok(out)
    }

    pub fn set(&mut self, role: Role, template: String) -> Result<()> {
        validate(role, &template)?;
        self.templates.insert(role, template);
        Ok(())
    }

    pub fn get(&self, role: Role) -> &str {
        &self.templates[&role]
    }

    pub fn render(&self, role: Role, vars: &[(&str, &str)]) -> Result<String> {
        text::fill(self.get(role), |name| {
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
        })
        .map_err(|e| Error::contract(format!("role {role}: {e}")))
    }
}

fn validate(role: Role, template: &str) -> Result<()> {
    let found =
        text::placeholders(template).map_err(|e| Error::config(format!("role {role} template: {e}")))?;
    let expected: BTreeSet<String> = role.placeholders().iter().map(|s| s.to_string()).collect();
    if found != expected {
        let missing: Vec<_> = expected.difference(&found).cloned().collect();
        let extra: Vec<_> = found.difference(&expected).cloned().collect();
        return Err(Error::config(format!(
            "role {role} template placeholders mismatch (missing: {missing:?}, unexpected: {extra:?})"
        )));
    }
    Ok(())
}
