use serde::{Deserialize, Serialize};

use crate::backend::Message;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

/// The learnable part of one LLM step: an instruction and optional few-shot
/// demonstrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub step_id: String,
    pub instruction: String,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
    #[serde(default)]
    pub version: u64,
}

impl PromptTemplate {
    pub fn new(step_id: impl Into<String>, instruction: impl Into<String>) -> Result<Self> {
        let t = Self {
            step_id: step_id.into(),
            instruction: instruction.into(),
            demonstrations: Vec::new(),
            version: 0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::InvalidTemplate(format!(
                "step `{}` has an empty instruction",
                self.step_id
            )));
        }
        if let Some(i) = self.demonstrations.iter().position(|d| d.input.trim().is_empty()) {
            return Err(Error::InvalidTemplate(format!(
                "step `{}` demonstration {i} has an empty input",
                self.step_id
            )));
        }
        Ok(())
    }

    /// A successor template with a new instruction and demonstrations. The
    /// version is bumped.
    pub fn revised(&self, instruction: impl Into<String>, demonstrations: Vec<Demonstration>) -> Self {
        Self {
            step_id: self.step_id.clone(),
            instruction: instruction.into(),
            demonstrations,
            version: self.version + 1,
        }
    }

    /// Two templates with equal content keys render identically for every input.
    pub fn same_content(&self, other: &PromptTemplate) -> bool {
        self.instruction == other.instruction && self.demonstrations == other.demonstrations
    }
}

/// Renders a template as chat messages: the instruction as the system
/// message, each demonstration as a user/assistant exchange, then the step
/// input as the final user message.
pub fn render_prompt(template: &PromptTemplate, step_input: &str) -> Vec<Message> {
    let mut messages = Vec::with_capacity(2 + 2 * template.demonstrations.len());
    messages.push(Message::system(template.instruction.clone()));
    for d in &template.demonstrations {
        messages.push(Message::user(d.input.clone()));
        messages.push(Message::assistant(d.output.clone()));
    }
    messages.push(Message::user(step_input));
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MessageRole;

    fn demo(i: &str, o: &str) -> Demonstration {
        Demonstration {
            input: i.into(),
            output: o.into(),
        }
    }

    #[test]
    fn zero_demos_gives_system_then_user() {
        let t = PromptTemplate::new("a", "Answer briefly.").unwrap();
        let msgs = render_prompt(&t, "q");
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0], Message::system("Answer briefly."));
        assert_eq!(msgs[1], Message::user("q"));
    }

    #[test]
    fn two_demos_give_six_messages() {
        let mut t = PromptTemplate::new("a", "Answer.").unwrap();
        t.demonstrations = vec![demo("x1", "y1"), demo("x2", "y2")];
        let msgs = render_prompt(&t, "q");
        let roles: Vec<_> = msgs.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            vec![
                MessageRole::System,
                MessageRole::User,
                MessageRole::Assistant,
                MessageRole::User,
                MessageRole::Assistant,
                MessageRole::User
            ]
        );
        assert_eq!(msgs[3].content, "x2");
        assert_eq!(msgs[4].content, "y2");
    }

    #[test]
    fn rendering_is_byte_identical() {
        let mut t = PromptTemplate::new("a", "Answer.").unwrap();
        t.demonstrations = vec![demo("x", "y")];
        let a = serde_json::to_vec(&render_prompt(&t, "in")).unwrap();
        let b = serde_json::to_vec(&render_prompt(&t, "in")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_instruction_and_demo_input() {
        assert!(PromptTemplate::new("a", "  ").is_err());
        let mut t = PromptTemplate::new("a", "x").unwrap();
        t.demonstrations = vec![demo("", "y")];
        assert!(t.validate().is_err());
    }

    #[test]
    fn revision_bumps_version() {
        let t = PromptTemplate::new("a", "x").unwrap();
        let r = t.revised("y", vec![]);
        assert_eq!(r.version, 1);
        assert_eq!(r.step_id, "a");
    }
}
