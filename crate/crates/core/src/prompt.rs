//! Hard, soft and mixed prompts that select the generation task.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    /// Primary task: the original code.
    Origin,
    /// Auxiliary task: the syntax-guided code.
    Syntax,
}

impl TaskId {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Origin => "origin",
            TaskId::Syntax => "syntax",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(TaskId::Origin),
            "syntax" => Ok(TaskId::Syntax),
            _ => Err(Error::Argument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    None,
    TaskOnly,
    Standard,
    Long,
    Soft,
    Mixed,
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => PromptKind::None,
            "task_only" | "task-only" => PromptKind::TaskOnly,
            "standard" => PromptKind::Standard,
            "long" => PromptKind::Long,
            "soft" => PromptKind::Soft,
            "mixed" => PromptKind::Mixed,
            _ => return Err(Error::Argument(format!("unknown prompt kind `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    #[serde(default)]
    pub n_soft: usize,
}

pub const DEFAULT_SOFT_TOKENS: usize = 4;

impl PromptTemplate {
    /// Builds a template; soft and mixed kinds get the default four virtual
    /// tokens, all others none.
    pub fn new(kind: PromptKind) -> Self {
        let n_soft = match kind {
            PromptKind::Soft | PromptKind::Mixed => DEFAULT_SOFT_TOKENS,
            _ => 0,
        };
        Self { kind, n_soft }
    }

    pub fn with_soft_tokens(kind: PromptKind, n_soft: usize) -> Result<Self> {
        if n_soft > 0 && !matches!(kind, PromptKind::Soft | PromptKind::Mixed) {
            return Err(Error::Argument(format!("{kind:?} prompts take no virtual tokens")));
        }
        Ok(Self { kind, n_soft })
    }

    /// Returns the prompt text and the number of learned virtual positions
    /// the model prepends to it.
    pub fn build(&self, task: TaskId, description: &str) -> (String, usize) {
        let text = match self.kind {
            PromptKind::None | PromptKind::Soft => description.to_string(),
            PromptKind::TaskOnly => format!("{task} : {description}"),
            PromptKind::Standard | PromptKind::Mixed => {
                format!("Generate {task} code : {description}")
            }
            PromptKind::Long => {
                format!("Generate Turducken-Style code under {task} : {description}")
            }
        };
        (text, self.n_soft)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(PromptKind::Standard)
    }
}

pub fn build_prompt(tpl: &PromptTemplate, task: TaskId, description: &str) -> (String, usize) {
    tpl.build(task, description)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard() {
        let (text, n) = build_prompt(&PromptTemplate::default(), TaskId::Origin, "sum a list");
        assert_eq!(text, "Generate origin code : sum a list");
        assert_eq!(n, 0);
    }

    #[test]
    fn none_passes_description() {
        let (text, n) = build_prompt(&PromptTemplate::new(PromptKind::None), TaskId::Syntax, "d");
        assert_eq!((text.as_str(), n), ("d", 0));
    }

    #[test]
    fn mixed_reports_four_virtual_tokens() {
        let (text, n) = build_prompt(&PromptTemplate::new(PromptKind::Mixed), TaskId::Origin, "d");
        assert_eq!((text.as_str(), n), ("Generate origin code : d", 4));
    }

    #[test]
    fn other_variants() {
        let t = |k| PromptTemplate::new(k).build(TaskId::Syntax, "d").0;
        assert_eq!(t(PromptKind::TaskOnly), "syntax : d");
        assert_eq!(t(PromptKind::Long), "Generate Turducken-Style code under syntax : d");
        assert_eq!(t(PromptKind::Soft), "d");
    }

    #[test]
    fn soft_tokens_only_for_soft_kinds() {
        assert!(PromptTemplate::with_soft_tokens(PromptKind::Standard, 2).is_err());
        assert!(PromptTemplate::with_soft_tokens(PromptKind::Soft, 2).is_ok());
    }

    #[test]
    fn injective_over_kind_and_task() {
        use std::collections::HashSet;
        let kinds = [
            PromptKind::None,
            PromptKind::TaskOnly,
            PromptKind::Standard,
            PromptKind::Long,
            PromptKind::Soft,
            PromptKind::Mixed,
        ];
        let mut seen = HashSet::new();
        for k in kinds {
            for task in [TaskId::Origin, TaskId::Syntax] {
                seen.insert(PromptTemplate::new(k).build(task, "d"));
            }
        }
        // `none` and `soft` ignore the task, so the visible text coincides
        // for both tasks; every other combination is distinct
        assert_eq!(seen.len(), 10);
    }
}
