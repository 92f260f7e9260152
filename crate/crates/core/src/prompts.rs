//! Plain-text prompt templates with `{name}` placeholders.
//!
//! A template file has a `[system]` section and a `[user]` section. The
//! shipped defaults are compiled in; a directory holding files with the same
//! names overrides them one by one.

use std::collections::HashMap;
use std::path::Path;

/// Heading of the retrieved-examples block in refiner prompts.
pub const EXAMPLES_HEADER: &str = "### Similar repairs";
/// Heading of the candidate list shown to the refiner.
pub const CANDIDATES_HEADER: &str = "### Candidate SQL";
/// Heading of the failure-memory block.
pub const MEMORY_HEADER: &str = "### Failure memory";
/// Opening of the clause-by-clause walkthrough instruction in reviewer prompts.
pub const REVIEW_STEPS_MARKER: &str = "Explain the SQL clause by clause";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, String> {
        let sys_at = text.find("[system]").ok_or("missing [system] section")?;
        let user_at = text.find("[user]").ok_or("missing [user] section")?;
        if user_at < sys_at {
            return Err("[system] must come before [user]".into());
        }
        let system = text[sys_at + "[system]".len()..user_at].trim().to_string();
        let user = text[user_at + "[user]".len()..].trim().to_string();
        Ok(Self { system, user })
    }

    pub fn render(&self, vars: &HashMap<&str, String>) -> (String, String) {
        (fill(&self.system, vars), fill(&self.user, vars))
    }
}

/// Single-pass placeholder substitution: inserted values are never rescanned,
/// and unknown `{...}` sequences are left alone.
pub fn fill(template: &str, vars: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let key = &after[..key_len];
        match (after[key_len..].starts_with('}'), vars.get(key)) {
            (true, Some(value)) if !key.is_empty() => {
                out.push_str(value);
                rest = &after[key_len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub reviewer_cot: PromptTemplate,
    pub reviewer_direct: PromptTemplate,
    pub crafter: PromptTemplate,
    pub refiner: PromptTemplate,
}

const FILES: [&str; 4] = ["reviewer_cot.txt", "reviewer_direct.txt", "crafter.txt", "refiner.txt"];

impl Default for PromptSet {
    fn default() -> Self {
        let parse = |t: &str| PromptTemplate::parse(t).expect("shipped template");
        Self {
            reviewer_cot: parse(include_str!("../templates/reviewer_cot.txt")),
            reviewer_direct: parse(include_str!("../templates/reviewer_direct.txt")),
            crafter: parse(include_str!("../templates/crafter.txt")),
            refiner: parse(include_str!("../templates/refiner.txt")),
        }
    }
}

impl PromptSet {
    /// Defaults, with any template file found in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut set = Self::default();
        for name in FILES {
            let path = dir.join(name);
            if !path.is_file() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let t = PromptTemplate::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            match name {
                "reviewer_cot.txt" => set.reviewer_cot = t,
                "reviewer_direct.txt" => set.reviewer_direct = t,
                "crafter.txt" => set.crafter = t,
                _ => set.refiner = t,
            }
        }
        Ok(set)
    }
}
