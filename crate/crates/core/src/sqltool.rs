//! The Text-to-SQL generator behind the pipeline, treated as a black box that
//! returns a beam of candidate statements.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SchemaSketch;
use crate::executor::{DbHandle, Executor};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleTag, TokenUsage};

#[derive(Debug, Error)]
pub enum SqlToolError {
    #[error("sql generator unavailable: {0}")]
    BackendUnavailable(String),
    #[error("sql generator returned an empty beam for: {0}")]
    EmptyBeam(String),
}

/// One generation input: a question (original or a variant) in the context
/// of a filtered schema.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub case_id: Option<&'a str>,
    pub question: &'a str,
    pub sketch: &'a SchemaSketch,
    pub evidence: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlCandidateSet {
    /// Beam order, best first, verbatim.
    pub candidates: Vec<String>,
    pub source_question: String,
}

pub trait SqlGenerator: Send + Sync {
    fn id(&self) -> &str;
    /// Backend beam, best first. May return more than the configured beam size.
    fn beam(&self, request: &GenerationRequest<'_>) -> Result<(Vec<String>, TokenUsage), SqlToolError>;
}

pub struct SqlTool {
    generator: Box<dyn SqlGenerator>,
    pub beam_size: usize,
}

impl std::fmt::Debug for SqlTool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqlTool")
            .field("generator", &self.generator.id())
            .field("beam_size", &self.beam_size)
            .finish()
    }
}

impl SqlTool {
    pub fn new(generator: Box<dyn SqlGenerator>, beam_size: usize) -> Self {
        Self {
            generator,
            beam_size: beam_size.max(1),
        }
    }

    pub fn id(&self) -> &str {
        self.generator.id()
    }

    /// Requests a beam. Never touches the database.
    pub fn generate(&self, request: &GenerationRequest<'_>) -> Result<SqlCandidateSet, SqlToolError> {
        let (mut beam, _usage) = self.generator.beam(request)?;
        beam.retain(|s| !s.trim().is_empty());
        beam.truncate(self.beam_size);
        if beam.is_empty() {
            return Err(SqlToolError::EmptyBeam(request.question.to_string()));
        }
        Ok(SqlCandidateSet {
            candidates: beam,
            source_question: request.question.to_string(),
        })
    }
}

/// First candidate that executes (including empty results). When none does,
/// rank 0 is returned so the reviewer sees, and flags, the failure.
pub fn first_executable(set: &SqlCandidateSet, db: &DbHandle, executor: &Executor) -> (String, usize) {
    for (i, sql) in set.candidates.iter().enumerate() {
        if executor.execute(sql, db).is_success() {
            return (sql.clone(), i);
        }
    }
    (set.candidates[0].clone(), 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_contains: Option<String>,
    pub beam: Vec<String>,
}

impl BeamRule {
    fn matches(&self, request: &GenerationRequest<'_>) -> bool {
        let id_ok = match (&self.case_id, request.case_id) {
            (None, _) => true,
            (Some(want), Some(got)) => want == got,
            (Some(_), None) => false,
        };
        let q_ok = self
            .question_contains
            .as_ref()
            .is_none_or(|s| request.question.contains(s.as_str()));
        id_ok && q_ok
    }
}

/// Beams from a rule list. Every field a rule sets must match; rules are
/// tried in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSqlTool {
    rules: Vec<BeamRule>,
}

impl ScriptedSqlTool {
    pub fn new(rules: Vec<BeamRule>) -> Self {
        Self { rules }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rules = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(rules))
    }
}

impl SqlGenerator for ScriptedSqlTool {
    fn id(&self) -> &str {
        "scripted-sqltool"
    }

    fn beam(&self, request: &GenerationRequest<'_>) -> Result<(Vec<String>, TokenUsage), SqlToolError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(request))
            .ok_or_else(|| SqlToolError::EmptyBeam(format!("no scripted beam for `{}`", request.question)))?;
        Ok((rule.beam.clone(), TokenUsage::default()))
    }
}

const GENERATOR_SYSTEM: &str = "You translate natural-language questions into SQLite queries over the given schema.";

/// Generator served through a chat-completions endpoint. The prompt carries
/// the schema sketch, the evidence and the question; the response holds one
/// statement per line.
pub struct RemoteSqlTool {
    gateway: Arc<Gateway>,
    beam_size: usize,
}

impl RemoteSqlTool {
    pub fn new(gateway: Arc<Gateway>, beam_size: usize) -> Self {
        Self { gateway, beam_size }
    }

    pub fn prompt(request: &GenerationRequest<'_>, beam_size: usize) -> String {
        let mut p = String::new();
        p.push_str(&request.sketch.text);
        if !request.evidence.trim().is_empty() {
            p.push_str(&format!("-- External knowledge: {}\n", request.evidence.trim()));
        }
        p.push_str(&format!("-- Question: {}\n", request.question.trim()));
        p.push_str(&format!(
            "-- Write up to {beam_size} alternative SQLite queries answering the question, best first, one query per line, no commentary.\n"
        ));
        p
    }
}

/// Pulls one statement per line out of a generator response, ignoring code
/// fences, numbering and prose.
pub fn parse_beam(response: &str) -> Vec<String> {
    response
        .lines()
        .map(str::trim)
        .filter(|l| !l.starts_with("```"))
        .map(|l| {
            let stripped = l.trim_start_matches(|c: char| c.is_ascii_digit());
            match stripped.strip_prefix(['.', ')']) {
                Some(rest) if stripped.len() < l.len() => rest.trim(),
                _ => l,
            }
        })
        .filter(|l| {
            let lower = l.to_lowercase();
            lower.starts_with("select") || lower.starts_with("with")
        })
        .map(str::to_string)
        .collect()
}

impl SqlGenerator for RemoteSqlTool {
    fn id(&self) -> &str {
        "remote-sqltool"
    }

    fn beam(&self, request: &GenerationRequest<'_>) -> Result<(Vec<String>, TokenUsage), SqlToolError> {
        let mut chat = ChatRequest::new(
            RoleTag::SqlTool,
            GENERATOR_SYSTEM,
            Self::prompt(request, self.beam_size),
        );
        chat.temperature = 0.0;
        if let Some(id) = request.case_id {
            chat = chat.attributed(id);
        }
        let resp = self.gateway.complete(&chat).map_err(|e| match e {
            GatewayError::MalformedResponse(m) => SqlToolError::EmptyBeam(m),
            other => SqlToolError::BackendUnavailable(other.to_string()),
        })?;
        Ok((parse_beam(&resp.content), resp.usage))
    }
}
