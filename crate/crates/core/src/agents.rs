//! The three agents of the repair loop.
//!
//! - [`SqlReviewer`] runs an execution precheck, then asks the LLM to walk the
//!   statement clause by clause and give a verdict.
//! - [`QueryCrafter`] paraphrases the question and pools executable,
//!   deduplicated generator output for those paraphrases.
//! - [`SqlRefiner`] builds the error record, retrieves similar repairs, picks
//!   or rewrites the final statement, and keeps the per-case failure memory.
//!
//! Every agent speaks through the shared [`Gateway`] and tallies the tokens
//! it spends into the caller's [`CaseSession`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, Corpus, QuestionCase, SchemaFilter, SchemaSketch};
use crate::executor::{rows_equal, DbHandle, ExecStatus, Executor, ResultSignature};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleTag, RoleUsage};
use crate::prompts::{self, PromptSet, PromptTemplate};
use crate::sqltext;
use crate::sqltool::{first_executable, GenerationRequest, SqlTool, SqlToolError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    SqlTool(#[from] SqlToolError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Per-case bookkeeping threaded through agent calls.
#[derive(Debug, Clone, Default)]
pub struct CaseSession {
    pub case_id: String,
    pub usage: RoleUsage,
    pub llm_calls: u32,
}

impl CaseSession {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            ..Self::default()
        }
    }
}

/// Gateway plus templates, shared by all agents.
#[derive(Clone)]
pub struct AgentContext {
    pub gateway: Arc<Gateway>,
    pub prompts: Arc<PromptSet>,
    pub executor: Executor,
}

impl AgentContext {
    fn chat(
        &self,
        session: &mut CaseSession,
        role: RoleTag,
        template: &PromptTemplate,
        vars: &HashMap<&str, String>,
    ) -> Result<String, GatewayError> {
        let (system, user) = template.render(vars);
        let request = ChatRequest::new(role, system, user).attributed(&session.case_id);
        let resp = self.gateway.complete(&request)?;
        session.usage.record(role, resp.usage);
        session.llm_calls += 1;
        Ok(resp.content)
    }
}

fn or_none(text: &str) -> String {
    if text.trim().is_empty() {
        "(none)".to_string()
    } else {
        text.trim().to_string()
    }
}

fn base_vars(case: &QuestionCase, sketch: &SchemaSketch, sql: &str) -> HashMap<&'static str, String> {
    HashMap::from([
        ("question", case.question.trim().to_string()),
        ("evidence", or_none(&case.evidence)),
        ("schema", sketch.text.trim_end().to_string()),
        ("sql", sqltext::strip_statement(sql).to_string()),
    ])
}

// ---------------------------------------------------------------------------
// Reviewer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    /// True when the SQL is judged correct.
    pub label: bool,
    pub rationale: String,
    pub syntax_precheck: ExecStatus,
}

/// Reads the final `VERDICT: CORRECT|INCORRECT` marker.
pub fn parse_verdict(text: &str) -> Option<bool> {
    for line in text.lines().rev() {
        let upper = line.to_uppercase();
        let Some(at) = upper.find("VERDICT:") else {
            continue;
        };
        let word: String = upper[at + "VERDICT:".len()..]
            .trim_start()
            .trim_start_matches(['*', '`', '"'])
            .chars()
            .take_while(|c| c.is_ascii_alphabetic())
            .collect();
        return match word.as_str() {
            "CORRECT" => Some(true),
            "INCORRECT" => Some(false),
            _ => None,
        };
    }
    None
}

pub struct SqlReviewer {
    pub ctx: AgentContext,
}

impl SqlReviewer {
    pub fn review(
        &self,
        sql: &str,
        case: &QuestionCase,
        sketch: &SchemaSketch,
        db: &DbHandle,
        use_cot: bool,
        session: &mut CaseSession,
    ) -> Result<ReviewVerdict, AgentError> {
        let precheck = self.ctx.executor.execute(sql, db);
        if matches!(
            precheck.status,
            ExecStatus::SyntaxError | ExecStatus::RuntimeError | ExecStatus::Timeout
        ) {
            return Ok(ReviewVerdict {
                label: false,
                rationale: precheck.describe_failure(),
                syntax_precheck: precheck.status,
            });
        }
        let template = if use_cot {
            &self.ctx.prompts.reviewer_cot
        } else {
            &self.ctx.prompts.reviewer_direct
        };
        let vars = base_vars(case, sketch, sql);
        let mut last = String::new();
        for _ in 0..2 {
            let text = self.ctx.chat(session, RoleTag::Reviewer, template, &vars)?;
            if let Some(label) = parse_verdict(&text) {
                return Ok(ReviewVerdict {
                    label,
                    rationale: text,
                    syntax_precheck: precheck.status,
                });
            }
            last = text;
        }
        // Unparsable twice: treat as incorrect so the repair loop runs.
        log::warn!("case {}: reviewer gave no verdict marker", session.case_id);
        Ok(ReviewVerdict {
            label: false,
            rationale: format!("malformed verdict: {last}"),
            syntax_precheck: precheck.status,
        })
    }
}

// ---------------------------------------------------------------------------
// Query crafter

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryVariantSet {
    pub original: String,
    pub variants: Vec<String>,
}

impl QueryVariantSet {
    /// The original question first, then the variants.
    pub fn all_questions(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.original.as_str()).chain(self.variants.iter().map(String::as_str))
    }
}

/// Numbered (`1.`, `2)`, `3:`) or bulleted lines, marker removed.
fn list_items(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        let item = if digits > 0 {
            l[digits..].strip_prefix(['.', ')', ':'])
        } else {
            l.strip_prefix("- ").or_else(|| l.strip_prefix("* "))
        };
        if let Some(item) = item {
            let item = item.trim().trim_matches('"').trim();
            if !item.is_empty() {
                out.push(item.to_string());
            }
        }
    }
    out
}

pub fn parse_variants(original: &str, text: &str, n_variants: usize) -> QueryVariantSet {
    let norm_original = sqltext::collapse_whitespace(original);
    let mut seen = HashSet::new();
    let mut variants = Vec::new();
    for item in list_items(text) {
        let norm = sqltext::collapse_whitespace(&item);
        if norm == norm_original || !seen.insert(norm.clone()) {
            continue;
        }
        variants.push(norm);
        if variants.len() == n_variants {
            break;
        }
    }
    QueryVariantSet {
        original: original.to_string(),
        variants,
    }
}

/// Why candidates were dropped while pooling.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub generated: usize,
    pub failed: usize,
    pub duplicate_text: usize,
    pub duplicate_result: usize,
}

pub struct QueryCrafter {
    pub ctx: AgentContext,
    pub sqltool: Arc<SqlTool>,
}

impl QueryCrafter {
    pub fn craft_variants(
        &self,
        case: &QuestionCase,
        n_variants: usize,
        session: &mut CaseSession,
    ) -> Result<QueryVariantSet, AgentError> {
        if n_variants == 0 {
            return Err(AgentError::ContractViolation("n_variants must be at least 1".into()));
        }
        let mut vars = HashMap::from([
            ("question", case.question.trim().to_string()),
            ("evidence", or_none(&case.evidence)),
        ]);
        vars.insert("n_variants", n_variants.to_string());
        let text = self
            .ctx
            .chat(session, RoleTag::Crafter, &self.ctx.prompts.crafter, &vars)?;
        Ok(parse_variants(&case.question, &text, n_variants))
    }

    /// Generates a beam for the original question and every variant, keeps
    /// statements that execute, and drops repeats by normalized text and then
    /// by result signature. First-seen order is kept.
    pub fn craft_candidates(
        &self,
        case: &QuestionCase,
        variant_set: &QueryVariantSet,
        sketch: &SchemaSketch,
        db: &DbHandle,
    ) -> (Vec<String>, PoolStats) {
        let mut stats = PoolStats::default();
        let mut beams = Vec::new();
        for question in variant_set.all_questions() {
            let request = GenerationRequest {
                case_id: Some(&case.case_id),
                question,
                sketch,
                evidence: &case.evidence,
            };
            match self.sqltool.generate(&request) {
                Ok(set) => beams.push(set.candidates),
                Err(e) => log::warn!("case {}: no beam for `{question}`: {e}", case.case_id),
            }
        }
        let (pool, s) = pool_candidates(beams.into_iter().flatten(), db, &self.ctx.executor);
        stats.generated = s.generated;
        stats.failed = s.failed;
        stats.duplicate_text = s.duplicate_text;
        stats.duplicate_result = s.duplicate_result;
        (pool, stats)
    }
}

/// Filter-then-dedup over a stream of statements.
pub fn pool_candidates(
    statements: impl IntoIterator<Item = String>,
    db: &DbHandle,
    executor: &Executor,
) -> (Vec<String>, PoolStats) {
    let mut stats = PoolStats::default();
    let mut texts = HashSet::new();
    let mut signatures = HashSet::new();
    let mut pool = Vec::new();
    for sql in statements {
        stats.generated += 1;
        let outcome = executor.execute(&sql, db);
        let Some(rows) = outcome.rows.as_ref().filter(|_| outcome.is_success()) else {
            stats.failed += 1;
            continue;
        };
        if !texts.insert(sqltext::normalize_sql(&sql)) {
            stats.duplicate_text += 1;
            continue;
        }
        if !signatures.insert(ResultSignature::of(rows)) {
            stats.duplicate_result += 1;
            continue;
        }
        pool.push(sql);
    }
    (pool, stats)
}

// ---------------------------------------------------------------------------
// Refiner: error record, retrieval, failure memory, decisions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairExample {
    pub question: String,
    pub faulty_sql: String,
    pub gold_sql: String,
    pub db_id: String,
}

/// The generator's error record: past (question, faulty SQL, gold SQL) triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepairStore {
    pub examples: Vec<RepairExample>,
}

impl RepairStore {
    pub fn load_jsonl(path: &Path) -> Result<Self, AgentError> {
        let io = |source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut examples = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line).map_err(|e| {
                io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: {e}", n + 1),
                ))
            })?;
            examples.push(ex);
        }
        Ok(Self { examples })
    }

    /// Rewrites the whole file, one record per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), AgentError> {
        let io = |source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for ex in &self.examples {
            let line = serde_json::to_string(ex).expect("repair example serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecordStats {
    pub scanned: usize,
    pub recorded: usize,
    pub gold_failures: usize,
    pub skipped: usize,
}

/// Runs the generator over training cases and keeps every case whose chosen
/// prediction fails to execute or disagrees with gold.
pub fn build_error_record(
    training: &Corpus,
    sqltool: &SqlTool,
    executor: &Executor,
    filter: &SchemaFilter,
    limit: usize,
) -> Result<(RepairStore, ErrorRecordStats), AgentError> {
    let mut store = RepairStore::default();
    let mut stats = ErrorRecordStats::default();
    for case in training.cases.iter().take(limit) {
        stats.scanned += 1;
        let Some(gold) = case.gold_sql.as_deref() else {
            stats.skipped += 1;
            continue;
        };
        let db = training.db_handle(&case.db_id)?;
        let sketch = filter.filter(case, training.schema(&case.db_id)?);
        let request = GenerationRequest {
            case_id: Some(&case.case_id),
            question: &case.question,
            sketch: &sketch,
            evidence: &case.evidence,
        };
        let set = match sqltool.generate(&request) {
            Ok(set) => set,
            Err(SqlToolError::EmptyBeam(m)) => {
                log::warn!("training case {}: {m}", case.case_id);
                stats.skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (pred, _) = first_executable(&set, &db, executor);
        let gold_out = executor.execute(gold, &db);
        let Some(gold_rows) = gold_out.rows.as_ref() else {
            stats.gold_failures += 1;
            continue;
        };
        let pred_out = executor.execute(&pred, &db);
        let agrees = pred_out
            .rows
            .as_ref()
            .is_some_and(|rows| rows_equal(rows, gold_rows, sqltext::has_top_level_order_by(gold)));
        if agrees || sqltext::normalize_sql(&pred) == sqltext::normalize_sql(gold) {
            continue;
        }
        store.examples.push(RepairExample {
            question: case.question.clone(),
            faulty_sql: pred,
            gold_sql: gold.to_string(),
            db_id: case.db_id.clone(),
        });
        stats.recorded += 1;
    }
    Ok((store, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRepair {
    pub score: f64,
    pub example: RepairExample,
}

/// Top-`k` store entries by question token Jaccard, ties broken by insertion
/// order. Entries sharing no token with the question are never returned.
pub fn retrieve_similar_repair(case: &QuestionCase, store: &RepairStore, k: usize) -> Vec<RetrievedRepair> {
    let query = sqltext::token_set(&case.question);
    let mut scored: Vec<(usize, f64)> = store
        .examples
        .iter()
        .enumerate()
        .map(|(i, ex)| (i, sqltext::jaccard(&query, &sqltext::token_set(&ex.question))))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(i, score)| RetrievedRepair {
            score,
            example: store.examples[i].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub attempt_index: usize,
    pub sql: String,
    pub error_feedback: String,
}

/// Failed attempts of one case, fed back into later refiner prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMemory {
    pub capacity: usize,
    pub entries: Vec<MemoryEntry>,
}

impl FailureMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn refresh(&mut self, sql: &str, err: &str) -> Result<(), AgentError> {
        if self.entries.len() >= self.capacity {
            return Err(AgentError::ContractViolation(format!(
                "failure memory already holds {} of {} entries",
                self.entries.len(),
                self.capacity
            )));
        }
        self.entries.push(MemoryEntry {
            attempt_index: self.entries.len() + 1,
            sql: sql.to_string(),
            error_feedback: err.to_string(),
        });
        Ok(())
    }

    pub fn contains_sql(&self, sql: &str) -> bool {
        let norm = sqltext::normalize_sql(sql);
        self.entries.iter().any(|e| sqltext::normalize_sql(&e.sql) == norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionOrigin {
    CandidateSelected,
    SelfRepaired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerDecision {
    pub chosen_sql: String,
    pub explanation: String,
    pub origin: DecisionOrigin,
}

pub fn render_examples(examples: &[RetrievedRepair]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = format!(
        "{}\nCorrections made earlier on similar questions:\n",
        prompts::EXAMPLES_HEADER
    );
    for r in examples {
        out.push_str(&format!(
            "Question: {}\nFaulty SQL: {}\nCorrect SQL: {}\n",
            r.example.question.trim(),
            sqltext::collapse_whitespace(&r.example.faulty_sql),
            sqltext::collapse_whitespace(&r.example.gold_sql)
        ));
    }
    out
}

pub fn render_candidates(candidates: &[String]) -> String {
    if candidates.is_empty() {
        return String::new();
    }
    let mut out = format!(
        "{}\nThese candidate queries all execute on the database:\n",
        prompts::CANDIDATES_HEADER
    );
    for (i, c) in candidates.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, sqltext::collapse_whitespace(c)));
    }
    out.push_str("If one candidate answers the question, you may select it instead of writing a query: end your answer with the line CHOICE: <number>.\n");
    out
}

pub fn render_memory(memory: &FailureMemory) -> String {
    if memory.is_empty() {
        return String::new();
    }
    let mut out = format!(
        "{}\nEarlier repair attempts failed the execution check. Do not repeat them:\n",
        prompts::MEMORY_HEADER
    );
    for e in &memory.entries {
        out.push_str(&format!(
            "Attempt {}: {}\nFeedback: {}\n",
            e.attempt_index,
            sqltext::collapse_whitespace(&e.sql),
            e.error_feedback
        ));
    }
    out
}

/// Reads a refiner answer: `CHOICE: <i>` (1-based, only when candidates were
/// shown) or a fenced SQL block, whichever comes last.
pub fn parse_decision(text: &str, candidates_shown: &[String]) -> Option<RefinerDecision> {
    let mut choice: Option<(usize, usize)> = None; // (byte offset, index)
    if !candidates_shown.is_empty() {
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let upper = line.to_uppercase();
            if let Some(at) = upper.find("CHOICE:") {
                let digits: String = upper[at + 7..]
                    .trim_start()
                    .trim_start_matches(['*', '`', '#'])
                    .chars()
                    .take_while(|c| c.is_ascii_digit())
                    .collect();
                if let Ok(i) = digits.parse::<usize>() {
                    if (1..=candidates_shown.len()).contains(&i) {
                        choice = Some((offset, i));
                    }
                }
            }
            offset += line.len();
        }
    }
    let fence = last_fenced_block(text);
    let take_choice = match (choice, &fence) {
        (Some((c_at, _)), Some((f_at, _))) => c_at > *f_at,
        (Some(_), None) => true,
        _ => false,
    };
    if take_choice {
        let (at, i) = choice.expect("checked");
        return Some(RefinerDecision {
            chosen_sql: candidates_shown[i - 1].clone(),
            explanation: text[..at].trim().to_string(),
            origin: DecisionOrigin::CandidateSelected,
        });
    }
    let (at, sql) = fence?;
    Some(RefinerDecision {
        chosen_sql: sql,
        explanation: text[..at].trim().to_string(),
        origin: DecisionOrigin::SelfRepaired,
    })
}

/// Start offset and body of the last non-empty ``` block.
fn last_fenced_block(text: &str) -> Option<(usize, String)> {
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find("```") {
        let open = search + rel;
        let after_ticks = open + 3;
        let body_start = text[after_ticks..]
            .find('\n')
            .map(|n| after_ticks + n + 1)
            .unwrap_or(text.len());
        let Some(close_rel) = text[body_start..].find("```") else {
            break;
        };
        let body = text[body_start..body_start + close_rel].trim();
        if !body.is_empty() {
            found = Some((open, body.to_string()));
        }
        search = body_start + close_rel + 3;
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub decision: RefinerDecision,
    pub candidates_shown: usize,
}

pub struct SqlRefiner {
    pub ctx: AgentContext,
}

/// Everything one refiner call looks at.
#[derive(Debug, Clone, Copy)]
pub struct RefineInput<'a> {
    pub case: &'a QuestionCase,
    pub sketch: &'a SchemaSketch,
    pub faulty_sql: &'a str,
    pub candidates: &'a [String],
    pub examples: &'a [RetrievedRepair],
    pub memory: &'a FailureMemory,
    pub use_reflexion: bool,
    pub use_mcs: bool,
}

impl SqlRefiner {
    pub fn refine(&self, input: RefineInput<'_>, session: &mut CaseSession) -> Result<RefineOutcome, AgentError> {
        if input.faulty_sql.trim().is_empty() {
            return Err(AgentError::ContractViolation(
                "refine needs a non-empty faulty SQL".into(),
            ));
        }
        let shown: &[String] = if input.use_mcs { input.candidates } else { &[] };
        let mut vars = base_vars(input.case, input.sketch, input.faulty_sql);
        vars.insert("examples", render_examples(input.examples));
        vars.insert("candidates", render_candidates(shown));
        vars.insert(
            "memory",
            if input.use_reflexion {
                render_memory(input.memory)
            } else {
                String::new()
            },
        );
        let mut last = String::new();
        for _ in 0..2 {
            let text = self
                .ctx
                .chat(session, RoleTag::Refiner, &self.ctx.prompts.refiner, &vars)?;
            if let Some(decision) = parse_decision(&text, shown).filter(|d| !d.chosen_sql.trim().is_empty()) {
                return Ok(RefineOutcome {
                    decision,
                    candidates_shown: shown.len(),
                });
            }
            last = text;
        }
        log::warn!(
            "case {}: refiner answer unparsable, keeping faulty SQL",
            session.case_id
        );
        Ok(RefineOutcome {
            decision: RefinerDecision {
                chosen_sql: input.faulty_sql.to_string(),
                explanation: format!("malformed decision: {last}"),
                origin: DecisionOrigin::SelfRepaired,
            },
            candidates_shown: shown.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_markers() {
        assert_eq!(parse_verdict("walkthrough...\nVERDICT: CORRECT"), Some(true));
        assert_eq!(parse_verdict("VERDICT: INCORRECT\n"), Some(false));
        assert_eq!(parse_verdict("verdict: **incorrect**"), Some(false));
        assert_eq!(parse_verdict("VERDICT: CORRECT\nlater VERDICT: INCORRECT"), Some(false));
        assert_eq!(parse_verdict("looks fine to me"), None);
        assert_eq!(parse_verdict("VERDICT: maybe"), None);
    }

    #[test]
    fn three_numbered_variants() {
        let v = parse_variants(
            "How many singers?",
            "1. Count the singers.\n2) What is the singer count?\n3: Number of singers?",
            3,
        );
        assert_eq!(v.variants.len(), 3);
        assert_eq!(v.variants[1], "What is the singer count?");
    }

    #[test]
    fn verbatim_original_dropped() {
        let v = parse_variants(
            "How many  singers?",
            "1. How many singers?\n2. Count singers.\n3. Count singers.",
            3,
        );
        assert_eq!(v.variants, vec!["Count singers."]);
    }

    #[test]
    fn truncated_to_n() {
        let text = (1..=5)
            .map(|i| format!("{i}. variant {i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let v = parse_variants("q", &text, 3);
        assert_eq!(v.variants, vec!["variant 1", "variant 2", "variant 3"]);
    }

    #[test]
    fn unnumbered_prose_is_ignored() {
        let v = parse_variants("q", "Sure, here are variants:\n- first\n* second\n", 3);
        assert_eq!(v.variants, vec!["first", "second"]);
    }

    fn case(q: &str) -> QuestionCase {
        QuestionCase {
            case_id: "c".into(),
            question: q.into(),
            evidence: String::new(),
            db_id: "d".into(),
            gold_sql: None,
            difficulty: Default::default(),
        }
    }

    fn example(q: &str) -> RepairExample {
        RepairExample {
            question: q.into(),
            faulty_sql: "SELECT 1".into(),
            gold_sql: "SELECT 2".into(),
            db_id: "d".into(),
        }
    }

    #[test]
    fn retrieval_prefers_identical_question() {
        let store = RepairStore {
            examples: vec![example("list stadiums"), example("count singers in France")],
        };
        let got = retrieve_similar_repair(&case("count singers in France"), &store, 2);
        assert_eq!(got[0].example.question, "count singers in France");
        assert_eq!(got[0].score, 1.0);
    }

    #[test]
    fn retrieval_jaccard_by_hand() {
        let store = RepairStore {
            examples: vec![example("count singers in USA"), example("list stadium capacity")],
        };
        let got = retrieve_similar_repair(&case("count singers in France"), &store, 2);
        // {count, singers, in} shared out of 5 distinct tokens; the other shares none
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].example.question, "count singers in USA");
        assert!((got[0].score - 0.6).abs() < 1e-12);
    }

    #[test]
    fn retrieval_ties_keep_insertion_order() {
        let store = RepairStore {
            examples: vec![example("singers b"), example("singers a"), example("singers")],
        };
        let got = retrieve_similar_repair(&case("singers"), &store, 3);
        let qs: Vec<&str> = got.iter().map(|r| r.example.question.as_str()).collect();
        assert_eq!(qs, vec!["singers", "singers b", "singers a"]);
        assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn retrieval_from_empty_store() {
        assert!(retrieve_similar_repair(&case("x"), &RepairStore::default(), 1).is_empty());
    }

    #[test]
    fn memory_capacity() {
        let mut m = FailureMemory::new(3);
        m.refresh("SELECT 1", "empty result").unwrap();
        assert_eq!(m.entries[0].attempt_index, 1);
        m.refresh("SELECT 2", "no such column: x").unwrap();
        assert_eq!(
            m.entries.iter().map(|e| e.attempt_index).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(m.entries[0].sql, "SELECT 1");
        m.refresh("SELECT 3", "e").unwrap();
        assert!(matches!(
            m.refresh("SELECT 4", "e"),
            Err(AgentError::ContractViolation(_))
        ));
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn decision_choice_is_one_based() {
        let cands = vec!["SELECT 1".to_string(), "SELECT 2".to_string(), "SELECT 3".to_string()];
        let d = parse_decision("The second one filters correctly.\nCHOICE: 2", &cands).unwrap();
        assert_eq!(d.chosen_sql, "SELECT 2");
        assert_eq!(d.origin, DecisionOrigin::CandidateSelected);
        assert_eq!(d.explanation, "The second one filters correctly.");
    }

    #[test]
    fn decision_rewrite() {
        let d = parse_decision("Wrong column.\n```sql\nSELECT name FROM singer\n```", &[]).unwrap();
        assert_eq!(d.chosen_sql, "SELECT name FROM singer");
        assert_eq!(d.origin, DecisionOrigin::SelfRepaired);
    }

    #[test]
    fn choice_without_candidates_is_malformed() {
        assert!(parse_decision("CHOICE: 1", &[]).is_none());
        let cands = vec!["SELECT 1".to_string()];
        assert!(parse_decision("CHOICE: 4", &cands).is_none());
        assert!(parse_decision("no idea", &cands).is_none());
    }

    #[test]
    fn later_marker_wins() {
        let cands = vec!["SELECT 1".to_string()];
        let d = parse_decision("```sql\nSELECT 9\n```\nCHOICE: 1", &cands).unwrap();
        assert_eq!(d.chosen_sql, "SELECT 1");
        let d = parse_decision("CHOICE: 1\nActually:\n```\nSELECT 9\n```", &cands).unwrap();
        assert_eq!(d.chosen_sql, "SELECT 9");
    }

    #[test]
    fn blocks_render_only_when_nonempty() {
        assert!(render_candidates(&[]).is_empty());
        assert!(render_memory(&FailureMemory::new(3)).is_empty());
        assert!(render_examples(&[]).is_empty());
        let mut m = FailureMemory::new(3);
        m.refresh("SELECT 1", "empty result").unwrap();
        let text = render_memory(&m);
        assert!(text.starts_with(prompts::MEMORY_HEADER));
        assert!(text.contains("Attempt 1: SELECT 1\nFeedback: empty result"));
    }

    #[test]
    fn store_round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = RepairStore {
            examples: vec![example("a"), example("b \"quoted\"\nnewline")],
        };
        store.save_jsonl(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(RepairStore::load_jsonl(&path).unwrap(), store);
    }
}
