//! Per-question repair pipeline and corpus runner.
//!
//! One case runs strictly in sequence: filter the schema, take the first
//! executable beam statement as the baseline, review it, and only when the
//! reviewer rejects it enter the bounded craft / retrieve / refine / check
//! loop. Corpus runs fan cases out over a fixed-size worker pool and return
//! records in corpus order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    retrieve_similar_repair, AgentContext, AgentError, CaseSession, FailureMemory, QueryCrafter, QueryVariantSet,
    RefineInput, RefinerDecision, RepairStore, ReviewVerdict, SqlRefiner, SqlReviewer,
};
use crate::catalog::{Corpus, QuestionCase, SchemaFilter, SketchStyle};
use crate::executor::Executor;
use crate::gateway::{Gateway, RoleTag, RoleUsage, TokenUsage};
use crate::prompts::PromptSet;
use crate::sqltool::{first_executable, GenerationRequest, SqlGenerator, SqlTool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_try_times: usize,
    pub beam_size: usize,
    pub n_variants: usize,
    pub require_nonempty: bool,
    pub timeout_s: f64,
    pub use_cot: bool,
    pub use_reflexion: bool,
    pub use_mcs: bool,
    pub retrieval_k: usize,
    pub parallelism: usize,
    /// Re-craft variants and candidates on every attempt instead of once per case.
    pub recraft_each_attempt: bool,
    pub schema_top_k: usize,
    pub schema_keep_all: usize,
    pub sketch_style: SketchStyle,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_try_times: 3,
            beam_size: 4,
            n_variants: 3,
            require_nonempty: true,
            timeout_s: 30.0,
            use_cot: true,
            use_reflexion: true,
            use_mcs: true,
            retrieval_k: 1,
            parallelism: 1,
            recraft_each_attempt: false,
            schema_top_k: 6,
            schema_keep_all: 4,
            sketch_style: SketchStyle::Ddl,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_try_times < 1 {
            return Err("max_try_times must be at least 1".into());
        }
        if self.beam_size < 1 {
            return Err("beam_size must be at least 1".into());
        }
        if self.n_variants < 1 {
            return Err("n_variants must be at least 1".into());
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err("timeout_s must be a positive number of seconds".into());
        }
        Ok(())
    }

    pub fn filter(&self) -> SchemaFilter {
        SchemaFilter {
            top_k: self.schema_top_k,
            keep_all_threshold: self.schema_keep_all,
            style: self.sketch_style,
        }
    }

    pub fn executor(&self) -> Executor {
        Executor::new(Duration::from_secs_f64(self.timeout_s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub candidates_shown: usize,
    pub decision: RefinerDecision,
    pub pass: bool,
    pub err: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: String,
    pub db_id: String,
    pub baseline_sql: String,
    /// Beam rank of the baseline.
    pub baseline_rank: usize,
    /// Absent only when the case failed before review.
    pub verdict: Option<ReviewVerdict>,
    pub attempts: Vec<Attempt>,
    pub final_sql: String,
    pub repaired: bool,
    pub token_usage: RoleUsage,
    pub llm_calls: u32,
    pub wall_time: f64,
    /// Set when a component error cut the case short.
    pub failure: Option<String>,
}

impl RunRecord {
    fn new(case: &QuestionCase) -> Self {
        Self {
            case_id: case.case_id.clone(),
            db_id: case.db_id.clone(),
            baseline_sql: String::new(),
            baseline_rank: 0,
            verdict: None,
            attempts: Vec::new(),
            final_sql: String::new(),
            repaired: false,
            token_usage: RoleUsage::default(),
            llm_calls: 0,
            wall_time: 0.0,
            failure: None,
        }
    }

    /// The reviewer's label, if review happened.
    pub fn label(&self) -> Option<bool> {
        self.verdict.as_ref().map(|v| v.label)
    }
}

/// Everything a case run needs, shareable across workers.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub gateway: Arc<Gateway>,
    pub sqltool: Arc<SqlTool>,
    pub store: Arc<RepairStore>,
    reviewer: SqlReviewer,
    crafter: QueryCrafter,
    refiner: SqlRefiner,
    executor: Executor,
    filter: SchemaFilter,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        gateway: Arc<Gateway>,
        generator: Box<dyn SqlGenerator>,
        store: RepairStore,
        prompts: PromptSet,
    ) -> Result<Self, String> {
        config.validate()?;
        let executor = config.executor();
        let sqltool = Arc::new(SqlTool::new(generator, config.beam_size));
        let ctx = AgentContext {
            gateway: gateway.clone(),
            prompts: Arc::new(prompts),
            executor: executor.clone(),
        };
        Ok(Self {
            filter: config.filter(),
            reviewer: SqlReviewer { ctx: ctx.clone() },
            crafter: QueryCrafter {
                ctx: ctx.clone(),
                sqltool: sqltool.clone(),
            },
            refiner: SqlRefiner { ctx },
            config,
            gateway,
            sqltool,
            store: Arc::new(store),
            executor,
        })
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn run_case(&self, case: &QuestionCase, corpus: &Corpus) -> RunRecord {
        let started = Instant::now();
        let mut record = RunRecord::new(case);
        let mut session = CaseSession::new(&case.case_id);
        if let Err(e) = self.drive(case, corpus, &mut record, &mut session) {
            log::warn!("case {}: {e}", case.case_id);
            record.failure = Some(e.to_string());
            if record.final_sql.is_empty() {
                record.final_sql = record.baseline_sql.clone();
            }
        }
        record.token_usage = session.usage;
        record.llm_calls = session.llm_calls;
        record.wall_time = started.elapsed().as_secs_f64();
        record
    }

    fn drive(
        &self,
        case: &QuestionCase,
        corpus: &Corpus,
        record: &mut RunRecord,
        session: &mut CaseSession,
    ) -> Result<(), AgentError> {
        let cfg = &self.config;
        let schema = corpus.schema(&case.db_id)?;
        let db = corpus.db_handle(&case.db_id)?;
        let sketch = self.filter.filter(case, schema);

        let beam = self.sqltool.generate(&GenerationRequest {
            case_id: Some(&case.case_id),
            question: &case.question,
            sketch: &sketch,
            evidence: &case.evidence,
        })?;
        let (baseline, rank) = first_executable(&beam, &db, &self.executor);
        record.baseline_sql = baseline.clone();
        record.baseline_rank = rank;
        record.final_sql = baseline.clone();

        let verdict = self
            .reviewer
            .review(&baseline, case, &sketch, &db, cfg.use_cot, session)?;
        let correct = verdict.label;
        record.verdict = Some(verdict);
        if correct {
            return Ok(());
        }

        let examples = retrieve_similar_repair(case, &self.store, cfg.retrieval_k);
        let mut memory = FailureMemory::new(cfg.max_try_times);
        let mut variants: Option<QueryVariantSet> = None;
        let mut pool: Vec<String> = Vec::new();

        for attempt in 1..=cfg.max_try_times {
            debug_assert_eq!(memory.len(), attempt - 1);
            let candidates = if cfg.use_mcs {
                if variants.is_none() || cfg.recraft_each_attempt {
                    let v = self.crafter.craft_variants(case, cfg.n_variants, session)?;
                    pool = self.crafter.craft_candidates(case, &v, &sketch, &db).0;
                    variants = Some(v);
                }
                pool.retain(|sql| !memory.contains_sql(sql));
                if pool.is_empty() && attempt > 1 {
                    let v = variants.as_ref().expect("crafted on the first attempt");
                    pool = self.crafter.craft_candidates(case, v, &sketch, &db).0;
                    pool.retain(|sql| !memory.contains_sql(sql));
                }
                pool.clone()
            } else {
                Vec::new()
            };

            let outcome = self.refiner.refine(
                RefineInput {
                    case,
                    sketch: &sketch,
                    faulty_sql: &baseline,
                    candidates: &candidates,
                    examples: &examples,
                    memory: &memory,
                    use_reflexion: cfg.use_reflexion,
                    use_mcs: cfg.use_mcs,
                },
                session,
            )?;
            let sql = outcome.decision.chosen_sql.clone();
            let (pass, err) = self.executor.execute_and_analyze(&sql, &db, cfg.require_nonempty);
            record.attempts.push(Attempt {
                candidates_shown: outcome.candidates_shown,
                decision: outcome.decision,
                pass,
                err: err.clone(),
            });
            record.final_sql = sql.clone();
            if pass {
                record.repaired = true;
                break;
            }
            memory.refresh(&sql, &err)?;
        }
        Ok(())
    }

    pub fn run_corpus(&self, corpus: &Corpus) -> (Vec<RunRecord>, RunSummary) {
        let started = Instant::now();
        let records: Vec<RunRecord> = match rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| corpus.cases.par_iter().map(|c| self.run_case(c, corpus)).collect()),
            Err(e) => {
                log::warn!("worker pool unavailable ({e}), running sequentially");
                corpus.cases.iter().map(|c| self.run_case(c, corpus)).collect()
            }
        };
        let summary = RunSummary::of(&records, started.elapsed().as_secs_f64());
        (records, summary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cases: usize,
    pub judged_correct: usize,
    /// Cases that entered the repair loop.
    pub repair_sessions: usize,
    pub repaired: usize,
    pub attempts: usize,
    pub failed: usize,
    pub tokens: RoleUsage,
    pub total_tokens: TokenUsage,
    pub avg_tokens_per_question: f64,
    pub wall_time: f64,
}

impl RunSummary {
    pub fn of(records: &[RunRecord], wall_time: f64) -> Self {
        let mut tokens = RoleUsage::default();
        for r in records {
            tokens.merge(&r.token_usage);
        }
        let total_tokens = tokens.total();
        Self {
            cases: records.len(),
            judged_correct: records.iter().filter(|r| r.label() == Some(true)).count(),
            repair_sessions: records.iter().filter(|r| r.label() == Some(false)).count(),
            repaired: records.iter().filter(|r| r.repaired).count(),
            attempts: records.iter().map(|r| r.attempts.len()).sum(),
            failed: records.iter().filter(|r| r.failure.is_some()).count(),
            avg_tokens_per_question: if records.is_empty() {
                0.0
            } else {
                total_tokens.total() as f64 / records.len() as f64
            },
            tokens,
            total_tokens,
            wall_time,
        }
    }

    /// Agent tokens for one role.
    pub fn role(&self, role: RoleTag) -> TokenUsage {
        self.tokens.get(role)
    }
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_records(path: &Path) -> std::io::Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?);
    }
    Ok(out)
}
