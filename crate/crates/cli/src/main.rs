mod config;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use sqlfix_core::agents::{build_error_record, RepairStore};
use sqlfix_core::catalog::{load_dataset, LoadOptions};
use sqlfix_core::gateway::{ChatBackend, ChatRequest, Gateway, OpenAiBackend, RetryPolicy, RoleTag, ScriptedBackend};
use sqlfix_core::metrics::{render_table, score_report, FixedTimer, ScoreReport, Timer, WallTimer};
use sqlfix_core::pipeline::{read_records, write_records, Pipeline, RunSummary};
use sqlfix_core::prompts::PromptSet;
use sqlfix_core::sqltool::{GenerationRequest, RemoteSqlTool, ScriptedSqlTool, SqlGenerator, SqlTool};
use sqlfix_core::Corpus;

use config::{Cli, Command, Endpoint, Settings, TimerKind};

/// Process-level failures. Per-case problems during a run are data, not
/// failures; they land in the run records instead.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Backend(String),
    /// A smoke-test stage that did not complete.
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Backend(_) => 4,
            Failure::Stage { .. } => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Backend(m) => write!(f, "backend error: {m}"),
            Failure::Stage { stage, message } => write!(f, "smoke test failed at the {stage} stage: {message}"),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sqlfix: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: &Command) -> Result<(), Failure> {
    let settings = Settings::resolve(command.args())?;
    match command {
        Command::BuildErrorRecord(_) => cmd_build_error_record(&settings),
        Command::Run(_) => cmd_run(&settings),
        Command::Evaluate(_) => cmd_evaluate(&settings),
        Command::Report(_) => cmd_report(&settings),
        Command::Smoke(_) => cmd_smoke(&settings),
    }
}

fn load_corpus(s: &Settings, questions: &Path) -> Result<Corpus, Failure> {
    let tables = s.require(&s.data.tables, "tables")?;
    let db_root = s.require(&s.data.db_root, "db-root")?;
    load_dataset(questions, tables, db_root, &LoadOptions::default()).map_err(|e| match e {
        sqlfix_core::catalog::CatalogError::Io { .. } => Failure::Io(e.to_string()),
        other => Failure::Config(other.to_string()),
    })
}

fn limited(corpus: Corpus, limit: Option<usize>) -> Corpus {
    match limit {
        Some(n) => corpus.truncated(n),
        None => corpus,
    }
}

fn remote_gateway(endpoint: &Endpoint, what: &str) -> Result<Gateway, Failure> {
    let Some(url) = &endpoint.base_url else {
        return Err(Failure::Config(format!(
            "no {what} backend configured: pass --scripted-{what} or set {what}.base_url"
        )));
    };
    let key = std::env::var(&endpoint.api_key_env).ok().filter(|k| !k.is_empty());
    if key.is_none() {
        log::warn!("{} is not set; calling {url} without an API key", endpoint.api_key_env);
    }
    let backend = OpenAiBackend::new(url, &endpoint.model, key, Duration::from_secs_f64(endpoint.timeout_s));
    Ok(Gateway::new(Box::new(backend)).with_retry(RetryPolicy {
        max_attempts: endpoint.max_attempts,
        ..RetryPolicy::default()
    }))
}

fn llm_gateway(s: &Settings) -> Result<Gateway, Failure> {
    let gateway = match &s.llm.scripted {
        Some(path) => {
            let backend: Box<dyn ChatBackend> = Box::new(ScriptedBackend::from_file(path).map_err(io_err(path))?);
            Gateway::new(backend)
        }
        None => remote_gateway(&s.llm, "llm")?,
    };
    Ok(if s.capture_prompts {
        gateway.capturing()
    } else {
        gateway
    })
}

fn generator(s: &Settings) -> Result<Box<dyn SqlGenerator>, Failure> {
    match &s.sqltool.scripted {
        Some(path) => Ok(Box::new(ScriptedSqlTool::from_file(path).map_err(io_err(path))?)),
        None => {
            let gateway = remote_gateway(&s.sqltool, "sqltool")?;
            Ok(Box::new(RemoteSqlTool::new(Arc::new(gateway), s.pipeline.beam_size)))
        }
    }
}

fn prompts(s: &Settings) -> Result<PromptSet, Failure> {
    match &s.data.prompts {
        Some(dir) => PromptSet::load_dir(dir).map_err(Failure::Config),
        None => Ok(PromptSet::default()),
    }
}

fn ensure_out(s: &Settings) -> Result<(), Failure> {
    std::fs::create_dir_all(&s.out).map_err(io_err(&s.out))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn cmd_build_error_record(s: &Settings) -> Result<(), Failure> {
    let train = s.require(&s.data.train_questions, "train-questions")?;
    let training = load_corpus(s, train)?;
    let sqltool = SqlTool::new(generator(s)?, s.pipeline.beam_size);
    let limit = s.limit.unwrap_or(usize::MAX);
    let (store, stats) = build_error_record(&training, &sqltool, &s.pipeline.executor(), &s.pipeline.filter(), limit)
        .map_err(|e| Failure::Backend(e.to_string()))?;
    let path = s.store_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    store.save_jsonl(&path).map_err(|e| Failure::Io(e.to_string()))?;
    if stats.gold_failures > 0 || stats.skipped > 0 {
        log::warn!("{} gold failures, {} cases skipped", stats.gold_failures, stats.skipped);
    }
    println!("{} scanned / {} recorded", stats.scanned, stats.recorded);
    Ok(())
}

fn load_store(s: &Settings) -> Result<RepairStore, Failure> {
    let path = s.store_path();
    if !path.is_file() {
        log::warn!("no repair store at {}; refiner runs without examples", path.display());
        return Ok(RepairStore::default());
    }
    RepairStore::load_jsonl(&path).map_err(|e| Failure::Io(e.to_string()))
}

fn build_pipeline(s: &Settings) -> Result<Pipeline, Failure> {
    let gateway = Arc::new(llm_gateway(s)?);
    Pipeline::new(s.pipeline.clone(), gateway, generator(s)?, load_store(s)?, prompts(s)?).map_err(Failure::Config)
}

fn write_prompts(path: &Path, requests: &[ChatRequest]) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in requests {
        serde_json::to_writer(&mut w, r).map_err(|e| Failure::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Runs the pipeline and writes the run file, summary and captured prompts.
fn run_and_write(s: &Settings, pipeline: &Pipeline, corpus: &Corpus) -> Result<RunSummary, Failure> {
    ensure_out(s)?;
    let (records, summary) = pipeline.run_corpus(corpus);
    let run_path = s.run_path();
    write_records(&run_path, &records).map_err(io_err(&run_path))?;
    write_json(&s.out.join("summary.json"), &summary)?;
    if s.capture_prompts {
        write_prompts(&s.out.join("prompts.jsonl"), &pipeline.gateway.transcript())?;
    }
    Ok(summary)
}

fn print_summary(summary: &RunSummary) {
    println!(
        "{} cases, {} judged correct, {} repair sessions, {} repaired, {} attempts, {} failed",
        summary.cases,
        summary.judged_correct,
        summary.repair_sessions,
        summary.repaired,
        summary.attempts,
        summary.failed
    );
    let tokens = &summary.total_tokens;
    println!(
        "tokens: {} prompt + {} completion = {} ({:.1} per question)",
        tokens.prompt_tokens,
        tokens.completion_tokens,
        tokens.total(),
        summary.avg_tokens_per_question
    );
}

fn cmd_run(s: &Settings) -> Result<(), Failure> {
    let questions = s.require(&s.data.questions, "questions")?;
    let corpus = limited(load_corpus(s, questions)?, s.limit);
    let pipeline = build_pipeline(s)?;
    let summary = run_and_write(s, &pipeline, &corpus)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_evaluate(s: &Settings) -> Result<(), Failure> {
    let questions = s.require(&s.data.questions, "questions")?;
    let corpus = load_corpus(s, questions)?;
    let run_path = s.run_path();
    let records = read_records(&run_path).map_err(io_err(&run_path))?;
    let timer: Box<dyn Timer> = match s.timer {
        TimerKind::Fixed => Box::new(FixedTimer::default()),
        TimerKind::Wall => Box::new(WallTimer::default()),
    };
    let report = score_report(&records, &corpus, &s.pipeline.executor(), timer.as_ref())
        .map_err(|e| Failure::Config(e.to_string()))?;
    ensure_out(s)?;
    write_json(&s.report_path(), &report)?;
    let table = render_table(&report);
    let txt = s.report_path().with_extension("txt");
    std::fs::write(&txt, &table).map_err(io_err(&txt))?;
    print!("{table}");
    Ok(())
}

fn cmd_report(s: &Settings) -> Result<(), Failure> {
    let path = s.report_path();
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let report: ScoreReport =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    print!("{}", render_table(&report));
    Ok(())
}

const SMOKE_CASES: usize = 20;

fn cmd_smoke(s: &Settings) -> Result<(), Failure> {
    let stage = |stage: &'static str| {
        move |e: Failure| Failure::Stage {
            stage,
            message: e.to_string(),
        }
    };
    let questions = s.require(&s.data.questions, "questions")?;
    let corpus = limited(
        load_corpus(s, questions)?,
        Some(s.limit.unwrap_or(SMOKE_CASES).min(SMOKE_CASES)),
    );
    let first = corpus
        .cases
        .first()
        .ok_or_else(|| Failure::Config(format!("{} has no cases", questions.display())))?;

    let pipeline = build_pipeline(s)?;
    if s.llm.scripted.is_none() {
        let ping = ChatRequest::new(
            RoleTag::Reviewer,
            "You are a health check.",
            "Reply with the single word OK.",
        );
        pipeline
            .gateway
            .complete(&ping)
            .map_err(|e| Failure::Backend(e.to_string()))
            .map_err(stage("gateway"))?;
    }
    let schema = corpus
        .schema(&first.db_id)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let sketch = s.pipeline.filter().filter(first, schema);
    pipeline
        .sqltool
        .generate(&GenerationRequest {
            case_id: Some(&first.case_id),
            question: &first.question,
            sketch: &sketch,
            evidence: &first.evidence,
        })
        .map_err(|e| Failure::Backend(e.to_string()))
        .map_err(stage("sqltool"))?;

    let summary = run_and_write(s, &pipeline, &corpus)?;
    print_summary(&summary);
    if summary.failed > 0 {
        let records = read_records(&s.run_path()).map_err(io_err(&s.run_path()))?;
        let first_failure = records.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
        return Err(Failure::Stage {
            stage: "pipeline",
            message: format!(
                "{} of {} cases failed; first: {first_failure}",
                summary.failed, summary.cases
            ),
        });
    }
    println!("smoke ok: all stages completed");
    Ok(())
}
