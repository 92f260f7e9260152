//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Runs offline; the live smoke part of
//! criterion 10 runs only when `SQLFIX_SMOKE_CONFIG` names a config file
//! with live endpoints.

mod common;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use sqlfix_core::agents::{build_error_record, AgentContext, QueryCrafter, QueryVariantSet};
use sqlfix_core::catalog::{Difficulty, QuestionCase};
use sqlfix_core::executor::{DbHandle, Executor, ResultSignature};
use sqlfix_core::gateway::{Gateway, RoleTag, TokenUsage};
use sqlfix_core::metrics::{
    detection_scores, exact_match, execution_accuracy, repair_success_rate, score_report, FixedTimer, Side, WallTimer,
};
use sqlfix_core::pipeline::{Pipeline, RunRecord};
use sqlfix_core::prompts::{PromptSet, CANDIDATES_HEADER, MEMORY_HEADER, REVIEW_STEPS_MARKER};
use sqlfix_core::sqltext::normalize_sql;
use sqlfix_core::sqltool::{BeamRule, ScriptedSqlTool, SqlTool};
use sqlfix_core::testing::{self, Fixture};
use sqlfix_core::PipelineConfig;

use common::*;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn pipeline(f: &Fixture, config: PipelineConfig) -> Pipeline {
    let tool = SqlTool::new(Box::new(f.sqltool()), config.beam_size);
    let store = build_error_record(&f.training(), &tool, &config.executor(), &config.filter(), usize::MAX)
        .map(|(s, _)| s)
        .unwrap_or_default();
    let gateway = Arc::new(Gateway::new(Box::new(f.llm_backend())).capturing());
    Pipeline::new(config, gateway, Box::new(f.sqltool()), store, PromptSet::default()).unwrap()
}

fn c1_control_flow() -> Check {
    let f = Fixture::create();
    let p = pipeline(&f, PipelineConfig::default());
    let (records, summary) = p.run_corpus(&f.corpus());
    ensure!(records.len() == 10, "{} records", records.len());
    let bypassed: Vec<&RunRecord> = records.iter().filter(|r| r.label() == Some(true)).collect();
    ensure!(bypassed.len() == 7, "{} cases passed review", bypassed.len());
    for r in &bypassed {
        ensure!(
            !testing::FAULTY.contains(&r.case_id.as_str()),
            "faulty {} passed review",
            r.case_id
        );
        ensure!(
            r.token_usage.get(RoleTag::Crafter).total() == 0 && r.token_usage.get(RoleTag::Refiner).total() == 0,
            "{} spent repair tokens",
            r.case_id
        );
        ensure!(
            r.final_sql == r.baseline_sql && r.attempts.is_empty(),
            "{} was altered",
            r.case_id
        );
    }
    ensure!(records.iter().all(|r| r.attempts.len() <= 3), "attempt bound exceeded");
    let attempts: Vec<(String, usize, bool)> = records
        .iter()
        .filter(|r| r.label() == Some(false))
        .map(|r| (r.case_id.clone(), r.attempts.len(), r.repaired))
        .collect();
    let want = [("c08", 1, true), ("c09", 1, true), ("c10", 3, false)].map(|(c, n, ok)| (c.to_string(), n, ok));
    ensure!(attempts == want, "repair trace {attempts:?}");
    let c10 = records.iter().find(|r| r.case_id == "c10").unwrap();
    ensure!(c10.final_sql == testing::C10_REWRITE, "c10 final {}", c10.final_sql);

    let sizes: Vec<usize> = p
        .gateway
        .transcript()
        .iter()
        .filter(|r| r.role_tag == RoleTag::Refiner && r.attribution.as_deref() == Some("c10"))
        .map(|r| {
            let text = r.last_user_message();
            match text.find(MEMORY_HEADER) {
                Some(at) => text[at..].matches("\nAttempt ").count(),
                None => 0,
            }
        })
        .collect();
    ensure!(sizes == [0, 1, 2], "memory sizes {sizes:?}");
    ensure!(
        (summary.repair_sessions, summary.repaired) == (3, 2),
        "summary {} repair sessions, {} repaired",
        summary.repair_sessions,
        summary.repaired
    );
    Ok(())
}

/// (prediction, gold) pairs. The expected flags come from a separate
/// brute-force multiset/sequence comparison over the same database.
const EX_PAIRS: [(&str, &str); 12] = [
    ("SELECT name FROM singer", "SELECT name FROM singer ORDER BY name"),
    (
        "SELECT name FROM singer WHERE singer_id IN (1, 2)",
        "SELECT name FROM singer WHERE singer_id IN (1, 2) ORDER BY singer_id",
    ),
    (
        "SELECT country, count(*) FROM singer GROUP BY country ORDER BY count(*) DESC",
        "SELECT country, count(*) FROM singer GROUP BY country",
    ),
    (
        "SELECT name FROM singer WHERE age > 100",
        "SELECT name FROM singer WHERE age > 200",
    ),
    (
        "SELECT name FROM singer WHERE age > 50",
        "SELECT name FROM singer WHERE age > 200",
    ),
    ("SELECT avg(age) FROM singer", "SELECT 39.4000004"),
    ("SELECT avg(age) FROM singer", "SELECT 39.40001"),
    ("SELECT count(*) FROM singer", "SELECT 5.0"),
    ("SELECT country FROM singer", "SELECT DISTINCT country FROM singer"),
    ("SELECT name, age FROM singer", "SELECT age, name FROM singer"),
    ("SELECT nme FROM singer", "SELECT name FROM singer"),
    (
        "SELECT name FROM singer",
        "SELECT name FROM (SELECT name FROM singer ORDER BY name)",
    ),
];
const EX_ORACLE: [bool; 12] = [
    false, true, true, true, false, true, false, true, false, false, false, true,
];

fn case(id: &str, gold: &str) -> QuestionCase {
    QuestionCase {
        case_id: id.into(),
        question: format!("question {id}"),
        evidence: String::new(),
        db_id: testing::DB_ID.into(),
        gold_sql: Some(gold.into()),
        difficulty: Difficulty::Simple,
    }
}

fn c2_ex_oracle() -> Check {
    let f = Fixture::create();
    let corpus = f.corpus();
    let cases: Vec<QuestionCase> = EX_PAIRS
        .iter()
        .enumerate()
        .map(|(i, (_, g))| case(&format!("e{i}"), g))
        .collect();
    let pairs: Vec<(&QuestionCase, &str)> = cases.iter().zip(EX_PAIRS.iter()).map(|(c, (p, _))| (c, *p)).collect();
    let report = execution_accuracy(&pairs, &corpus, &Executor::default()).map_err(|e| e.to_string())?;
    let flags: Vec<Option<bool>> = report.flags.clone();
    let want: Vec<Option<bool>> = EX_ORACLE.iter().map(|b| Some(*b)).collect();
    ensure!(flags == want, "flags {flags:?}");
    Ok(())
}

/// Labels fixed by construction.
const EM_PAIRS: [(&str, &str, bool); 20] = [
    (
        "SELECT name FROM singer WHERE age > 30 AND country = 'France'",
        "SELECT name FROM singer WHERE country = 'France' AND age > 30",
        true,
    ),
    (
        "SELECT name FROM singer WHERE age > 30 AND age < 50 AND country = 'France'",
        "SELECT name FROM singer WHERE country = 'France' AND age < 50 AND age > 30",
        true,
    ),
    (
        "SELECT T1.name FROM singer AS T1 WHERE T1.age > 30",
        "SELECT s.name FROM singer AS s WHERE s.age > 30",
        true,
    ),
    (
        "SELECT T1.name FROM singer AS T1 WHERE T1.age > 30",
        "SELECT singer.name FROM singer WHERE singer.age > 30",
        true,
    ),
    (
        "SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id",
        "SELECT b.name FROM concert AS a JOIN stadium AS b ON b.stadium_id = a.stadium_id",
        true,
    ),
    ("select NAME from SINGER", "SELECT name FROM singer", true),
    (
        "SELECT country FROM singer GROUP BY country HAVING count(*) > 1 AND avg(age) > 30",
        "SELECT country FROM singer GROUP BY country HAVING avg(age) > 30 AND count(*) > 1",
        true,
    ),
    ("SELECT name AS n FROM singer", "SELECT name FROM singer", true),
    (
        "SELECT name FROM singer WHERE age > 30 AND age < 50 UNION SELECT name FROM singer WHERE country = 'France'",
        "SELECT name FROM singer WHERE age < 50 AND age > 30 UNION SELECT name FROM singer WHERE country = 'France'",
        true,
    ),
    (
        "SELECT name FROM singer WHERE (age > 30) AND ((country = 'France'))",
        "SELECT name FROM singer WHERE country = 'France' AND age > 30",
        true,
    ),
    (
        "SELECT name FROM singer LIMIT 1",
        "SELECT name FROM singer LIMIT 2",
        false,
    ),
    (
        "SELECT name FROM singer ORDER BY age LIMIT 1",
        "SELECT name FROM singer ORDER BY age",
        false,
    ),
    (
        "SELECT name FROM singer ORDER BY age DESC",
        "SELECT name FROM singer ORDER BY age",
        false,
    ),
    (
        "SELECT name FROM singer ORDER BY name",
        "SELECT name FROM singer ORDER BY age",
        false,
    ),
    (
        "SELECT name FROM singer UNION SELECT name FROM stadium",
        "SELECT name FROM singer INTERSECT SELECT name FROM stadium",
        false,
    ),
    (
        "SELECT name FROM singer UNION SELECT name FROM stadium",
        "SELECT name FROM singer UNION ALL SELECT name FROM stadium",
        false,
    ),
    (
        "SELECT name FROM singer EXCEPT SELECT name FROM stadium",
        "SELECT name FROM singer UNION SELECT name FROM stadium",
        false,
    ),
    (
        "SELECT name FROM singer WHERE age > 30",
        "SELECT name FROM singer WHERE age > 31",
        false,
    ),
    (
        "SELECT DISTINCT country FROM singer",
        "SELECT country FROM singer",
        false,
    ),
    (
        "WITH t AS (SELECT name FROM singer) SELECT name FROM t",
        "SELECT name FROM singer",
        false,
    ),
];

fn c3_em_labels() -> Check {
    let mut warnings = 0;
    for (i, (p, g, want)) in EM_PAIRS.iter().enumerate() {
        let got = match exact_match(p, g) {
            Ok(m) => m,
            Err(e) => {
                println!("    warning: pair {} not scored: {e}", i + 1);
                warnings += 1;
                false
            }
        };
        ensure!(got == *want, "pair {}: got {got}, labelled {want}", i + 1);
    }
    ensure!(warnings == 1, "{warnings} unsupported pairs, expected 1");
    Ok(())
}

fn c4_ves() -> Check {
    let f = Fixture::create();
    let golds = [
        "SELECT name FROM singer",
        "SELECT count(*) FROM singer",
        "SELECT avg(capacity) FROM stadium",
        "SELECT country, count(*) FROM singer GROUP BY country",
    ];
    let mut corpus = f.corpus();
    corpus.cases = golds
        .iter()
        .enumerate()
        .map(|(i, g)| case(&format!("v{i}"), g))
        .collect();
    let mut records: Vec<RunRecord> = golds
        .iter()
        .enumerate()
        .map(|(i, g)| record(&format!("v{i}"), g))
        .collect();
    // one wrong prediction so EX is not trivially 100
    records[3].final_sql = "SELECT country FROM singer".into();
    let exec = Executor::default();

    let flat = score_report(&records, &corpus, &exec, &FixedTimer::default()).map_err(|e| e.to_string())?;
    ensure!(
        flat.ves_percent == flat.ex_percent,
        "VES {} vs EX {}",
        flat.ves_percent,
        flat.ex_percent
    );
    ensure!(flat.ex_percent == 75.0, "EX {}", flat.ex_percent);

    let timer = FixedTimer::default().with("v1", Side::Gold, 0.04);
    let r = score_report(&records, &corpus, &exec, &timer).map_err(|e| e.to_string())?;
    let term = r
        .per_case
        .iter()
        .find(|c| c.case_id == "v1")
        .map(|c| c.ves)
        .unwrap_or_default();
    ensure!(term == 2.0, "ratio 4 contributes {term}");
    let want = 100.0 * (1.0 + 2.0 + 1.0 + 0.0) / 4.0;
    ensure!((r.ves_percent - want).abs() < 1e-9, "VES {} vs {want}", r.ves_percent);

    for r in &mut records {
        r.final_sql = corpus.case(&r.case_id).unwrap().gold_sql.clone().unwrap();
    }
    let wall = score_report(&records, &corpus, &exec, &WallTimer { runs: 7 }).map_err(|e| e.to_string())?;
    ensure!(
        (wall.ves_percent - wall.ex_percent).abs() <= 5.0,
        "wall-timed VES {} vs EX {}",
        wall.ves_percent,
        wall.ex_percent
    );
    Ok(())
}

fn record(case_id: &str, sql: &str) -> RunRecord {
    serde_json::from_value(serde_json::json!({
        "case_id": case_id,
        "db_id": testing::DB_ID,
        "baseline_sql": sql,
        "baseline_rank": 0,
        "verdict": null,
        "attempts": [],
        "final_sql": sql,
        "repaired": false,
        "token_usage": {},
        "llm_calls": 0,
        "wall_time": 0.0,
        "failure": null
    }))
    .expect("record literal")
}

fn c5_detection_repair() -> Check {
    // (label_correct, baseline_ex): TP = flagged and wrong, FP = flagged and right, FN = passed and wrong
    let items = [
        (false, false),
        (false, false),
        (false, true),
        (true, false),
        (true, true),
    ];
    let d = detection_scores(&items);
    ensure!(
        (d.tp, d.fp, d.fn_) == (2, 1, 1),
        "confusion {} {} {}",
        d.tp,
        d.fp,
        d.fn_
    );
    ensure!((d.f1 - 2.0 / 3.0).abs() <= 1e-9, "F1 {}", d.f1);
    ensure!(!d.degenerate, "flagged degenerate");

    let r = repair_success_rate(&[(false, false, true), (false, false, false), (true, false, true)]);
    ensure!(
        r.percent == 50.0 && r.fixed == 1 && r.detected_erroneous == 2,
        "repair {:?}",
        r
    );

    let d = detection_scores(&[(true, true)]);
    ensure!(
        d.precision == 0.0 && d.recall == 0.0 && d.f1 == 0.0 && d.degenerate,
        "degenerate detection {:?}",
        d
    );
    let r = repair_success_rate(&[(true, true, true)]);
    ensure!(r.percent == 0.0 && r.empty_denominator, "degenerate repair {:?}", r);
    Ok(())
}

fn c6_token_ledger() -> Check {
    let f = Fixture::create();
    let p = pipeline(&f, PipelineConfig::default());
    let corpus = f.corpus();
    let (records, summary) = p.run_corpus(&corpus);
    let entries = p.gateway.ledger_entries();
    let expected = |role: RoleTag| {
        let per_call = match role {
            RoleTag::Reviewer => testing::REVIEWER_USAGE,
            RoleTag::Crafter => testing::CRAFTER_USAGE,
            RoleTag::Refiner => testing::REFINER_USAGE,
            _ => (0, 0),
        };
        let calls = entries.iter().filter(|e| e.role == role).count() as u64;
        TokenUsage::new(calls * per_call.0, calls * per_call.1)
    };
    let report =
        score_report(&records, &corpus, &p.executor().clone(), &FixedTimer::default()).map_err(|e| e.to_string())?;
    let mut total = TokenUsage::default();
    for role in RoleTag::AGENTS {
        let want = expected(role);
        total.add(want);
        ensure!(
            summary.role(role) == want,
            "{} summary {:?} vs {:?}",
            role.as_str(),
            summary.role(role),
            want
        );
        ensure!(
            report.token_summary.per_role.get(role) == want,
            "{} report mismatch",
            role.as_str()
        );
    }
    ensure!(
        report.token_summary.total == total && summary.total_tokens == total,
        "overall totals differ"
    );
    let calls: Vec<usize> = [RoleTag::Reviewer, RoleTag::Crafter, RoleTag::Refiner]
        .iter()
        .map(|r| entries.iter().filter(|e| e.role == *r).count())
        .collect();
    ensure!(calls == [9, 3, 5], "calls per role {calls:?}");
    for r in records.iter().filter(|r| r.label() == Some(true)) {
        let spent = r.token_usage.get(RoleTag::Crafter).total() + r.token_usage.get(RoleTag::Refiner).total();
        ensure!(spent == 0, "{} spent {spent} repair tokens", r.case_id);
    }
    Ok(())
}

fn c7_ablation_prompts() -> Check {
    let w = Workspace::new();
    let check = |o: std::process::Output| -> Check {
        ensure!(o.status.success(), "run failed: {}", stderr(&o));
        Ok(())
    };
    check(w.sqlfix("build-error-record", &[]))?;
    let blocks = [
        ("--no-cot", REVIEW_STEPS_MARKER),
        ("--no-reflexion", MEMORY_HEADER),
        ("--no-mcs", CANDIDATES_HEADER),
    ];
    for (flag, marker) in blocks {
        check(w.sqlfix("run", &["--capture-prompts", flag]))?;
        let prompts = w.read("prompts.jsonl");
        ensure!(!prompts.contains(marker), "{flag}: `{marker}` still present");
        for (_, other) in blocks.iter().filter(|(f, _)| *f != flag) {
            ensure!(prompts.contains(other), "{flag}: unrelated `{other}` missing");
        }
    }
    check(w.sqlfix("run", &["--capture-prompts"]))?;
    let prompts = w.read("prompts.jsonl");
    for (_, marker) in blocks {
        ensure!(prompts.contains(marker), "all on: `{marker}` missing");
    }
    Ok(())
}

fn c8_candidate_pool() -> Check {
    let f = Fixture::create();
    let corpus = f.corpus();
    let db = DbHandle::new(testing::DB_ID, f.db_path());
    let exec = Executor::default();
    let schema = corpus.schema(testing::DB_ID).map_err(|e| e.to_string())?;
    let target = &corpus.cases[0];
    let sketch = PipelineConfig::default().filter().filter(target, schema);
    let columns = [
        "name",
        "country",
        "age",
        "singer_id",
        "nme",
        "count(*)",
        "max(age)",
        "NAME",
    ];
    let tables = ["singer", "singer", "Singer", "singers", "stadium"];
    let filters = [
        "",
        " WHERE age > 30",
        " WHERE country = 'France'",
        " WHERE age > 30 AND age < 100",
        " WHERE",
        " LIMIT 0",
    ];
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let variants = QueryVariantSet {
        original: target.question.clone(),
        variants: vec!["variant one".into(), "variant two".into()],
    };
    let mut violations = Vec::new();
    for trial in 0..200 {
        let rules: Vec<BeamRule> = variants
            .all_questions()
            .map(|q| {
                let n = rng.random_range(1..8);
                BeamRule {
                    case_id: None,
                    question_contains: Some(q.to_string()),
                    beam: (0..n)
                        .map(|_| {
                            let ws = [" ", "  ", "\n"].choose(&mut rng).unwrap();
                            format!(
                                "SELECT{ws}{} FROM {}{}",
                                columns.choose(&mut rng).unwrap(),
                                tables.choose(&mut rng).unwrap(),
                                filters.choose(&mut rng).unwrap()
                            )
                        })
                        .collect(),
                }
            })
            .collect();
        let crafter = QueryCrafter {
            ctx: AgentContext {
                gateway: Arc::new(Gateway::new(Box::new(f.llm_backend()))),
                prompts: Arc::new(PromptSet::default()),
                executor: exec.clone(),
            },
            sqltool: Arc::new(SqlTool::new(Box::new(ScriptedSqlTool::new(rules)), 16)),
        };
        let (pool, _) = crafter.craft_candidates(target, &variants, &sketch, &db);
        let mut texts = HashSet::new();
        let mut sigs = HashSet::new();
        for sql in &pool {
            let out = exec.execute(sql, &db);
            let Some(rows) = out.rows.as_ref().filter(|_| out.is_success()) else {
                violations.push(format!("trial {trial}: non-executable `{sql}`"));
                continue;
            };
            if !texts.insert(normalize_sql(sql)) {
                violations.push(format!("trial {trial}: duplicate text `{sql}`"));
            }
            if !sigs.insert(ResultSignature::of(rows)) {
                violations.push(format!("trial {trial}: duplicate result `{sql}`"));
            }
        }
    }
    ensure!(
        violations.is_empty(),
        "{} violations, first: {}",
        violations.len(),
        violations[0]
    );
    Ok(())
}

fn c9_parallel_determinism() -> Check {
    let f = Fixture::create();
    let run = |parallelism| {
        let p = pipeline(
            &f,
            PipelineConfig {
                parallelism,
                ..Default::default()
            },
        );
        without_wall_time(p.run_corpus(&f.corpus()).0)
    };
    let (seq, par) = (run(1), run(4));
    ensure!(seq == par, "records differ between parallelism 1 and 4");
    let json = |rs: &[RunRecord]| rs.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>();
    ensure!(json(&seq) == json(&par), "serialized records differ");
    Ok(())
}

fn c10_monotone_and_live() -> Check {
    let f = Fixture::create();
    let p = pipeline(&f, PipelineConfig::default());
    let corpus = f.corpus();
    let (records, _) = p.run_corpus(&corpus);
    let report = score_report(&records, &corpus, p.executor(), &FixedTimer::default()).map_err(|e| e.to_string())?;
    ensure!(
        report.ex_percent >= report.baseline_ex_percent,
        "post-repair EX {} below pre-repair {}",
        report.ex_percent,
        report.baseline_ex_percent
    );
    println!(
        "    offline: pre-repair EX {:.2} -> post-repair EX {:.2}",
        report.baseline_ex_percent, report.ex_percent
    );

    match std::env::var("SQLFIX_SMOKE_CONFIG") {
        Ok(cfg) if !cfg.is_empty() => {
            let out = std::env::temp_dir().join(format!("sqlfix-smoke-{}", std::process::id()));
            let o = sqlfix(&["smoke", "--config", &cfg, "--out", out.to_str().unwrap()]);
            ensure!(o.status.success(), "live smoke failed: {}", stderr(&o));
            println!("    live smoke: {}", stdout(&o).lines().last().unwrap_or(""));
        }
        _ => println!("    live smoke skipped (set SQLFIX_SMOKE_CONFIG to run it)"),
    }
    Ok(())
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "repair-loop conformance on the scripted fixture",
            budget: Duration::from_secs(5),
            run: c1_control_flow,
        },
        Criterion {
            id: 2,
            name: "EX equals the brute-force oracle on 12 pairs",
            budget: Duration::from_secs(5),
            run: c2_ex_oracle,
        },
        Criterion {
            id: 3,
            name: "EM equals constructed labels on 20 pairs",
            budget: Duration::from_secs(5),
            run: c3_em_labels,
        },
        Criterion {
            id: 4,
            name: "VES timer properties",
            budget: Duration::from_secs(30),
            run: c4_ves,
        },
        Criterion {
            id: 5,
            name: "detection and repair arithmetic",
            budget: Duration::from_secs(1),
            run: c5_detection_repair,
        },
        Criterion {
            id: 6,
            name: "token ledger exactness",
            budget: Duration::from_secs(1),
            run: c6_token_ledger,
        },
        Criterion {
            id: 7,
            name: "ablation flags remove their prompt blocks",
            budget: Duration::from_secs(5),
            run: c7_ablation_prompts,
        },
        Criterion {
            id: 8,
            name: "candidate pool properties over 200 random beams",
            budget: Duration::from_secs(5),
            run: c8_candidate_pool,
        },
        Criterion {
            id: 9,
            name: "determinism under parallelism",
            budget: Duration::from_secs(10),
            run: c9_parallel_determinism,
        },
        Criterion {
            id: 10,
            name: "monotone repair EX, optional live smoke",
            budget: Duration::from_secs(300),
            run: c10_monotone_and_live,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let outcome = (c.run)();
        let took = started.elapsed();
        let outcome = outcome.and_then(|()| {
            if took > c.budget {
                Err(format!("took {took:.2?}, budget {:?}", c.budget))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS {:>2} {} ({took:.2?})", c.id, c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {:>2} {}: {e}", c.id, c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
