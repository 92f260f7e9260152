//! Offline fixtures: a small `concert_singer` database, a ten-question
//! corpus with scripted generator and LLM behaviour, and a five-question
//! training split. Enabled for tests and through the `testing` feature.
//!
//! The scripted corpus has seven questions the generator gets right and the
//! reviewer accepts, and three faulty baselines:
//! - `c08` executes but filters on the wrong value; the refiner picks the
//!   right candidate on the first attempt.
//! - `c09` references a missing column, so the precheck rejects it without
//!   an LLM call; the refiner rewrites it on the first attempt.
//! - `c10` executes but misses a condition; every rewrite returns no rows, so
//!   all three attempts fail.

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::json;

use crate::catalog::{load_dataset, Corpus, LoadOptions};
use crate::gateway::{RoleTag, ScriptRule, ScriptedBackend};
use crate::sqltool::{BeamRule, ScriptedSqlTool};

pub const DB_ID: &str = "concert_singer";

/// Scripted token usage per call, by role.
pub const REVIEWER_USAGE: (u64, u64) = (100, 20);
pub const CRAFTER_USAGE: (u64, u64) = (60, 30);
pub const REFINER_USAGE: (u64, u64) = (150, 40);

const SCHEMA_SQL: &str = "
CREATE TABLE stadium (stadium_id INTEGER PRIMARY KEY, name TEXT, location TEXT, capacity INTEGER);
CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
CREATE TABLE concert (concert_id INTEGER PRIMARY KEY, concert_name TEXT, stadium_id INTEGER REFERENCES stadium (stadium_id), year INTEGER);
INSERT INTO stadium VALUES (1, 'Anfield', 'Liverpool', 54000), (2, 'Wembley', 'London', 90000), (3, 'Hampden', 'Glasgow', 51800);
INSERT INTO singer VALUES (1, 'Joe Sharp', 'Netherlands', 52), (2, 'Timbaland', 'United States', 32), (3, 'Justin Brown', 'France', 29), (4, 'Rose White', 'France', 41), (5, 'John Nizinik', 'France', 43);
INSERT INTO concert VALUES (1, 'Auditions', 1, 2014), (2, 'Super bootcamp', 2, 2014), (3, 'Home Visits', 2, 2015), (4, 'Week 1', 3, 2015);
";

/// Writes the fixture database to `path`, replacing any existing file.
pub fn build_database(path: &Path) -> rusqlite::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).expect("create database directory");
    }
    let _ = std::fs::remove_file(path);
    let conn = Connection::open(path)?;
    conn.execute_batch(SCHEMA_SQL)
}

pub fn tables_json() -> serde_json::Value {
    json!([{
        "db_id": DB_ID,
        "table_names_original": ["stadium", "singer", "concert"],
        "table_names": ["stadium", "singer", "concert"],
        "column_names_original": [
            [-1, "*"],
            [0, "stadium_id"], [0, "name"], [0, "location"], [0, "capacity"],
            [1, "singer_id"], [1, "name"], [1, "country"], [1, "age"],
            [2, "concert_id"], [2, "concert_name"], [2, "stadium_id"], [2, "year"]
        ],
        "column_types": ["text", "number", "text", "text", "number", "number", "text", "text", "number",
                         "number", "text", "number", "number"],
        "primary_keys": [1, 5, 9],
        "foreign_keys": [[11, 1]]
    }])
}

/// One scripted question.
pub struct ScriptedCase {
    pub id: &'static str,
    pub question: &'static str,
    pub difficulty: &'static str,
    pub gold: &'static str,
    pub beam: &'static [&'static str],
}

pub const CASES: [ScriptedCase; 10] = [
    ScriptedCase {
        id: "c01",
        question: "How many singers do we have?",
        difficulty: "simple",
        gold: "SELECT count(*) FROM singer",
        beam: &["SELECT count(*) FROM singer"],
    },
    ScriptedCase {
        id: "c02",
        question: "List the names of all stadiums.",
        difficulty: "simple",
        gold: "SELECT name FROM stadium",
        beam: &["SELECT nam FROM stadium", "SELECT name FROM stadium"],
    },
    ScriptedCase {
        id: "c03",
        question: "What is the average age of singers from France?",
        difficulty: "moderate",
        gold: "SELECT avg(age) FROM singer WHERE country = 'France'",
        beam: &["SELECT avg(age) FROM singer WHERE country = 'France'"],
    },
    ScriptedCase {
        id: "c04",
        question: "Show the concert names held in 2014.",
        difficulty: "simple",
        gold: "SELECT concert_name FROM concert WHERE year = 2014",
        beam: &["SELECT concert_name FROM concert WHERE year = 2014"],
    },
    ScriptedCase {
        id: "c05",
        question: "Which stadium has the largest capacity?",
        difficulty: "moderate",
        gold: "SELECT name FROM stadium ORDER BY capacity DESC LIMIT 1",
        beam: &["SELECT name FROM stadium ORDER BY capacity DESC LIMIT 1"],
    },
    ScriptedCase {
        id: "c06",
        question: "How many concerts were held at each stadium? Show stadium name and count.",
        difficulty: "challenging",
        gold: "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T2.name",
        beam: &["SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T2.name"],
    },
    ScriptedCase {
        id: "c07",
        question: "List singer names ordered by age from youngest to oldest.",
        difficulty: "moderate",
        gold: "SELECT name FROM singer ORDER BY age",
        beam: &["SELECT name FROM singer ORDER BY age ASC"],
    },
    ScriptedCase {
        id: "c08",
        question: "What are the names of singers from France?",
        difficulty: "moderate",
        gold: "SELECT name FROM singer WHERE country = 'France'",
        beam: &[
            "SELECT name FROM singer WHERE country = 'france'",
            "SELECT name FROM singer WHERE country = 'France'",
        ],
    },
    ScriptedCase {
        id: "c09",
        question: "What are the names of all singers?",
        difficulty: "simple",
        gold: "SELECT name FROM singer",
        beam: &["SELECT nme FROM singer"],
    },
    ScriptedCase {
        id: "c10",
        question: "Which singers are older than 40 and from the Netherlands?",
        difficulty: "challenging",
        gold: "SELECT name FROM singer WHERE age > 40 AND country = 'Netherlands'",
        beam: &["SELECT name FROM singer WHERE age > 40"],
    },
];

/// Case ids whose scripted baseline is wrong.
pub const FAULTY: [&str; 3] = ["c08", "c09", "c10"];
/// The statement the refiner keeps proposing for `c10`; it returns no rows.
pub const C10_REWRITE: &str = "SELECT name FROM singer WHERE age > 40 AND country = 'Holland'";

pub const C08_VARIANTS: [&str; 3] = [
    "Give the names of singers whose country is France.",
    "List singers from France by name.",
    "Which singers come from France? Give their names.",
];

pub fn questions_json() -> serde_json::Value {
    serde_json::Value::Array(
        CASES
            .iter()
            .map(|c| {
                json!({
                    "question_id": c.id,
                    "db_id": DB_ID,
                    "question": c.question,
                    "evidence": "",
                    "SQL": c.gold,
                    "difficulty": c.difficulty,
                })
            })
            .collect(),
    )
}

pub fn sqltool_rules() -> Vec<BeamRule> {
    let mut rules = vec![
        BeamRule {
            case_id: Some("c08".into()),
            question_contains: Some("country is France".into()),
            beam: vec!["SELECT name FROM singer WHERE country = 'France'".into()],
        },
        BeamRule {
            case_id: Some("c08".into()),
            question_contains: Some("by name".into()),
            beam: vec!["SELECT T1.name FROM singer AS T1 WHERE T1.country = 'France'".into()],
        },
    ];
    for c in &CASES {
        rules.push(BeamRule {
            case_id: Some(c.id.into()),
            question_contains: None,
            beam: c.beam.iter().map(|s| s.to_string()).collect(),
        });
    }
    for t in &TRAINING {
        rules.push(BeamRule {
            case_id: Some(t.id.into()),
            question_contains: None,
            beam: t.beam.iter().map(|s| s.to_string()).collect(),
        });
    }
    rules
}

fn rule(role_tag: RoleTag, question: &str, response: String, usage: (u64, u64)) -> ScriptRule {
    ScriptRule {
        role_tag,
        match_substring: format!("### Question\n{question}"),
        response,
        prompt_tokens: usage.0,
        completion_tokens: usage.1,
    }
}

pub fn llm_rules() -> Vec<ScriptRule> {
    let mut rules = Vec::new();
    for c in &CASES {
        let verdict = if FAULTY.contains(&c.id) { "INCORRECT" } else { "CORRECT" };
        rules.push(rule(
            RoleTag::Reviewer,
            c.question,
            format!("SELECT returns what was asked. FROM uses the right table. The filters match.\nVERDICT: {verdict}"),
            REVIEWER_USAGE,
        ));
    }
    let by_id = |id: &str| CASES.iter().find(|c| c.id == id).expect("fixture case");
    let numbered = |vs: &[&str]| {
        vs.iter()
            .enumerate()
            .map(|(i, v)| format!("{}. {v}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    rules.push(rule(
        RoleTag::Crafter,
        by_id("c08").question,
        numbered(&C08_VARIANTS),
        CRAFTER_USAGE,
    ));
    rules.push(rule(
        RoleTag::Crafter,
        by_id("c09").question,
        numbered(&["List every singer name.", "Give the names of the singers."]),
        CRAFTER_USAGE,
    ));
    rules.push(rule(
        RoleTag::Crafter,
        by_id("c10").question,
        numbered(&[
            "Which singers from the Netherlands are over 40?",
            "Singers aged over 40 from the Netherlands?",
        ]),
        CRAFTER_USAGE,
    ));
    rules.push(rule(
        RoleTag::Refiner,
        by_id("c08").question,
        "The faulty SQL compares country with a lowercase value that never occurs. Candidate 2 uses the stored spelling.\nCHOICE: 2".into(),
        REFINER_USAGE,
    ));
    rules.push(rule(
        RoleTag::Refiner,
        by_id("c09").question,
        "The column is called name, not nme.\n```sql\nSELECT name FROM singer\n```".into(),
        REFINER_USAGE,
    ));
    rules.push(rule(
        RoleTag::Refiner,
        by_id("c10").question,
        format!("The country condition is missing.\n```sql\n{C10_REWRITE}\n```"),
        REFINER_USAGE,
    ));
    rules
}

pub struct TrainingCase {
    pub id: &'static str,
    pub question: &'static str,
    pub gold: &'static str,
    pub beam: &'static [&'static str],
}

/// Five training questions; `t2` and `t4` are generator failures.
pub const TRAINING: [TrainingCase; 5] = [
    TrainingCase {
        id: "t1",
        question: "How many stadiums are there?",
        gold: "SELECT count(*) FROM stadium",
        beam: &["SELECT count(*) FROM stadium"],
    },
    TrainingCase {
        id: "t2",
        question: "List the names of singers from France.",
        gold: "SELECT name FROM singer WHERE country = 'France'",
        beam: &["SELECT name FROM singer WHERE country = 'FR'"],
    },
    TrainingCase {
        id: "t3",
        question: "What is the capacity of Wembley?",
        gold: "SELECT capacity FROM stadium WHERE name = 'Wembley'",
        beam: &["SELECT capacity FROM stadium WHERE name = 'Wembley'"],
    },
    TrainingCase {
        id: "t4",
        question: "Show names of singers older than 40.",
        gold: "SELECT name FROM singer WHERE age > 40",
        beam: &["SELECT name FROM singers WHERE age > 40"],
    },
    TrainingCase {
        id: "t5",
        question: "List all concert years.",
        gold: "SELECT year FROM concert",
        beam: &["SELECT year FROM concert"],
    },
];

pub fn training_json() -> serde_json::Value {
    serde_json::Value::Array(
        TRAINING
            .iter()
            .map(|t| json!({"question_id": t.id, "db_id": DB_ID, "question": t.question, "SQL": t.gold}))
            .collect(),
    )
}

/// The fixture laid out on disk the way the command line expects it.
pub struct Fixture {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub db_root: PathBuf,
    pub questions: PathBuf,
    pub train_questions: PathBuf,
    pub tables: PathBuf,
    pub llm_rules: PathBuf,
    pub sqltool_rules: PathBuf,
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("fixture serializes")).expect("write fixture");
}

impl Fixture {
    pub fn create() -> Self {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path().to_path_buf();
        let db_root = root.join("database");
        build_database(&crate::catalog::database_path(&db_root, DB_ID)).expect("fixture database");
        let f = Self {
            questions: root.join("dev.json"),
            train_questions: root.join("train.json"),
            tables: root.join("tables.json"),
            llm_rules: root.join("llm_rules.json"),
            sqltool_rules: root.join("sqltool_rules.json"),
            db_root,
            root,
            _dir: dir,
        };
        write_json(&f.questions, &questions_json());
        write_json(&f.train_questions, &training_json());
        write_json(&f.tables, &tables_json());
        write_json(&f.llm_rules, &llm_rules());
        write_json(&f.sqltool_rules, &sqltool_rules());
        f
    }

    pub fn corpus(&self) -> Corpus {
        load_dataset(&self.questions, &self.tables, &self.db_root, &LoadOptions::default()).expect("fixture corpus")
    }

    pub fn training(&self) -> Corpus {
        load_dataset(
            &self.train_questions,
            &self.tables,
            &self.db_root,
            &LoadOptions::default(),
        )
        .expect("fixture training corpus")
    }

    pub fn db_path(&self) -> PathBuf {
        crate::catalog::database_path(&self.db_root, DB_ID)
    }

    pub fn llm_backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(llm_rules())
    }

    pub fn sqltool(&self) -> ScriptedSqlTool {
        ScriptedSqlTool::new(sqltool_rules())
    }
}
