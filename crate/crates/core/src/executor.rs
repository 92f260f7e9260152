//! Sandboxed SQL execution against benchmark SQLite files.
//!
//! Databases are always opened read-only with `query_only` set, statements
//! that would write are refused before they run, and every statement runs
//! under a wall-clock deadline enforced through SQLite's progress handler.
//! Each worker thread keeps its own connection per database file.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::LoadOptions;
use crate::sqltext;

/// Absolute tolerance for numeric cells when comparing results.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

/// Rows beyond which multiset comparison gives up on tolerance-aware matching
/// and relies on the sorted pairwise check alone.
const MATCHING_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
}

/// Where one benchmark database lives. Cheap to clone and share; the
/// connection itself is opened lazily on each worker thread.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DbHandle {
    pub db_id: String,
    pub path: PathBuf,
}

impl DbHandle {
    pub fn new(db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            db_id: db_id.into(),
            path: path.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    fn from_ref(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(f) => Value::Real(f),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Blob(b.to_vec()),
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(f) => Some(*f),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    /// Cell equality with numeric tolerance. Integers and reals compare as numbers.
    pub fn approx_eq(&self, other: &Value) -> bool {
        match (self.as_number(), other.as_number()) {
            (Some(a), Some(b)) => (a - b).abs() <= NUMERIC_TOLERANCE,
            (None, None) => match (self, other) {
                (Value::Null, Value::Null) => true,
                (Value::Text(a), Value::Text(b)) => a == b,
                (Value::Blob(a), Value::Blob(b)) => a == b,
                _ => false,
            },
            _ => false,
        }
    }

    fn canonical_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Blob(a), Value::Blob(b)) => a.cmp(b),
            _ => match (self.as_number(), other.as_number()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    fn digest_into(&self, hasher: &mut Sha256) {
        match self {
            Value::Null => hasher.update(b"n"),
            Value::Integer(_) | Value::Real(_) => {
                let x = self.as_number().unwrap_or_default();
                let q = (x / NUMERIC_TOLERANCE).round() as i128;
                hasher.update(format!("f{q}").as_bytes());
            }
            Value::Text(s) => {
                hasher.update(format!("t{}:", s.len()).as_bytes());
                hasher.update(s.as_bytes());
            }
            Value::Blob(b) => {
                hasher.update(format!("b{}:", b.len()).as_bytes());
                hasher.update(b);
            }
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SyntaxError,
    RuntimeError,
    Timeout,
    EmptyResult,
}

impl ExecStatus {
    pub fn is_success(self) -> bool {
        matches!(self, ExecStatus::Ok | ExecStatus::EmptyResult)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// Present only for `ok` and `empty_result`.
    pub rows: Option<Vec<Row>>,
    /// Wall-clock seconds spent preparing and stepping the statement.
    pub duration: f64,
    /// Present only for failure statuses.
    pub error_text: Option<String>,
}

impl ExecutionOutcome {
    fn failure(status: ExecStatus, started: Instant, text: String) -> Self {
        Self {
            status,
            rows: None,
            duration: started.elapsed().as_secs_f64(),
            error_text: Some(text),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status.is_success()
    }

    /// Describes a failure the way it is fed back to the agents.
    pub fn describe_failure(&self) -> String {
        let kind = match self.status {
            ExecStatus::Ok | ExecStatus::EmptyResult => return String::new(),
            ExecStatus::SyntaxError => "syntax error",
            ExecStatus::RuntimeError => "runtime error",
            ExecStatus::Timeout => "timeout",
        };
        match &self.error_text {
            Some(t) if !t.is_empty() => format!("{kind}: {t}"),
            _ => kind.to_string(),
        }
    }
}

/// Order-insensitive digest of a row multiset, used for deduplication only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResultSignature(pub String);

impl ResultSignature {
    pub fn of(rows: &[Row]) -> Self {
        let mut sorted: Vec<&Row> = rows.iter().collect();
        sorted.sort_by(|a, b| cmp_rows(a, b));
        let mut hasher = Sha256::new();
        for row in sorted {
            hasher.update(format!("r{}:", row.len()).as_bytes());
            for v in row {
                v.digest_into(&mut hasher);
            }
        }
        let digest = hasher.finalize();
        ResultSignature(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn cmp_rows(a: &Row, b: &Row) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = x.canonical_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn rows_approx_eq(a: &Row, b: &Row) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.approx_eq(y))
}

/// Compares two successful outcomes. Multiset comparison unless
/// `order_sensitive`, in which case rows must line up in sequence.
pub fn results_equal(a: &ExecutionOutcome, b: &ExecutionOutcome, order_sensitive: bool) -> Result<bool, ExecError> {
    let (Some(ra), Some(rb)) = (&a.rows, &b.rows) else {
        return Err(ExecError::ContractViolation(format!(
            "results_equal needs two successful outcomes, got {:?} and {:?}",
            a.status, b.status
        )));
    };
    Ok(rows_equal(ra, rb, order_sensitive))
}

pub fn rows_equal(a: &[Row], b: &[Row], order_sensitive: bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    if order_sensitive {
        return a.iter().zip(b).all(|(x, y)| rows_approx_eq(x, y));
    }
    let mut sa: Vec<&Row> = a.iter().collect();
    let mut sb: Vec<&Row> = b.iter().collect();
    sa.sort_by(|x, y| cmp_rows(x, y));
    sb.sort_by(|x, y| cmp_rows(x, y));
    if sa.iter().zip(&sb).all(|(x, y)| rows_approx_eq(x, y)) {
        return true;
    }
    // Near-equal numbers can sort differently relative to other columns;
    // fall back to a perfect matching under the tolerance relation.
    if a.len() > MATCHING_LIMIT {
        return false;
    }
    perfect_matching(&sa, &sb)
}

fn perfect_matching(a: &[&Row], b: &[&Row]) -> bool {
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|x| (0..b.len()).filter(|&j| rows_approx_eq(x, b[j])).collect())
        .collect();
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    let mut owner: Vec<Option<usize>> = vec![None; b.len()];
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    (0..a.len()).all(|u| {
        let mut seen = vec![false; b.len()];
        augment(u, &adj, &mut seen, &mut owner)
    })
}

/// Opens a database for reading only.
pub fn open_read_only(path: &Path) -> Result<Connection, ExecError> {
    let open = || -> rusqlite::Result<Connection> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )?;
        conn.execute_batch("PRAGMA query_only = ON;")?;
        Ok(conn)
    };
    open().map_err(|source| ExecError::Open {
        path: path.to_path_buf(),
        source,
    })
}

thread_local! {
    static CONNECTIONS: RefCell<HashMap<PathBuf, Connection>> = RefCell::new(HashMap::new());
}

fn with_connection<T>(db: &DbHandle, f: impl FnOnce(&Connection) -> T) -> Result<T, ExecError> {
    CONNECTIONS.with(|cell| {
        let mut map = cell.borrow_mut();
        if !map.contains_key(&db.path) {
            let conn = open_read_only(&db.path)?;
            map.insert(db.path.clone(), conn);
        }
        Ok(f(&map[&db.path]))
    })
}

/// Drops this thread's cached connection to `path`, if any.
pub fn forget_connection(path: &Path) {
    CONNECTIONS.with(|cell| {
        cell.borrow_mut().remove(path);
    });
}

/// Reads up to `values_per_column` distinct non-null values from a bounded
/// prefix of the column.
pub fn sample_column(
    conn: &Connection,
    table: &str,
    column: &str,
    options: &LoadOptions,
) -> rusqlite::Result<Vec<String>> {
    let q = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
    let sql = format!(
        "SELECT {c} FROM (SELECT {c} FROM {t} LIMIT {n}) WHERE {c} IS NOT NULL",
        c = q(column),
        t = q(table),
        n = options.scan_rows
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out: Vec<String> = Vec::new();
    while let Some(row) = rows.next()? {
        let text = match row.get_ref(0)? {
            ValueRef::Integer(i) => i.to_string(),
            ValueRef::Real(f) => f.to_string(),
            ValueRef::Text(t) => String::from_utf8_lossy(t)
                .chars()
                .take(options.max_value_chars)
                .collect(),
            ValueRef::Null | ValueRef::Blob(_) => continue,
        };
        if !out.contains(&text) {
            out.push(text);
            if out.len() >= options.values_per_column {
                break;
            }
        }
    }
    Ok(out)
}

/// Runs statements with a per-statement deadline.
#[derive(Debug, Clone)]
pub struct Executor {
    pub timeout: Duration,
}

impl Default for Executor {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
        }
    }
}

impl Executor {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout }
    }

    /// Executes one read-only statement. Failures are reported through the
    /// returned outcome, never as an `Err`.
    pub fn execute(&self, sql: &str, db: &DbHandle) -> ExecutionOutcome {
        let started = Instant::now();
        let result = with_connection(db, |conn| run_statement(conn, sql, self.timeout, started));
        match result {
            Ok(outcome) => outcome,
            Err(e) => ExecutionOutcome::failure(ExecStatus::RuntimeError, started, e.to_string()),
        }
    }

    /// The repair loop's pass/fail check: the statement must parse, run, and
    /// (when `require_nonempty`) return at least one row.
    pub fn execute_and_analyze(&self, sql: &str, db: &DbHandle, require_nonempty: bool) -> (bool, String) {
        let outcome = self.execute(sql, db);
        analyze(&outcome, require_nonempty)
    }
}

pub fn analyze(outcome: &ExecutionOutcome, require_nonempty: bool) -> (bool, String) {
    match outcome.status {
        ExecStatus::Ok => (true, String::new()),
        ExecStatus::EmptyResult if !require_nonempty => (true, String::new()),
        ExecStatus::EmptyResult => (
            false,
            "empty result: the query executed but returned no rows".to_string(),
        ),
        _ => (false, outcome.describe_failure()),
    }
}

fn run_statement(conn: &Connection, sql: &str, timeout: Duration, started: Instant) -> ExecutionOutcome {
    let deadline = started + timeout;
    let sql = sqltext::strip_statement(sql);
    if sql.is_empty() {
        return ExecutionOutcome::failure(ExecStatus::SyntaxError, started, "empty statement".into());
    }
    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return ExecutionOutcome::failure(ExecStatus::SyntaxError, started, error_message(&e)),
    };
    if !stmt.readonly() {
        return ExecutionOutcome::failure(
            ExecStatus::RuntimeError,
            started,
            "write statements are not allowed".into(),
        );
    }
    let _ = conn.progress_handler(1000, Some(move || Instant::now() >= deadline));
    let width = stmt.column_count();
    let collected = (|| -> rusqlite::Result<Vec<Row>> {
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut values = Vec::with_capacity(width);
            for i in 0..width {
                values.push(Value::from_ref(row.get_ref(i)?));
            }
            out.push(values);
        }
        Ok(out)
    })();
    let _ = conn.progress_handler(0, None::<fn() -> bool>);
    match collected {
        Ok(rows) => ExecutionOutcome {
            status: if rows.is_empty() {
                ExecStatus::EmptyResult
            } else {
                ExecStatus::Ok
            },
            rows: Some(rows),
            duration: started.elapsed().as_secs_f64(),
            error_text: None,
        },
        Err(e) if e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted) => ExecutionOutcome::failure(
            ExecStatus::Timeout,
            started,
            format!("exceeded {:.3}s limit", timeout.as_secs_f64()),
        ),
        Err(e) => ExecutionOutcome::failure(ExecStatus::RuntimeError, started, error_message(&e)),
    }
}

fn error_message(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        other => other.to_string(),
    }
}
