//! Benchmark corpora and database schemas.
//!
//! Question files come in two shapes, told apart by which fields are present:
//! Bird-style records carry `evidence`, `SQL` and `difficulty`, Spider-style
//! records carry `query`. Schemas are read from a `tables.json` file and the
//! databases themselves live at `<db_root>/<db_id>/<db_id>.sqlite`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::executor::{self, DbHandle};
use crate::sqltext;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed corpus {path}: {reason}")]
    MalformedCorpus { path: PathBuf, reason: String },
    #[error("missing database `{db_id}`: {reason}")]
    MissingDatabase { db_id: String, reason: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CatalogError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub sql_type: String,
    pub is_primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<Column>,
    /// One list per column, aligned with `columns`.
    pub sample_values: Vec<Vec<String>>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    fn primary_key(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.is_primary_key)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Checks name uniqueness, non-empty tables, and that every foreign key
    /// endpoint exists.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(format!("duplicate table `{}`", t.name));
            }
            if t.columns.is_empty() {
                return Err(format!("table `{}` has no columns", t.name));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(format!("duplicate column `{}.{}`", t.name, c.name));
                }
            }
        }
        for fk in &self.foreign_keys {
            for end in [&fk.from, &fk.to] {
                let ok = self.table(&end.table).is_some_and(|t| t.column(&end.column).is_some());
                if !ok {
                    return Err(format!(
                        "foreign key endpoint `{}.{}` does not exist",
                        end.table, end.column
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
    #[default]
    Unknown,
}

impl Difficulty {
    pub fn parse(label: &str) -> Self {
        match label.trim().to_lowercase().as_str() {
            "simple" => Self::Simple,
            "moderate" => Self::Moderate,
            "challenging" => Self::Challenging,
            _ => Self::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Moderate => "moderate",
            Self::Challenging => "challenging",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCase {
    pub case_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    pub db_id: String,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default)]
    pub difficulty: Difficulty,
}

/// Bounds for the sample-value scan performed while loading.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Distinct non-null values kept per column.
    pub values_per_column: usize,
    /// Rows scanned per column when looking for sample values.
    pub scan_rows: usize,
    /// Text values longer than this many characters are cut.
    pub max_value_chars: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            values_per_column: 3,
            scan_rows: 1000,
            max_value_chars: 64,
        }
    }
}

/// A loaded benchmark split. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub cases: Vec<QuestionCase>,
    pub schemas: BTreeMap<String, DatabaseSchema>,
    pub db_root: PathBuf,
}

impl Corpus {
    pub fn schema(&self, db_id: &str) -> Result<&DatabaseSchema> {
        self.schemas.get(db_id).ok_or_else(|| CatalogError::MissingDatabase {
            db_id: db_id.to_string(),
            reason: "no schema entry".into(),
        })
    }

    pub fn db_path(&self, db_id: &str) -> PathBuf {
        database_path(&self.db_root, db_id)
    }

    pub fn db_handle(&self, db_id: &str) -> Result<DbHandle> {
        let path = self.db_path(db_id);
        if !path.is_file() {
            return Err(CatalogError::MissingDatabase {
                db_id: db_id.to_string(),
                reason: format!("{} not found", path.display()),
            });
        }
        Ok(DbHandle::new(db_id, path))
    }

    pub fn case(&self, case_id: &str) -> Option<&QuestionCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// The first `limit` cases as a new corpus sharing the same schemas.
    pub fn truncated(&self, limit: usize) -> Corpus {
        Corpus {
            cases: self.cases.iter().take(limit).cloned().collect(),
            schemas: self.schemas.clone(),
            db_root: self.db_root.clone(),
        }
    }
}

pub fn database_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

fn read_json(path: &Path) -> Result<Json> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CatalogError::MalformedCorpus {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads questions, schemas and sample values.
///
/// Every `db_id` used by a question must have both a schema entry and a
/// database file; anything else is an error rather than a skipped case.
pub fn load_dataset(
    questions_path: &Path,
    schemas_path: &Path,
    db_root: &Path,
    options: &LoadOptions,
) -> Result<Corpus> {
    let mut schemas = load_schemas(schemas_path)?;
    let cases = load_questions(questions_path)?;

    let used: BTreeSet<&str> = cases.iter().map(|c| c.db_id.as_str()).collect();
    for db_id in used {
        let Some(schema) = schemas.get_mut(db_id) else {
            return Err(CatalogError::MissingDatabase {
                db_id: db_id.to_string(),
                reason: format!("not described in {}", schemas_path.display()),
            });
        };
        let path = database_path(db_root, db_id);
        if !path.is_file() {
            return Err(CatalogError::MissingDatabase {
                db_id: db_id.to_string(),
                reason: format!("{} not found", path.display()),
            });
        }
        fill_sample_values(schema, &DbHandle::new(db_id, path), options)?;
    }

    Ok(Corpus {
        cases,
        schemas,
        db_root: db_root.to_path_buf(),
    })
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionCase>> {
    let malformed = |reason: String| CatalogError::MalformedCorpus {
        path: path.to_path_buf(),
        reason,
    };
    let Json::Array(records) = read_json(path)? else {
        return Err(malformed("question file is not a JSON array".into()));
    };
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| parse_question(i, rec).map_err(|r| malformed(format!("record {i}: {r}"))))
        .collect()
}

fn parse_question(index: usize, rec: &Json) -> std::result::Result<QuestionCase, String> {
    let obj = rec.as_object().ok_or("not an object")?;
    let text = |key: &str| -> std::result::Result<Option<String>, String> {
        match obj.get(key) {
            None | Some(Json::Null) => Ok(None),
            Some(Json::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(format!("field `{key}` is not a string")),
        }
    };
    let question = text("question")?.ok_or("missing `question`")?;
    let db_id = text("db_id")?.ok_or("missing `db_id`")?;
    // Bird-style gold lives in `SQL`, Spider-style in `query`.
    let gold_sql = match text("SQL")? {
        Some(sql) => Some(sql),
        None => text("query")?,
    };
    let evidence = text("evidence")?.unwrap_or_default();
    let difficulty = text("difficulty")?.map(|d| Difficulty::parse(&d)).unwrap_or_default();
    let case_id = match obj.get("question_id") {
        Some(Json::Number(n)) => n.to_string(),
        Some(Json::String(s)) => s.clone(),
        _ => index.to_string(),
    };
    Ok(QuestionCase {
        case_id,
        question,
        evidence,
        db_id,
        gold_sql,
        difficulty,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PrimaryKeyEntry {
    Single(usize),
    Composite(Vec<usize>),
}

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<PrimaryKeyEntry>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

pub fn load_schemas(path: &Path) -> Result<BTreeMap<String, DatabaseSchema>> {
    let json = read_json(path)?;
    let raws: Vec<RawSchema> = serde_json::from_value(json).map_err(|e| CatalogError::MalformedCorpus {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for raw in raws {
        let db_id = raw.db_id.clone();
        let schema = convert_schema(raw).map_err(|reason| CatalogError::MalformedCorpus {
            path: path.to_path_buf(),
            reason: format!("schema `{db_id}`: {reason}"),
        })?;
        if out.insert(db_id.clone(), schema).is_some() {
            return Err(CatalogError::MalformedCorpus {
                path: path.to_path_buf(),
                reason: format!("duplicate schema `{db_id}`"),
            });
        }
    }
    Ok(out)
}

fn convert_schema(raw: RawSchema) -> std::result::Result<DatabaseSchema, String> {
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err("column_types and column_names_original differ in length".into());
    }
    let mut pk_cols = HashSet::new();
    for entry in &raw.primary_keys {
        match entry {
            PrimaryKeyEntry::Single(i) => {
                pk_cols.insert(*i);
            }
            PrimaryKeyEntry::Composite(v) => pk_cols.extend(v.iter().copied()),
        }
    }
    let mut tables: Vec<TableDef> = raw
        .table_names_original
        .iter()
        .map(|name| TableDef {
            name: name.clone(),
            columns: Vec::new(),
            sample_values: Vec::new(),
        })
        .collect();
    // column index -> (table index, position)
    let mut col_refs: Vec<Option<(usize, usize)>> = Vec::new();
    for (idx, ((table_idx, name), ty)) in raw.column_names_original.iter().zip(&raw.column_types).enumerate() {
        if *table_idx < 0 {
            col_refs.push(None);
            continue;
        }
        let t = *table_idx as usize;
        let table = tables
            .get_mut(t)
            .ok_or_else(|| format!("column `{name}` references table index {t}"))?;
        col_refs.push(Some((t, table.columns.len())));
        table.columns.push(Column {
            name: name.clone(),
            sql_type: ty.clone(),
            is_primary_key: pk_cols.contains(&idx),
        });
        table.sample_values.push(Vec::new());
    }
    let resolve = |idx: usize| -> std::result::Result<ColumnRef, String> {
        let (t, c) = col_refs
            .get(idx)
            .copied()
            .flatten()
            .ok_or_else(|| format!("foreign key references column index {idx}"))?;
        Ok(ColumnRef {
            table: tables[t].name.clone(),
            column: tables[t].columns[c].name.clone(),
        })
    };
    let foreign_keys = raw
        .foreign_keys
        .iter()
        .map(|&(a, b)| {
            Ok(ForeignKey {
                from: resolve(a)?,
                to: resolve(b)?,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let schema = DatabaseSchema {
        db_id: raw.db_id,
        tables,
        foreign_keys,
    };
    schema.validate()?;
    Ok(schema)
}

fn fill_sample_values(schema: &mut DatabaseSchema, db: &DbHandle, options: &LoadOptions) -> Result<()> {
    if options.values_per_column == 0 {
        return Ok(());
    }
    let conn = executor::open_read_only(&db.path).map_err(|e| CatalogError::MissingDatabase {
        db_id: schema.db_id.clone(),
        reason: e.to_string(),
    })?;
    for table in &mut schema.tables {
        for (col, samples) in table.columns.iter().zip(table.sample_values.iter_mut()) {
            // Unreadable columns (views, virtual tables with missing modules)
            // simply get no samples.
            *samples = executor::sample_column(&conn, &table.name, &col.name, options).unwrap_or_default();
        }
    }
    Ok(())
}

/// Prompt-facing rendering of a schema, possibly restricted to the tables
/// relevant to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSketch {
    pub db_id: String,
    pub included_tables: Vec<String>,
    pub truncated: bool,
    pub text: String,
    /// The included tables, in `included_tables` order.
    pub tables: Vec<TableDef>,
    /// Foreign keys whose endpoints are both included.
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchStyle {
    #[default]
    Ddl,
    Compact,
}

/// Lexical schema filter: ranks tables by how many content stems of the
/// question and evidence they share with the table's name, column names
/// and sample values.
#[derive(Debug, Clone)]
pub struct SchemaFilter {
    pub top_k: usize,
    /// Schemas with at most this many tables are never cut.
    pub keep_all_threshold: usize,
    pub style: SketchStyle,
}

impl Default for SchemaFilter {
    fn default() -> Self {
        Self {
            top_k: 6,
            keep_all_threshold: 4,
            style: SketchStyle::Ddl,
        }
    }
}

/// Lexical overlap between the question text and one table.
pub fn table_relevance(question_stems: &BTreeSet<String>, table: &TableDef) -> usize {
    let mut vocab = sqltext::content_stems(&table.name);
    for col in &table.columns {
        vocab.extend(sqltext::content_stems(&col.name));
    }
    for values in &table.sample_values {
        for v in values {
            vocab.extend(sqltext::content_stems(v));
        }
    }
    question_stems.intersection(&vocab).count()
}

impl SchemaFilter {
    pub fn filter(&self, case: &QuestionCase, schema: &DatabaseSchema) -> SchemaSketch {
        let stems = sqltext::content_stems(&format!("{} {}", case.question, case.evidence));
        let scores: Vec<usize> = schema.tables.iter().map(|t| table_relevance(&stems, t)).collect();

        let mut ranked: Vec<usize> = (0..schema.tables.len()).collect();
        // stable: ties keep declaration order
        ranked.sort_by(|&a, &b| scores[b].cmp(&scores[a]));

        let chosen: Vec<usize> = if scores.iter().all(|&s| s == 0) {
            (0..schema.tables.len()).collect()
        } else if schema.tables.len() <= self.keep_all_threshold {
            ranked
        } else {
            let mut kept: Vec<usize> = ranked
                .iter()
                .copied()
                .filter(|&i| scores[i] > 0)
                .take(self.top_k.max(1))
                .collect();
            let kept_names: BTreeSet<&str> = kept.iter().map(|&i| schema.tables[i].name.as_str()).collect();
            let mut neighbours = BTreeSet::new();
            for fk in &schema.foreign_keys {
                if kept_names.contains(fk.from.table.as_str()) {
                    neighbours.insert(fk.to.table.as_str());
                }
                if kept_names.contains(fk.to.table.as_str()) {
                    neighbours.insert(fk.from.table.as_str());
                }
            }
            for (i, t) in schema.tables.iter().enumerate() {
                if neighbours.contains(t.name.as_str()) && !kept.contains(&i) {
                    kept.push(i);
                }
            }
            kept
        };

        let tables: Vec<TableDef> = chosen.iter().map(|&i| schema.tables[i].clone()).collect();
        let names: BTreeSet<&str> = tables.iter().map(|t| t.name.as_str()).collect();
        let foreign_keys = schema
            .foreign_keys
            .iter()
            .filter(|fk| names.contains(fk.from.table.as_str()) && names.contains(fk.to.table.as_str()))
            .cloned()
            .collect();
        let mut sketch = SchemaSketch {
            db_id: schema.db_id.clone(),
            included_tables: tables.iter().map(|t| t.name.clone()).collect(),
            truncated: tables.len() < schema.tables.len(),
            text: String::new(),
            tables,
            foreign_keys,
        };
        sketch.text = serialize_schema(&sketch, self.style);
        sketch
    }
}

/// Full-schema sketch, used when no filtering is wanted.
pub fn full_sketch(schema: &DatabaseSchema, style: SketchStyle) -> SchemaSketch {
    let mut sketch = SchemaSketch {
        db_id: schema.db_id.clone(),
        included_tables: schema.tables.iter().map(|t| t.name.clone()).collect(),
        truncated: false,
        text: String::new(),
        tables: schema.tables.clone(),
        foreign_keys: schema.foreign_keys.clone(),
    };
    sketch.text = serialize_schema(&sketch, style);
    sketch
}

fn quote_ident(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if simple {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

fn render_sample(value: &str) -> String {
    if value.parse::<f64>().is_ok() {
        value.to_string()
    } else {
        format!("'{}'", value.replace('\'', "''").replace('\n', " "))
    }
}

pub fn serialize_schema(sketch: &SchemaSketch, style: SketchStyle) -> String {
    match style {
        SketchStyle::Ddl => render_ddl(sketch),
        SketchStyle::Compact => render_compact(sketch),
    }
}

fn render_compact(sketch: &SchemaSketch) -> String {
    let mut out = String::new();
    for t in &sketch.tables {
        let cols: Vec<String> = t.columns.iter().map(|c| quote_ident(&c.name)).collect();
        out.push_str(&format!("{}({})\n", quote_ident(&t.name), cols.join(", ")));
    }
    out
}

fn render_ddl(sketch: &SchemaSketch) -> String {
    let mut out = String::new();
    for t in &sketch.tables {
        let pk = t.primary_key();
        // (declaration, trailing comment)
        let mut entries: Vec<(String, Option<String>)> = Vec::new();
        for (col, samples) in t.columns.iter().zip(&t.sample_values) {
            let mut decl = quote_ident(&col.name);
            if !col.sql_type.is_empty() {
                decl.push(' ');
                decl.push_str(&col.sql_type.to_uppercase());
            }
            if pk.len() == 1 && col.is_primary_key {
                decl.push_str(" PRIMARY KEY");
            }
            let comment = (!samples.is_empty()).then(|| {
                let vals: Vec<String> = samples.iter().map(|v| render_sample(v)).collect();
                format!("examples: {}", vals.join(", "))
            });
            entries.push((decl, comment));
        }
        if pk.len() > 1 {
            let cols: Vec<String> = pk.iter().map(|c| quote_ident(c)).collect();
            entries.push((format!("PRIMARY KEY ({})", cols.join(", ")), None));
        }
        for fk in sketch.foreign_keys.iter().filter(|fk| fk.from.table == t.name) {
            entries.push((
                format!(
                    "FOREIGN KEY ({}) REFERENCES {} ({})",
                    quote_ident(&fk.from.column),
                    quote_ident(&fk.to.table),
                    quote_ident(&fk.to.column)
                ),
                None,
            ));
        }
        out.push_str(&format!("CREATE TABLE {} (\n", quote_ident(&t.name)));
        let n = entries.len();
        for (i, (decl, comment)) in entries.into_iter().enumerate() {
            let comma = if i + 1 < n { "," } else { "" };
            match comment {
                Some(c) => out.push_str(&format!("  {decl}{comma} -- {c}\n")),
                None => out.push_str(&format!("  {decl}{comma}\n")),
            }
        }
        out.push_str(");\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(name: &str, cols: &[&str]) -> TableDef {
        TableDef {
            name: name.into(),
            columns: cols
                .iter()
                .enumerate()
                .map(|(i, c)| Column {
                    name: (*c).into(),
                    sql_type: "text".into(),
                    is_primary_key: i == 0,
                })
                .collect(),
            sample_values: vec![Vec::new(); cols.len()],
        }
    }

    fn concert_schema() -> DatabaseSchema {
        DatabaseSchema {
            db_id: "concert_singer".into(),
            tables: vec![
                table("stadium", &["stadium_id", "location", "name", "capacity"]),
                table("singer", &["singer_id", "name", "country", "age"]),
                table("concert", &["concert_id", "concert_name", "stadium_id", "year"]),
            ],
            foreign_keys: vec![ForeignKey {
                from: ColumnRef {
                    table: "concert".into(),
                    column: "stadium_id".into(),
                },
                to: ColumnRef {
                    table: "stadium".into(),
                    column: "stadium_id".into(),
                },
            }],
        }
    }

    fn case(q: &str) -> QuestionCase {
        QuestionCase {
            case_id: "0".into(),
            question: q.into(),
            evidence: String::new(),
            db_id: "concert_singer".into(),
            gold_sql: None,
            difficulty: Difficulty::Unknown,
        }
    }

    #[test]
    fn single_table_schema_is_kept() {
        let schema = DatabaseSchema {
            db_id: "x".into(),
            tables: vec![table("only", &["id"])],
            foreign_keys: vec![],
        };
        let sketch = SchemaFilter::default().filter(&case("anything at all"), &schema);
        assert_eq!(sketch.included_tables, vec!["only"]);
        assert!(!sketch.truncated);
    }

    #[test]
    fn relevance_scores_match_hand_count() {
        // Frozen from a standalone overlap count: stems of "list all singer names"
        // minus stopwords are {singer, name}.
        let schema = concert_schema();
        let stems = sqltext::content_stems("list all singer names");
        let scores: Vec<usize> = schema.tables.iter().map(|t| table_relevance(&stems, t)).collect();
        assert_eq!(scores, vec![1, 2, 1]);
    }

    #[test]
    fn most_relevant_table_comes_first() {
        let filter = SchemaFilter {
            keep_all_threshold: 2,
            ..SchemaFilter::default()
        };
        let sketch = filter.filter(&case("list all singer names"), &concert_schema());
        assert_eq!(sketch.included_tables[0], "singer");
    }

    #[test]
    fn zero_overlap_falls_back_to_full_schema() {
        let filter = SchemaFilter {
            keep_all_threshold: 1,
            ..SchemaFilter::default()
        };
        let schema = concert_schema();
        let sketch = filter.filter(&case("xyzzy plugh"), &schema);
        assert_eq!(sketch.included_tables, vec!["stadium", "singer", "concert"]);
        assert!(!sketch.truncated);
    }

    #[test]
    fn top_k_cut_pulls_in_foreign_key_neighbours() {
        let filter = SchemaFilter {
            top_k: 1,
            keep_all_threshold: 1,
            ..SchemaFilter::default()
        };
        let sketch = filter.filter(&case("concert names by year"), &concert_schema());
        assert_eq!(sketch.included_tables, vec!["concert", "stadium"]);
        assert!(sketch.truncated);
        assert_eq!(sketch.foreign_keys.len(), 1);
        assert!(!sketch.text.contains("singer"));
    }

    #[test]
    fn ddl_single_table_single_column() {
        let schema = DatabaseSchema {
            db_id: "x".into(),
            tables: vec![table("t", &["a"])],
            foreign_keys: vec![],
        };
        let text = serialize_schema(&full_sketch(&schema, SketchStyle::Ddl), SketchStyle::Ddl);
        assert_eq!(text, "CREATE TABLE t (\n  a TEXT PRIMARY KEY\n);\n");
    }

    #[test]
    fn ddl_foreign_key_clause_and_determinism() {
        let schema = concert_schema();
        let sketch = full_sketch(&schema, SketchStyle::Ddl);
        let a = serialize_schema(&sketch, SketchStyle::Ddl);
        let b = serialize_schema(&sketch, SketchStyle::Ddl);
        assert_eq!(a, b);
        assert!(a.contains("FOREIGN KEY (stadium_id) REFERENCES stadium (stadium_id)"));
        assert_eq!(a.matches("CREATE TABLE").count(), 3);
    }

    #[test]
    fn compact_lines() {
        let schema = concert_schema();
        let text = serialize_schema(&full_sketch(&schema, SketchStyle::Ddl), SketchStyle::Compact);
        assert_eq!(text.lines().nth(1), Some("singer(singer_id, name, country, age)"));
    }

    #[test]
    fn odd_identifiers_are_quoted_with_samples() {
        let mut t = table("Player Stats", &["id", "full name"]);
        t.sample_values[1] = vec!["O'Neil".into(), "Bo".into()];
        t.sample_values[0] = vec!["1".into()];
        let schema = DatabaseSchema {
            db_id: "x".into(),
            tables: vec![t],
            foreign_keys: vec![],
        };
        let text = full_sketch(&schema, SketchStyle::Ddl).text;
        assert!(text.starts_with("CREATE TABLE `Player Stats` (\n"));
        assert!(text.contains("  id TEXT PRIMARY KEY, -- examples: 1\n"));
        assert!(text.contains("  `full name` TEXT -- examples: 'O''Neil', 'Bo'\n"));
    }

    #[test]
    fn validate_rejects_dangling_foreign_key() {
        let mut schema = concert_schema();
        schema.foreign_keys[0].to.column = "nope".into();
        assert!(schema.validate().is_err());
    }

    #[test]
    fn composite_primary_key_rendered_as_constraint() {
        let mut t = table("pair", &["a", "b", "c"]);
        t.columns[1].is_primary_key = true;
        let schema = DatabaseSchema {
            db_id: "x".into(),
            tables: vec![t],
            foreign_keys: vec![],
        };
        let text = full_sketch(&schema, SketchStyle::Ddl).text;
        assert!(text.contains("  PRIMARY KEY (a, b)\n"));
        assert!(!text.contains("TEXT PRIMARY KEY"));
    }
}
