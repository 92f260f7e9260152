//! Evaluation metrics: execution accuracy (EX), clause-set exact match (EM),
//! valid efficiency score (VES), error-detection F1 and repair success rate.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Distinct, Expr, GroupByExpr, Ident, JoinConstraint, JoinOperator, LimitClause, ObjectName,
    ObjectNamePart, OrderByKind, OrderBySort, Query, Select, SelectItem, SelectItemQualifiedWildcardKind, SetExpr,
    SetOperator, SetQuantifier, Statement, TableFactor, Value, ValueWithSpan, Visit, VisitMut, Visitor, VisitorMut,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::keywords::{ALL_KEYWORDS, ALL_KEYWORDS_INDEX, RESERVED_FOR_COLUMN_ALIAS, RESERVED_FOR_TABLE_ALIAS};
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::catalog::{CatalogError, Corpus, Difficulty, QuestionCase};
use crate::executor::{rows_equal, DbHandle, Executor};
use crate::gateway::{RoleUsage, TokenUsage};
use crate::pipeline::RunRecord;
use crate::sqltext;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported SQL: {0}")]
pub struct UnsupportedSql(pub String);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run record names case `{0}`, which is not in the corpus")]
    UnknownCase(String),
    #[error("case `{0}` has no gold SQL")]
    MissingGold(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

// ---------------------------------------------------------------------------
// Exact match

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortDir {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetOp {
    Union,
    UnionAll,
    Intersect,
    Except,
}

impl SetOp {
    fn keyword(self) -> &'static str {
        match self {
            SetOp::Union => "UNION",
            SetOp::UnionAll => "UNION ALL",
            SetOp::Intersect => "INTERSECT",
            SetOp::Except => "EXCEPT",
        }
    }
}

/// A query broken into clause components. Expressions are stored as
/// normalized text: lowercase, table aliases replaced by table names, select
/// aliases dropped, subqueries kept whole.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClauseDecomposition {
    pub distinct: bool,
    pub select_items: BTreeSet<String>,
    pub from_tables: BTreeSet<String>,
    /// Join conditions, split on AND; the two sides of `=` are put in order.
    pub joins: BTreeSet<String>,
    pub where_conjuncts: BTreeSet<String>,
    pub group_by: BTreeSet<String>,
    pub having_conjuncts: BTreeSet<String>,
    pub order_by: Vec<(String, SortDir)>,
    pub limit: Option<i64>,
    pub offset: Option<i64>,
    /// The following branch of a compound query. Chains nest to the right.
    pub set_ops: Option<(SetOp, Box<ClauseDecomposition>)>,
}

fn unsupported<T>(what: impl Into<String>) -> Result<T, UnsupportedSql> {
    Err(UnsupportedSql(what.into()))
}

fn is_plain_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !is_reserved(s)
}

/// Keywords that cannot stand unquoted as a column or table name.
fn is_reserved(s: &str) -> bool {
    let upper = s.to_ascii_uppercase();
    ALL_KEYWORDS.binary_search(&upper.as_str()).is_ok_and(|i| {
        let kw = ALL_KEYWORDS_INDEX[i];
        RESERVED_FOR_TABLE_ALIAS.contains(&kw) || RESERVED_FOR_COLUMN_ALIAS.contains(&kw)
    })
}

fn normalize_ident(ident: &mut Ident) {
    ident.value = ident.value.to_lowercase();
    ident.quote_style = if is_plain_identifier(&ident.value) {
        None
    } else {
        Some('"')
    };
}

fn last_part(name: &ObjectName) -> String {
    match name.0.last() {
        Some(ObjectNamePart::Identifier(i)) => i.value.to_lowercase(),
        _ => name.to_string().to_lowercase(),
    }
}

/// alias -> base table name, over every scope in the statement.
#[derive(Default)]
struct AliasCollector {
    aliases: HashMap<String, String>,
}

impl Visitor for AliasCollector {
    type Break = ();
    fn pre_visit_table_factor(&mut self, tf: &TableFactor) -> ControlFlow<()> {
        if let TableFactor::Table {
            name,
            alias: Some(alias),
            ..
        } = tf
        {
            self.aliases
                .entry(alias.name.value.to_lowercase())
                .or_insert_with(|| last_part(name));
        }
        ControlFlow::Continue(())
    }
}

struct Normalizer<'a> {
    aliases: &'a HashMap<String, String>,
}

impl VisitorMut for Normalizer<'_> {
    type Break = ();

    fn pre_visit_ident(&mut self, ident: &mut Ident) -> ControlFlow<()> {
        normalize_ident(ident);
        ControlFlow::Continue(())
    }

    fn post_visit_expr(&mut self, expr: &mut Expr) -> ControlFlow<()> {
        if let Expr::CompoundIdentifier(parts) = expr {
            if parts.len() == 2 {
                if let Some(table) = self.aliases.get(&parts[0].value) {
                    parts[0].value = table.clone();
                    normalize_ident(&mut parts[0]);
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn post_visit_value(&mut self, value: &mut ValueWithSpan) -> ControlFlow<()> {
        if let Value::DoubleQuotedString(s) = &value.value {
            value.value = Value::SingleQuotedString(s.clone());
        }
        ControlFlow::Continue(())
    }
}

fn text(node: &impl std::fmt::Display) -> String {
    sqltext::collapse_whitespace(&node.to_string().to_lowercase())
}

fn strip_nested(mut e: &Expr) -> &Expr {
    while let Expr::Nested(inner) = e {
        e = inner;
    }
    e
}

fn conjuncts(e: &Expr, out: &mut BTreeSet<String>) {
    match strip_nested(e) {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            conjuncts(left, out);
            conjuncts(right, out);
        }
        other => {
            out.insert(text(other));
        }
    }
}

fn join_conjuncts(e: &Expr, out: &mut BTreeSet<String>) {
    match strip_nested(e) {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            join_conjuncts(left, out);
            join_conjuncts(right, out);
        }
        Expr::BinaryOp {
            left,
            op: BinaryOperator::Eq,
            right,
        } => {
            let (a, b) = (text(left.as_ref()), text(right.as_ref()));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            out.insert(format!("{lo} = {hi}"));
        }
        other => {
            out.insert(text(other));
        }
    }
}

fn literal_int(e: &Expr) -> Result<i64, UnsupportedSql> {
    match strip_nested(e) {
        Expr::Value(ValueWithSpan {
            value: Value::Number(n, _),
            ..
        }) => n.parse().or_else(|_| unsupported(format!("non-integer limit {n}"))),
        Expr::UnaryOp {
            op: sqlparser::ast::UnaryOperator::Minus,
            expr,
        } => literal_int(expr).map(|v| -v),
        other => unsupported(format!("non-literal limit {other}")),
    }
}

fn table_factor(tf: &TableFactor) -> Result<String, UnsupportedSql> {
    match tf {
        TableFactor::Table { name, args: None, .. } => Ok(last_part(name)),
        TableFactor::Derived { subquery, .. } => Ok(format!("({})", text(subquery.as_ref()))),
        other => unsupported(format!("table factor {other}")),
    }
}

fn decompose_select(s: &Select, d: &mut ClauseDecomposition) -> Result<(), UnsupportedSql> {
    match &s.distinct {
        None | Some(Distinct::All) => {}
        Some(Distinct::Distinct) => d.distinct = true,
        Some(Distinct::On(_)) => return unsupported("DISTINCT ON"),
    }
    for item in &s.projection {
        let t = match item {
            SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => text(e),
            SelectItem::ExprWithAliases { expr, .. } => text(expr),
            SelectItem::Wildcard(_) => "*".to_string(),
            SelectItem::QualifiedWildcard(SelectItemQualifiedWildcardKind::ObjectName(name), _) => {
                format!("{}.*", last_part(name))
            }
            SelectItem::QualifiedWildcard(kind, _) => text(kind),
        };
        d.select_items.insert(t);
    }
    for twj in &s.from {
        d.from_tables.insert(table_factor(&twj.relation)?);
        for join in &twj.joins {
            d.from_tables.insert(table_factor(&join.relation)?);
            let constraint = match &join.join_operator {
                JoinOperator::Join(c)
                | JoinOperator::Inner(c)
                | JoinOperator::Left(c)
                | JoinOperator::LeftOuter(c)
                | JoinOperator::Right(c)
                | JoinOperator::RightOuter(c)
                | JoinOperator::FullOuter(c)
                | JoinOperator::CrossJoin(c) => c,
                other => return unsupported(format!("join {other:?}")),
            };
            match constraint {
                JoinConstraint::On(e) => join_conjuncts(e, &mut d.joins),
                JoinConstraint::None => {}
                JoinConstraint::Using(_) | JoinConstraint::Natural => return unsupported("USING / NATURAL join"),
            }
        }
    }
    if let Some(w) = &s.selection {
        conjuncts(w, &mut d.where_conjuncts);
    }
    match &s.group_by {
        GroupByExpr::Expressions(exprs, mods) if mods.is_empty() => {
            d.group_by.extend(exprs.iter().map(text));
        }
        _ => return unsupported("GROUP BY modifier"),
    }
    if let Some(h) = &s.having {
        conjuncts(h, &mut d.having_conjuncts);
    }
    if !s.lateral_views.is_empty() || s.qualify.is_some() || !s.named_window.is_empty() {
        return unsupported("select extension");
    }
    Ok(())
}

fn leaf(expr: &SetExpr) -> Result<ClauseDecomposition, UnsupportedSql> {
    match expr {
        SetExpr::Select(s) => {
            let mut d = ClauseDecomposition::default();
            decompose_select(s, &mut d)?;
            Ok(d)
        }
        SetExpr::Query(q) if q.with.is_none() && q.order_by.is_none() && q.limit_clause.is_none() => {
            match q.body.as_ref() {
                SetExpr::Select(_) | SetExpr::Query(_) => leaf(&q.body),
                _ => unsupported("parenthesized compound branch"),
            }
        }
        SetExpr::Query(_) => unsupported("parenthesized branch with ORDER BY or LIMIT"),
        SetExpr::Values(_) => unsupported("VALUES"),
        _ => unsupported("non-query statement"),
    }
}

/// In-order branches and the operators between them.
fn flatten(
    expr: &SetExpr,
    branches: &mut Vec<ClauseDecomposition>,
    ops: &mut Vec<SetOp>,
) -> Result<(), UnsupportedSql> {
    match expr {
        SetExpr::SetOperation {
            left,
            op,
            set_quantifier,
            right,
        } => {
            flatten(left, branches, ops)?;
            let all = matches!(set_quantifier, SetQuantifier::All);
            ops.push(match (op, all) {
                (SetOperator::Union, true) => SetOp::UnionAll,
                (SetOperator::Union, false) => SetOp::Union,
                (SetOperator::Intersect, false) => SetOp::Intersect,
                (SetOperator::Except, false) | (SetOperator::Minus, false) => SetOp::Except,
                _ => return unsupported(format!("{op} {set_quantifier}")),
            });
            flatten(right, branches, ops)
        }
        other => {
            branches.push(leaf(other)?);
            Ok(())
        }
    }
}

fn decompose_query(q: &Query) -> Result<ClauseDecomposition, UnsupportedSql> {
    if q.with.is_some() {
        return unsupported("WITH clause");
    }
    if q.fetch.is_some() || !q.locks.is_empty() || !q.pipe_operators.is_empty() {
        return unsupported("query extension");
    }
    let mut branches = Vec::new();
    let mut ops = Vec::new();
    flatten(&q.body, &mut branches, &mut ops)?;
    let mut d = branches.pop().expect("at least one branch");
    while let Some(mut prev) = branches.pop() {
        let op = ops.pop().expect("one operator between branches");
        prev.set_ops = Some((op, Box::new(d)));
        d = prev;
    }
    if let Some(order_by) = &q.order_by {
        let OrderByKind::Expressions(exprs) = &order_by.kind else {
            return unsupported("ORDER BY ALL");
        };
        for e in exprs {
            let dir = match e.options.sort {
                None | Some(OrderBySort::Asc) => SortDir::Asc,
                Some(OrderBySort::Desc) => SortDir::Desc,
                Some(_) => return unsupported("ORDER BY USING"),
            };
            d.order_by.push((text(&e.expr), dir));
        }
    }
    match &q.limit_clause {
        None => {}
        Some(LimitClause::LimitOffset {
            limit,
            offset,
            limit_by,
            ..
        }) => {
            if !limit_by.is_empty() {
                return unsupported("LIMIT BY");
            }
            // a negative limit means no limit
            d.limit = limit.as_ref().map(literal_int).transpose()?.filter(|l| *l >= 0);
            d.offset = offset.as_ref().map(|o| literal_int(&o.value)).transpose()?;
        }
        Some(LimitClause::OffsetCommaLimit { offset, limit }) => {
            d.limit = Some(literal_int(limit)?);
            d.offset = Some(literal_int(offset)?);
        }
    }
    Ok(d)
}

impl ClauseDecomposition {
    /// Parses and decomposes one SELECT statement.
    pub fn decompose(sql: &str) -> Result<Self, UnsupportedSql> {
        let mut statements =
            Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| UnsupportedSql(format!("parse error: {e}")))?;
        if statements.len() != 1 {
            return unsupported(format!("{} statements", statements.len()));
        }
        let mut stmt = statements.pop().expect("one statement");
        let mut collector = AliasCollector::default();
        let _ = Visit::visit(&stmt, &mut collector);
        let _ = VisitMut::visit(
            &mut stmt,
            &mut Normalizer {
                aliases: &collector.aliases,
            },
        );
        match &stmt {
            Statement::Query(q) => decompose_query(q),
            _ => unsupported("not a query"),
        }
    }

    /// SQL text that decomposes back to `self`.
    pub fn render(&self) -> String {
        let mut out = self.render_core();
        let mut next = &self.set_ops;
        while let Some((op, d)) = next {
            let _ = write!(out, " {} {}", op.keyword(), d.render_core());
            next = &d.set_ops;
        }
        if !self.order_by.is_empty() {
            let items: Vec<String> = self
                .order_by
                .iter()
                .map(|(e, dir)| format!("{e} {}", if *dir == SortDir::Asc { "ASC" } else { "DESC" }))
                .collect();
            let _ = write!(out, " ORDER BY {}", items.join(", "));
        }
        if let Some(l) = self.limit {
            let _ = write!(out, " LIMIT {l}");
        }
        if let Some(o) = self.offset {
            if self.limit.is_none() {
                out.push_str(" LIMIT -1");
            }
            let _ = write!(out, " OFFSET {o}");
        }
        out
    }

    fn render_core(&self) -> String {
        let join_and = |set: &BTreeSet<String>| set.iter().map(|c| format!("({c})")).collect::<Vec<_>>().join(" AND ");
        let mut out = String::from("SELECT ");
        if self.distinct {
            out.push_str("DISTINCT ");
        }
        out.push_str(&self.select_items.iter().cloned().collect::<Vec<_>>().join(", "));
        let mut tables = self.from_tables.iter();
        if let Some(first) = tables.next() {
            let _ = write!(out, " FROM {first}");
            let mut joined = 0;
            for t in tables {
                let _ = write!(out, " JOIN {t}");
                joined += 1;
            }
            if !self.joins.is_empty() {
                if joined == 0 {
                    let _ = write!(out, " JOIN {first}");
                }
                let _ = write!(out, " ON {}", join_and(&self.joins));
            }
        }
        if !self.where_conjuncts.is_empty() {
            let _ = write!(out, " WHERE {}", join_and(&self.where_conjuncts));
        }
        if !self.group_by.is_empty() {
            let _ = write!(
                out,
                " GROUP BY {}",
                self.group_by.iter().cloned().collect::<Vec<_>>().join(", ")
            );
        }
        if !self.having_conjuncts.is_empty() {
            let _ = write!(out, " HAVING {}", join_and(&self.having_conjuncts));
        }
        out
    }
}

/// Component-wise equality of the two decompositions.
pub fn exact_match(pred: &str, gold: &str) -> Result<bool, UnsupportedSql> {
    Ok(ClauseDecomposition::decompose(pred)? == ClauseDecomposition::decompose(gold)?)
}

// ---------------------------------------------------------------------------
// Execution accuracy and VES

/// Whether a prediction reproduces gold's result. `Err` carries the gold
/// failure text; such cases are left out of EX denominators.
pub fn ex_case(pred: &str, gold: &str, db: &DbHandle, executor: &Executor) -> Result<bool, String> {
    let gold_out = executor.execute(gold, db);
    let Some(gold_rows) = gold_out.rows.as_ref() else {
        return Err(gold_out.describe_failure());
    };
    let pred_out = executor.execute(pred, db);
    Ok(pred_out
        .rows
        .as_ref()
        .is_some_and(|rows| rows_equal(rows, gold_rows, sqltext::has_top_level_order_by(gold))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExReport {
    pub percent: f64,
    /// `None` where gold failed to execute.
    pub flags: Vec<Option<bool>>,
    pub gold_failures: usize,
}

/// EX over `(case, predicted SQL)` pairs.
pub fn execution_accuracy(
    pairs: &[(&QuestionCase, &str)],
    corpus: &Corpus,
    executor: &Executor,
) -> Result<ExReport, MetricsError> {
    let mut flags = Vec::with_capacity(pairs.len());
    for (case, pred) in pairs {
        let gold = case
            .gold_sql
            .as_deref()
            .ok_or_else(|| MetricsError::MissingGold(case.case_id.clone()))?;
        let db = corpus.db_handle(&case.db_id)?;
        match ex_case(pred, gold, &db, executor) {
            Ok(f) => flags.push(Some(f)),
            Err(e) => {
                log::warn!("case {}: gold failed ({e}), excluded from EX", case.case_id);
                flags.push(None);
            }
        }
    }
    let scored = flags.iter().flatten().count();
    let correct = flags.iter().flatten().filter(|f| **f).count();
    Ok(ExReport {
        percent: percent(correct as f64, scored),
        gold_failures: flags.len() - scored,
        flags,
    })
}

fn percent(numerator: f64, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        100.0 * numerator / denominator as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Gold,
    Prediction,
}

/// Supplies the per-statement execution time used by VES.
pub trait Timer: Send + Sync {
    fn describe(&self) -> String;
    fn seconds(&self, case_id: &str, side: Side, sql: &str, db: &DbHandle, executor: &Executor) -> f64;
}

/// Times real executions: `runs` runs, minimum and maximum dropped, mean of
/// the rest.
#[derive(Debug, Clone)]
pub struct WallTimer {
    pub runs: usize,
}

impl Default for WallTimer {
    fn default() -> Self {
        Self { runs: 5 }
    }
}

pub fn trimmed_mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let kept = if s.len() >= 3 { &s[1..s.len() - 1] } else { &s[..] };
    kept.iter().sum::<f64>() / kept.len() as f64
}

impl Timer for WallTimer {
    fn describe(&self) -> String {
        format!("wall clock, {} runs, min/max dropped", self.runs)
    }

    fn seconds(&self, _case_id: &str, _side: Side, sql: &str, db: &DbHandle, executor: &Executor) -> f64 {
        let samples: Vec<f64> = (0..self.runs.max(1))
            .map(|_| executor.execute(sql, db).duration)
            .collect();
        trimmed_mean(&samples)
    }
}

/// Deterministic timer: a constant, with per-case overrides.
#[derive(Debug, Clone)]
pub struct FixedTimer {
    pub default_seconds: f64,
    pub overrides: HashMap<(String, Side), f64>,
}

impl Default for FixedTimer {
    fn default() -> Self {
        Self {
            default_seconds: 0.01,
            overrides: HashMap::new(),
        }
    }
}

impl FixedTimer {
    pub fn with(mut self, case_id: &str, side: Side, seconds: f64) -> Self {
        self.overrides.insert((case_id.to_string(), side), seconds);
        self
    }
}

impl Timer for FixedTimer {
    fn describe(&self) -> String {
        format!(
            "fixed {} s per statement ({} overrides)",
            self.default_seconds,
            self.overrides.len()
        )
    }

    fn seconds(&self, case_id: &str, side: Side, _sql: &str, _db: &DbHandle, _executor: &Executor) -> f64 {
        self.overrides
            .get(&(case_id.to_string(), side))
            .copied()
            .unwrap_or(self.default_seconds)
    }
}

pub const VES_RATIO_MIN: f64 = 0.01;
pub const VES_RATIO_MAX: f64 = 100.0;

/// One case's VES term: the square root of the clamped gold/prediction time
/// ratio, or 0 when the prediction is wrong.
pub fn ves_term(ex_correct: bool, t_gold: f64, t_pred: f64) -> f64 {
    if !ex_correct {
        return 0.0;
    }
    let ratio = if t_pred > 0.0 { t_gold / t_pred } else { VES_RATIO_MAX };
    ratio.clamp(VES_RATIO_MIN, VES_RATIO_MAX).sqrt()
}

// ---------------------------------------------------------------------------
// Detection and repair

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any of the three quotients had a zero denominator.
    pub degenerate: bool,
}

/// Positive class: the baseline SQL is erroneous (EX = 0). A detector says
/// positive when it labels the SQL incorrect.
pub fn detection_scores(items: &[(bool, bool)]) -> DetectionScores {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(label_correct, baseline_ex) in items {
        match (!label_correct, !baseline_ex) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |n: usize, d: usize| if d == 0 { None } else { Some(n as f64 / d as f64) };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    DetectionScores {
        tp,
        fp,
        fn_,
        tn,
        degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRate {
    pub detected_erroneous: usize,
    pub fixed: usize,
    pub percent: f64,
    pub empty_denominator: bool,
}

/// Among cases whose baseline was wrong and was flagged, the share whose
/// final SQL is correct. Items are `(label, baseline_ex, final_ex)`.
pub fn repair_success_rate(items: &[(bool, bool, bool)]) -> RepairRate {
    let detected: Vec<_> = items.iter().filter(|(label, base, _)| !label && !base).collect();
    let fixed = detected.iter().filter(|(_, _, fin)| *fin).count();
    RepairRate {
        detected_erroneous: detected.len(),
        fixed,
        percent: percent(fixed as f64, detected.len()),
        empty_denominator: detected.is_empty(),
    }
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub difficulty: Difficulty,
    /// False when gold failed to execute; EX and VES then exclude the case.
    pub gold_ok: bool,
    pub ex: bool,
    pub baseline_ex: bool,
    pub em: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_unsupported: Option<String>,
    pub ves: f64,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRow {
    pub difficulty: Difficulty,
    pub count: usize,
    pub ex: f64,
    pub em: f64,
    pub ves: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSummary {
    pub per_role: RoleUsage,
    pub total: TokenUsage,
    pub avg_per_question: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub detection_positive_class: String,
    pub timer: String,
    pub gold_failures: usize,
    pub em_unsupported: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub cases: usize,
    pub ex_percent: f64,
    pub em_percent: f64,
    pub ves_percent: f64,
    /// EX of the pre-repair baseline SQL.
    pub baseline_ex_percent: f64,
    pub per_difficulty: Vec<DifficultyRow>,
    pub detection: DetectionScores,
    pub repair: RepairRate,
    pub token_summary: TokenSummary,
    pub metadata: ReportMetadata,
    pub per_case: Vec<CaseScore>,
}

struct Totals {
    count: usize,
    scored: usize,
    ex: usize,
    em: usize,
    ves: f64,
}

fn totals<'a>(scores: impl Iterator<Item = &'a CaseScore>) -> Totals {
    let mut t = Totals {
        count: 0,
        scored: 0,
        ex: 0,
        em: 0,
        ves: 0.0,
    };
    for s in scores {
        t.count += 1;
        t.em += s.em as usize;
        if s.gold_ok {
            t.scored += 1;
            t.ex += s.ex as usize;
            t.ves += s.ves;
        }
    }
    t
}

/// Scores a run against its corpus. EX and VES are over cases whose gold
/// executes; EM is over all cases.
pub fn score_report(
    records: &[RunRecord],
    corpus: &Corpus,
    executor: &Executor,
    timer: &dyn Timer,
) -> Result<ScoreReport, MetricsError> {
    let mut per_case = Vec::with_capacity(records.len());
    let mut tokens = RoleUsage::default();
    for r in records {
        tokens.merge(&r.token_usage);
        let case = corpus
            .case(&r.case_id)
            .ok_or_else(|| MetricsError::UnknownCase(r.case_id.clone()))?;
        let gold = case
            .gold_sql
            .as_deref()
            .ok_or_else(|| MetricsError::MissingGold(case.case_id.clone()))?;
        let db = corpus.db_handle(&case.db_id)?;
        let (em, em_unsupported) = match exact_match(&r.final_sql, gold) {
            Ok(m) => (m, None),
            Err(e) => {
                log::warn!("case {}: EM scored 0, {e}", case.case_id);
                (false, Some(e.0))
            }
        };
        let (gold_ok, ex, baseline_ex) = match ex_case(&r.final_sql, gold, &db, executor) {
            Ok(ex) => {
                let baseline_ex = if r.baseline_sql == r.final_sql {
                    ex
                } else {
                    ex_case(&r.baseline_sql, gold, &db, executor).unwrap_or(false)
                };
                (true, ex, baseline_ex)
            }
            Err(e) => {
                log::warn!("case {}: gold failed ({e}), excluded from EX and VES", case.case_id);
                (false, false, false)
            }
        };
        let ves = if ex {
            let tg = timer.seconds(&case.case_id, Side::Gold, gold, &db, executor);
            let tp = timer.seconds(&case.case_id, Side::Prediction, &r.final_sql, &db, executor);
            ves_term(true, tg, tp)
        } else {
            0.0
        };
        per_case.push(CaseScore {
            case_id: case.case_id.clone(),
            difficulty: case.difficulty,
            gold_ok,
            ex,
            baseline_ex,
            em,
            em_unsupported,
            ves,
            label: r.label(),
        });
    }

    let all = totals(per_case.iter());
    let mut difficulties: Vec<Difficulty> = per_case.iter().map(|c| c.difficulty).collect();
    difficulties.sort();
    difficulties.dedup();
    let per_difficulty = difficulties
        .into_iter()
        .map(|d| {
            let t = totals(per_case.iter().filter(|c| c.difficulty == d));
            DifficultyRow {
                difficulty: d,
                count: t.count,
                ex: percent(t.ex as f64, t.scored),
                em: percent(t.em as f64, t.count),
                ves: percent(t.ves, t.scored),
            }
        })
        .collect();

    let judged: Vec<&CaseScore> = per_case.iter().filter(|c| c.gold_ok && c.label.is_some()).collect();
    let detection = detection_scores(
        &judged
            .iter()
            .map(|c| (c.label.expect("filtered"), c.baseline_ex))
            .collect::<Vec<_>>(),
    );
    let repair = repair_success_rate(
        &judged
            .iter()
            .map(|c| (c.label.expect("filtered"), c.baseline_ex, c.ex))
            .collect::<Vec<_>>(),
    );
    let baseline_correct = per_case.iter().filter(|c| c.gold_ok && c.baseline_ex).count();
    let total = tokens.total();
    Ok(ScoreReport {
        cases: per_case.len(),
        ex_percent: percent(all.ex as f64, all.scored),
        em_percent: percent(all.em as f64, all.count),
        ves_percent: percent(all.ves, all.scored),
        baseline_ex_percent: percent(baseline_correct as f64, all.scored),
        per_difficulty,
        detection,
        repair,
        token_summary: TokenSummary {
            per_role: tokens,
            total,
            avg_per_question: if records.is_empty() {
                0.0
            } else {
                total.total() as f64 / records.len() as f64
            },
        },
        metadata: ReportMetadata {
            detection_positive_class: "baseline_erroneous".into(),
            timer: timer.describe(),
            gold_failures: all.count - all.scored,
            em_unsupported: per_case.iter().filter(|c| c.em_unsupported.is_some()).count(),
            failed_runs: records.iter().filter(|r| r.failure.is_some()).count(),
        },
        per_case,
    })
}

/// Plain-text rendering of a report.
pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14}{:>8}{:>8}{:>8}{:>8}", "", "EX%", "EM%", "VES%", "count");
    let _ = writeln!(
        out,
        "{:<14}{:>8.2}{:>8.2}{:>8.2}{:>8}",
        "overall", report.ex_percent, report.em_percent, report.ves_percent, report.cases
    );
    for row in &report.per_difficulty {
        let _ = writeln!(
            out,
            "{:<14}{:>8.2}{:>8.2}{:>8.2}{:>8}",
            row.difficulty.as_str(),
            row.ex,
            row.em,
            row.ves,
            row.count
        );
    }
    let _ = writeln!(out, "{:<14}{:>8.2}", "baseline EX%", report.baseline_ex_percent);
    let d = &report.detection;
    let _ = writeln!(
        out,
        "\ndetection     P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {} tn {}){}",
        d.precision,
        d.recall,
        d.f1,
        d.tp,
        d.fp,
        d.fn_,
        d.tn,
        if d.degenerate { "  [degenerate]" } else { "" }
    );
    let r = &report.repair;
    let _ = writeln!(
        out,
        "repair rate   {:.2}%  ({} of {}){}",
        r.percent,
        r.fixed,
        r.detected_erroneous,
        if r.empty_denominator {
            "  [no detected errors]"
        } else {
            ""
        }
    );
    let _ = writeln!(
        out,
        "\ntokens        {:>10}{:>12}{:>10}",
        "prompt", "completion", "total"
    );
    for (role, u) in &report.token_summary.per_role.0 {
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>12}{:>10}",
            role.as_str(),
            u.prompt_tokens,
            u.completion_tokens,
            u.total()
        );
    }
    let t = report.token_summary.total;
    let _ = writeln!(
        out,
        "{:<14}{:>10}{:>12}{:>10}",
        "all agents",
        t.prompt_tokens,
        t.completion_tokens,
        t.total()
    );
    let _ = writeln!(
        out,
        "avg tokens per question: {:.1}",
        report.token_summary.avg_per_question
    );
    let m = &report.metadata;
    let _ = writeln!(
        out,
        "\ntimer: {}; gold failures: {}; EM unsupported: {}; failed runs: {}",
        m.timer, m.gold_failures, m.em_unsupported, m.failed_runs
    );
    out
}
