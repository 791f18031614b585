//! Structure tables and their codecs.
//!
//! A structure table is an `l x l` grid over one schema unit. Row `r` is a
//! start (head) position, column `c` an end (tail) position. Gold annotations
//! are encoded into boolean target tables; real-valued score tables decode
//! back into annotations through the activated cells, the locating
//! designators.
//!
//! Annotation spans are inclusive token ranges relative to the raw-text block
//! of a unit, so one annotation applies unchanged to units whose category
//! segments differ in length. Table coordinates are unit coordinates: a text
//! span `(s, e)` lands on cell `(s + offset, e + offset)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{CategoryLabel, SchemaInstance, TaskKind};

/// Logit used for "on" cells when gold targets stand in for model scores.
pub const GOLD_LOGIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableRole {
    Single,
    HeadEntity,
    TailEntity,
    Coupling,
    Trigger,
    Argument,
}

impl TableRole {
    /// Span roles require `row <= col`; the coupling table pairs boundaries of
    /// two different entities that may appear in either order.
    pub fn is_triangular(self) -> bool {
        self != TableRole::Coupling
    }
}

/// The cells a table may activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Only `(0, 0)`, the `[CLS]` head/tail intersection.
    Cls,
    /// Rows and columns inside the raw-text block starting at `start`.
    TextBlock { start: usize },
}

impl Region {
    pub fn for_instance(instance: &SchemaInstance) -> Self {
        match instance.task {
            TaskKind::Classification => Region::Cls,
            _ => Region::TextBlock {
                start: instance.text_token_offset,
            },
        }
    }

    fn admits(self, row: usize, col: usize) -> bool {
        match self {
            Region::Cls => row == 0 && col == 0,
            Region::TextBlock { start } => row >= start && col >= start,
        }
    }
}

/// An `l x l` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTable<T> {
    size: usize,
    role: TableRole,
    region: Region,
    cells: Vec<T>,
}

pub type ScoreTable = StructureTable<f64>;
pub type TargetTable = StructureTable<bool>;

impl<T: Copy + Default> StructureTable<T> {
    pub fn new(size: usize, role: TableRole, region: Region) -> Self {
        StructureTable {
            size,
            role,
            region,
            cells: vec![T::default(); size * size],
        }
    }
}

impl<T: Copy> StructureTable<T> {
    /// Wraps row-major cells. Returns `None` unless `cells.len() == size * size`.
    pub fn from_cells(size: usize, role: TableRole, region: Region, cells: Vec<T>) -> Option<Self> {
        (cells.len() == size * size).then_some(StructureTable {
            size,
            role,
            region,
            cells,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn role(&self) -> TableRole {
        self.role
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.cells[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.cells[row * self.size + col] = value;
    }

    /// Whether `(row, col)` may hold a designator for this table's role.
    pub fn is_legal(&self, row: usize, col: usize) -> bool {
        row < self.size
            && col < self.size
            && self.region.admits(row, col)
            && (!self.role.is_triangular() || row <= col)
    }
}

impl TargetTable {
    /// Active cells in row-major order.
    pub fn designators(&self) -> Vec<LocatingDesignator> {
        let mut out = Vec::new();
        for row in 0..self.size {
            for col in 0..self.size {
                if self.get(row, col) {
                    out.push(LocatingDesignator {
                        row,
                        col,
                        table_role: self.role,
                    });
                }
            }
        }
        out
    }

    /// Gold targets as saturated logits: `+GOLD_LOGIT` on, `-GOLD_LOGIT` off.
    pub fn to_logits(&self) -> ScoreTable {
        StructureTable {
            size: self.size,
            role: self.role,
            region: self.region,
            cells: self
                .cells
                .iter()
                .map(|&on| if on { GOLD_LOGIT } else { -GOLD_LOGIT })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocatingDesignator {
    pub row: usize,
    pub col: usize,
    pub table_role: TableRole,
}

/// Inclusive token range relative to the raw-text block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub head: Span,
    pub tail: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventArgument {
    pub role: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventStructure {
    pub trigger: Span,
    pub args: BTreeSet<EventArgument>,
}

/// Gold or predicted structure for one category of one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Annotation {
    LabelFlag(bool),
    EntitySet(BTreeSet<Span>),
    RelationSet(BTreeSet<Relation>),
    EventStructure(EventStructure),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("span {start}..={end} is inverted or outside the {text_len}-token text")]
    SpanOutOfText {
        start: usize,
        end: usize,
        text_len: usize,
    },
    #[error("expected a {expected} unit, got {found}")]
    WrongTask { expected: TaskKind, found: TaskKind },
    #[error("no argument unit for roles {0:?}")]
    MissingRoles(Vec<String>),
    #[error("argument unit category {0} does not belong to this event")]
    ForeignArgumentUnit(String),
    #[error("tables differ in size or region")]
    TableMismatch,
}

fn check_task(instance: &SchemaInstance, expected: TaskKind) -> Result<(), CodecError> {
    if instance.task != expected {
        return Err(CodecError::WrongTask {
            expected,
            found: instance.task,
        });
    }
    Ok(())
}

fn check_span(span: Span, instance: &SchemaInstance) -> Result<(), CodecError> {
    if span.start > span.end || span.end >= instance.text_len() {
        return Err(CodecError::SpanOutOfText {
            start: span.start,
            end: span.end,
            text_len: instance.text_len(),
        });
    }
    Ok(())
}

fn span_table<'a>(
    spans: impl IntoIterator<Item = &'a Span>,
    instance: &SchemaInstance,
    role: TableRole,
) -> Result<TargetTable, CodecError> {
    let offset = instance.text_token_offset;
    let mut table = TargetTable::new(instance.len(), role, Region::for_instance(instance));
    for &span in spans {
        check_span(span, instance)?;
        table.set(span.start + offset, span.end + offset, true);
    }
    Ok(table)
}

/// The tables a unit of `task` produces, in encoding order.
pub fn roles_for(task: TaskKind) -> &'static [TableRole] {
    match task {
        TaskKind::Classification | TaskKind::Ner => &[TableRole::Single],
        TaskKind::RelationExtraction => &[TableRole::HeadEntity, TableRole::TailEntity, TableRole::Coupling],
        TaskKind::EventTrigger => &[TableRole::Trigger],
        TaskKind::EventArgument => &[TableRole::Argument],
    }
}

pub fn encode_classification(applies: bool, instance: &SchemaInstance) -> TargetTable {
    let mut table = TargetTable::new(instance.len(), TableRole::Single, Region::Cls);
    table.set(0, 0, applies);
    table
}

pub fn encode_ner(spans: &BTreeSet<Span>, instance: &SchemaInstance) -> Result<TargetTable, CodecError> {
    span_table(spans, instance, TableRole::Single)
}

/// Head, tail, and coupling tables. Each relation activates `(s_h, s_t)` and
/// `(e_h, e_t)` in the coupling table.
pub fn encode_relation(
    relations: &BTreeSet<Relation>,
    instance: &SchemaInstance,
) -> Result<(TargetTable, TargetTable, TargetTable), CodecError> {
    check_task(instance, TaskKind::RelationExtraction)?;
    let head = span_table(relations.iter().map(|r| &r.head), instance, TableRole::HeadEntity)?;
    let tail = span_table(relations.iter().map(|r| &r.tail), instance, TableRole::TailEntity)?;
    let offset = instance.text_token_offset;
    let mut coupling = TargetTable::new(instance.len(), TableRole::Coupling, Region::for_instance(instance));
    for r in relations {
        coupling.set(r.head.start + offset, r.tail.start + offset, true);
        coupling.set(r.head.end + offset, r.tail.end + offset, true);
    }
    Ok((head, tail, coupling))
}

/// Two-stage event tables: one trigger table, then one argument table per
/// argument unit. Every argument role must have a unit; units for roles
/// without arguments get empty tables.
pub fn encode_event(
    event: &EventStructure,
    trigger_instance: &SchemaInstance,
    arg_instances: &[SchemaInstance],
) -> Result<(TargetTable, Vec<TargetTable>), CodecError> {
    check_task(trigger_instance, TaskKind::EventTrigger)?;
    let trigger = span_table([&event.trigger], trigger_instance, TableRole::Trigger)?;

    let mut by_role: BTreeMap<&str, BTreeSet<Span>> = BTreeMap::new();
    for arg in &event.args {
        by_role.entry(&arg.role).or_default().insert(arg.span);
    }
    let mut covered = BTreeSet::new();
    let mut arg_tables = Vec::with_capacity(arg_instances.len());
    for inst in arg_instances {
        check_task(inst, TaskKind::EventArgument)?;
        let role = match &inst.category {
            CategoryLabel::EventRoleWithTrigger { role, .. } => role.as_str(),
            other => return Err(CodecError::ForeignArgumentUnit(other.to_string())),
        };
        covered.insert(role);
        let empty = BTreeSet::new();
        let spans = by_role.get(role).unwrap_or(&empty);
        arg_tables.push(span_table(spans, inst, TableRole::Argument)?);
    }
    let missing: Vec<String> = by_role
        .keys()
        .filter(|r| !covered.contains(*r))
        .map(|r| r.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CodecError::MissingRoles(missing));
    }
    Ok((trigger, arg_tables))
}

/// Logit equivalent of a probability threshold: `sigmoid(s) > t` iff `s > logit(t)`.
fn threshold_logit(threshold: f64) -> f64 {
    if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else if threshold >= 1.0 {
        f64::INFINITY
    } else {
        (threshold / (1.0 - threshold)).ln()
    }
}

/// All legal cells whose probability exceeds `threshold`, row-major.
pub fn decode_table(scores: &ScoreTable, threshold: f64) -> Vec<LocatingDesignator> {
    let cut = threshold_logit(threshold);
    let mut out = Vec::new();
    let (rows, cols) = match scores.region {
        Region::Cls => (0..scores.size.min(1), 0..scores.size.min(1)),
        Region::TextBlock { start } => (start..scores.size, start..scores.size),
    };
    for row in rows {
        let first_col = if scores.role.is_triangular() {
            row.max(cols.start)
        } else {
            cols.start
        };
        for col in first_col..cols.end {
            if scores.get(row, col) > cut {
                out.push(LocatingDesignator {
                    row,
                    col,
                    table_role: scores.role,
                });
            }
        }
    }
    out
}

fn text_offset(table: &ScoreTable) -> usize {
    match table.region {
        Region::Cls => 0,
        Region::TextBlock { start } => start,
    }
}

pub fn decode_classification(scores: &ScoreTable, threshold: f64) -> bool {
    scores.size > 0 && scores.get(0, 0) > threshold_logit(threshold)
}

pub fn decode_spans(scores: &ScoreTable, threshold: f64) -> BTreeSet<Span> {
    let offset = text_offset(scores);
    decode_table(scores, threshold)
        .into_iter()
        .map(|d| Span::new(d.row - offset, d.col - offset))
        .collect()
}

pub fn decode_ner(scores: &ScoreTable, threshold: f64) -> Annotation {
    Annotation::EntitySet(decode_spans(scores, threshold))
}

/// Pairs every decoded head span with every decoded tail span and keeps the
/// pairs whose two coupling cells are both active.
pub fn decode_relation(
    head: &ScoreTable,
    tail: &ScoreTable,
    coupling: &ScoreTable,
    threshold: f64,
) -> Result<BTreeSet<Relation>, CodecError> {
    if head.size != tail.size || head.size != coupling.size || head.region != coupling.region || tail.region != coupling.region {
        return Err(CodecError::TableMismatch);
    }
    let heads = decode_spans(head, threshold);
    let tails = decode_spans(tail, threshold);
    let links: BTreeSet<(usize, usize)> = decode_table(coupling, threshold)
        .into_iter()
        .map(|d| (d.row, d.col))
        .collect();
    let offset = text_offset(coupling);
    let mut out = BTreeSet::new();
    for &h in &heads {
        for &t in &tails {
            if links.contains(&(h.start + offset, t.start + offset))
                && links.contains(&(h.end + offset, t.end + offset))
            {
                out.insert(Relation { head: h, tail: t });
            }
        }
    }
    Ok(out)
}

/// Assembles an event from a trigger and one decoded table per role.
pub fn decode_event<'a>(
    trigger: Span,
    arg_tables: impl IntoIterator<Item = (&'a str, &'a ScoreTable)>,
    threshold: f64,
) -> EventStructure {
    let mut args = BTreeSet::new();
    for (role, table) in arg_tables {
        for span in decode_spans(table, threshold) {
            args.insert(EventArgument {
                role: role.to_string(),
                span,
            });
        }
    }
    EventStructure { trigger, args }
}

/// Whether `decode(encode(relations))` would return extra pairs.
///
/// The decoder returns every head/tail pair whose boundary cells are coupled,
/// so a gold set is recoverable exactly iff no foreign pair is fully coupled.
pub fn relations_ambiguous(relations: &BTreeSet<Relation>) -> bool {
    let heads: BTreeSet<Span> = relations.iter().map(|r| r.head).collect();
    let tails: BTreeSet<Span> = relations.iter().map(|r| r.tail).collect();
    let links: BTreeSet<(usize, usize)> = relations
        .iter()
        .flat_map(|r| [(r.head.start, r.tail.start), (r.head.end, r.tail.end)])
        .collect();
    heads.iter().any(|&head| {
        tails.iter().any(|&tail| {
            links.contains(&(head.start, tail.start))
                && links.contains(&(head.end, tail.end))
                && !relations.contains(&Relation { head, tail })
        })
    })
}
