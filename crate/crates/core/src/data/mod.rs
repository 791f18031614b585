//! Dataset records, their JSON-lines form, validation, and expansion into
//! schema units with target tables.
//!
//! On disk spans are half-open character ranges `[start, end)` into `text`;
//! in memory they are inclusive token spans relative to the text block.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::codec::{
    encode_classification, encode_event, encode_ner, encode_relation, roles_for, Annotation, CodecError,
    EventArgument, EventStructure, Region, Relation, Span, TableRole, TargetTable,
};
use crate::schema::{build_instance, CategoryLabel, SchemaError, SchemaInstance, TaskKind};
use crate::tokenizer::{tokenize, AlignmentError, TokenSequence};
use crate::vocab::Vocabulary;

pub use synth::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub task: TaskKind,
    pub text: String,
    /// For event-trigger records: event types as plain labels, plus
    /// `EventRole` entries listing the roles of each type.
    pub categories: Vec<CategoryLabel>,
    /// Missing keys mean "nothing annotated" for that category.
    pub gold: BTreeMap<CategoryLabel, Annotation>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("{field}: {source}")]
    Alignment {
        field: String,
        #[source]
        source: AlignmentError,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> RecordError {
    RecordError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One schema unit and the tables it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingUnit {
    pub instance: SchemaInstance,
    pub targets: Vec<TargetTable>,
}

fn expected_kind(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Classification => "label flag",
        TaskKind::Ner | TaskKind::EventArgument => "entity set",
        TaskKind::RelationExtraction => "relation set",
        TaskKind::EventTrigger => "event structure",
    }
}

fn kind_matches(task: TaskKind, ann: &Annotation) -> bool {
    matches!(
        (task, ann),
        (TaskKind::Classification, Annotation::LabelFlag(_))
            | (TaskKind::Ner | TaskKind::EventArgument, Annotation::EntitySet(_))
            | (TaskKind::RelationExtraction, Annotation::RelationSet(_))
            | (TaskKind::EventTrigger, Annotation::EventStructure(_))
    )
}

impl DatasetRecord {
    pub fn text_tokens(&self) -> TokenSequence {
        tokenize(&self.text)
    }

    /// Unit categories: everything except the role inventory of event records.
    pub fn unit_categories(&self) -> impl Iterator<Item = &CategoryLabel> {
        let task = self.task;
        self.categories
            .iter()
            .filter(move |c| task != TaskKind::EventTrigger || matches!(c, CategoryLabel::PlainLabel(_)))
    }

    /// Roles declared for `event_type`, in category order.
    pub fn roles_of<'a>(&'a self, event_type: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.categories.iter().filter_map(move |c| match c {
            CategoryLabel::EventRole { event_type: e, role } if e == event_type => Some(role.as_str()),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let text_len = self.text_tokens().len();
        if text_len == 0 {
            return Err(SchemaError::EmptyText.into());
        }
        if self.categories.is_empty() {
            return Err(SchemaError::NoCategories.into());
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.categories.iter().enumerate() {
            c.validate()?;
            if !seen.insert(c) {
                return Err(SchemaError::DuplicateCategory(c.to_string()).into());
            }
            let ok = match (self.task, c) {
                (TaskKind::EventTrigger, CategoryLabel::EventRole { event_type, .. }) => {
                    if !self.categories.contains(&CategoryLabel::plain(event_type)) {
                        return Err(field_err(
                            format!("categories[{i}]"),
                            format!("role declared for undeclared event type {event_type:?}"),
                        ));
                    }
                    true
                }
                _ => c.compatible_with(self.task),
            };
            if !ok {
                return Err(SchemaError::TaskMismatch {
                    task: self.task,
                    category: c.to_string(),
                }
                .into());
            }
        }

        for (cat, ann) in &self.gold {
            let field = format!("gold[{:?}]", cat.key());
            if !self.unit_categories().any(|c| c == cat) {
                return Err(field_err(field, "key is not a listed category"));
            }
            if !kind_matches(self.task, ann) {
                return Err(field_err(field, format!("expected a {}", expected_kind(self.task))));
            }
            let check = |s: &Span| -> Result<(), RecordError> {
                if s.start > s.end || s.end >= text_len {
                    Err(field_err(
                        field.clone(),
                        format!("span {}..={} outside the {text_len}-token text", s.start, s.end),
                    ))
                } else {
                    Ok(())
                }
            };
            match ann {
                Annotation::LabelFlag(_) => {}
                Annotation::EntitySet(spans) => spans.iter().try_for_each(check)?,
                Annotation::RelationSet(rels) => rels.iter().try_for_each(|r| {
                    check(&r.head)?;
                    check(&r.tail)
                })?,
                Annotation::EventStructure(ev) => {
                    check(&ev.trigger)?;
                    let event_type = cat.components()[0];
                    for arg in &ev.args {
                        check(&arg.span)?;
                        if !self.roles_of(event_type).any(|r| r == arg.role) {
                            return Err(field_err(
                                field.clone(),
                                format!("role {:?} is not declared for {event_type:?}", arg.role),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Surface text of an inclusive text-token span.
    pub fn span_text(&self, span: Span) -> Result<String, AlignmentError> {
        Ok(self.text_tokens().text_of_tokens(span.start, span.end)?.to_string())
    }

    /// Stage-two units for an event of `event_type` triggered at `trigger`.
    pub fn argument_instances(&self, event_type: &str, trigger: Span) -> Result<Vec<SchemaInstance>, RecordError> {
        let trigger_text = self.span_text(trigger).map_err(|source| RecordError::Alignment {
            field: "trigger".into(),
            source,
        })?;
        self.roles_of(event_type)
            .map(|role| {
                let cat = CategoryLabel::event_role_with_trigger(event_type, &trigger_text, role);
                Ok(build_instance(TaskKind::EventArgument, cat, &self.text)?)
            })
            .collect()
    }

    /// Every schema unit of the record with its gold target tables.
    pub fn expand(&self) -> Result<Vec<TrainingUnit>, RecordError> {
        self.validate()?;
        let mut units = Vec::new();
        for cat in self.unit_categories() {
            let instance = build_instance(self.task, cat.clone(), &self.text)?;
            let gold = self.gold.get(cat);
            match (self.task, gold) {
                (TaskKind::Classification, g) => {
                    let applies = matches!(g, Some(Annotation::LabelFlag(true)));
                    let t = encode_classification(applies, &instance);
                    units.push(TrainingUnit { instance, targets: vec![t] });
                }
                (TaskKind::Ner | TaskKind::EventArgument, g) => {
                    let spans = match g {
                        Some(Annotation::EntitySet(s)) => s.clone(),
                        _ => BTreeSet::new(),
                    };
                    let t = encode_ner(&spans, &instance)?;
                    let t = if self.task == TaskKind::EventArgument {
                        retag(t, TableRole::Argument)
                    } else {
                        t
                    };
                    units.push(TrainingUnit { instance, targets: vec![t] });
                }
                (TaskKind::RelationExtraction, g) => {
                    let rels = match g {
                        Some(Annotation::RelationSet(r)) => r.clone(),
                        _ => BTreeSet::new(),
                    };
                    let (h, t, c) = encode_relation(&rels, &instance)?;
                    units.push(TrainingUnit {
                        instance,
                        targets: vec![h, t, c],
                    });
                }
                (TaskKind::EventTrigger, Some(Annotation::EventStructure(ev))) => {
                    let args = self.argument_instances(cat.components()[0], ev.trigger)?;
                    let (trigger, arg_tables) = encode_event(ev, &instance, &args)?;
                    units.push(TrainingUnit {
                        instance,
                        targets: vec![trigger],
                    });
                    for (instance, t) in args.into_iter().zip(arg_tables) {
                        units.push(TrainingUnit { instance, targets: vec![t] });
                    }
                }
                (TaskKind::EventTrigger, _) => {
                    let region = Region::for_instance(&instance);
                    let t = TargetTable::new(instance.len(), roles_for(self.task)[0], region);
                    units.push(TrainingUnit { instance, targets: vec![t] });
                }
            }
        }
        Ok(units)
    }

    pub fn to_json(&self) -> Result<Value, RecordError> {
        let seq = self.text_tokens();
        let span = |field: &str, s: &Span| -> Result<Value, RecordError> {
            let (cs, ce) = seq
                .char_span_of_token_span(s.start, s.end)
                .map_err(|source| RecordError::Alignment {
                    field: field.to_string(),
                    source,
                })?;
            Ok(json!([cs, ce]))
        };
        let mut gold = Map::new();
        for (cat, ann) in &self.gold {
            let key = cat.key();
            let field = format!("gold[{key:?}]");
            let value = match ann {
                Annotation::LabelFlag(b) => json!({ "applies": b }),
                Annotation::EntitySet(spans) => {
                    json!({ "spans": spans.iter().map(|s| span(&field, s)).collect::<Result<Vec<_>, _>>()? })
                }
                Annotation::RelationSet(rels) => {
                    let rels = rels
                        .iter()
                        .map(|r| Ok(json!({ "head": span(&field, &r.head)?, "tail": span(&field, &r.tail)? })))
                        .collect::<Result<Vec<_>, RecordError>>()?;
                    json!({ "relations": rels })
                }
                Annotation::EventStructure(ev) => {
                    let args = ev
                        .args
                        .iter()
                        .map(|a| Ok(json!({ "role": a.role, "span": span(&field, &a.span)? })))
                        .collect::<Result<Vec<_>, RecordError>>()?;
                    json!({ "trigger": span(&field, &ev.trigger)?, "args": args })
                }
            };
            gold.insert(key, value);
        }
        Ok(json!({
            "task": self.task,
            "text": self.text,
            "categories": self.categories.iter().map(|c| c.key()).collect::<Vec<_>>(),
            "gold": gold,
        }))
    }

    /// Parses and validates one record object.
    pub fn from_json(value: &Value) -> Result<Self, RecordError> {
        let obj = value.as_object().ok_or_else(|| field_err("record", "expected a JSON object"))?;
        for k in obj.keys() {
            if !matches!(k.as_str(), "task" | "text" | "categories" | "gold" | "format_version") {
                return Err(field_err(k.clone(), "unknown field"));
            }
        }
        if let Some(v) = obj.get("format_version") {
            if v.as_u64() != Some(FORMAT_VERSION) {
                return Err(field_err("format_version", format!("unsupported version {v}")));
            }
        }
        let task_value = obj.get("task").ok_or_else(|| field_err("task", "missing"))?;
        let task: TaskKind =
            serde_json::from_value(task_value.clone()).map_err(|e| field_err("task", e.to_string()))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| field_err("text", "missing or not a string"))?
            .to_string();
        let categories = obj
            .get("categories")
            .and_then(Value::as_array)
            .ok_or_else(|| field_err("categories", "missing or not an array"))?
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let key = c.as_str().ok_or_else(|| field_err(format!("categories[{i}]"), "not a string"))?;
                CategoryLabel::parse_key(task, key).map_err(|e| field_err(format!("categories[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let seq = tokenize(&text);
        let mut gold = BTreeMap::new();
        let gold_obj = match obj.get("gold") {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(field_err("gold", "not an object")),
        };
        for (key, ann) in &gold_obj {
            let field = format!("gold[{key:?}]");
            let cat = CategoryLabel::parse_key(task, key).map_err(|e| field_err(&field, e.to_string()))?;
            let ann = parse_annotation(task, ann, &seq, &field)?;
            gold.insert(cat, ann);
        }
        let record = DatasetRecord {
            task,
            text,
            categories,
            gold,
        };
        record.validate()?;
        Ok(record)
    }
}

fn retag(t: TargetTable, role: TableRole) -> TargetTable {
    TargetTable::from_cells(t.size(), role, t.region(), t.cells().to_vec()).expect("same size")
}

pub const FORMAT_VERSION: u64 = 1;

fn parse_span(v: &Value, seq: &TokenSequence, field: &str) -> Result<Span, RecordError> {
    let pair = v
        .as_array()
        .filter(|a| a.len() == 2)
        .and_then(|a| Some((a[0].as_u64()?, a[1].as_u64()?)))
        .ok_or_else(|| field_err(field, "span must be [char_start, char_end]"))?;
    let (cs, ce) = (pair.0 as usize, pair.1 as usize);
    let (ts, te) = seq
        .token_span_of_char_span(cs, ce)
        .map_err(|source| RecordError::Alignment {
            field: field.to_string(),
            source,
        })?;
    Ok(Span::new(ts, te))
}

fn parse_annotation(task: TaskKind, v: &Value, seq: &TokenSequence, field: &str) -> Result<Annotation, RecordError> {
    let obj = v.as_object().ok_or_else(|| field_err(field, "annotation must be an object"))?;
    let get = |k: &str| obj.get(k).ok_or_else(|| field_err(format!("{field}.{k}"), "missing"));
    let array = |k: &str| -> Result<&Vec<Value>, RecordError> {
        get(k)?.as_array().ok_or_else(|| field_err(format!("{field}.{k}"), "not an array"))
    };
    let only = |allowed: &[&str]| -> Result<(), RecordError> {
        match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(field_err(format!("{field}.{k}"), "unknown field")),
            None => Ok(()),
        }
    };
    Ok(match task {
        TaskKind::Classification => {
            only(&["applies"])?;
            let b = get("applies")?
                .as_bool()
                .ok_or_else(|| field_err(format!("{field}.applies"), "not a boolean"))?;
            Annotation::LabelFlag(b)
        }
        TaskKind::Ner | TaskKind::EventArgument => {
            only(&["spans"])?;
            let spans = array("spans")?
                .iter()
                .enumerate()
                .map(|(i, s)| parse_span(s, seq, &format!("{field}.spans[{i}]")))
                .collect::<Result<_, _>>()?;
            Annotation::EntitySet(spans)
        }
        TaskKind::RelationExtraction => {
            only(&["relations"])?;
            let rels = array("relations")?
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let f = format!("{field}.relations[{i}]");
                    let head = r.get("head").ok_or_else(|| field_err(format!("{f}.head"), "missing"))?;
                    let tail = r.get("tail").ok_or_else(|| field_err(format!("{f}.tail"), "missing"))?;
                    Ok(Relation {
                        head: parse_span(head, seq, &format!("{f}.head"))?,
                        tail: parse_span(tail, seq, &format!("{f}.tail"))?,
                    })
                })
                .collect::<Result<_, RecordError>>()?;
            Annotation::RelationSet(rels)
        }
        TaskKind::EventTrigger => {
            only(&["trigger", "args"])?;
            let trigger = parse_span(get("trigger")?, seq, &format!("{field}.trigger"))?;
            let args = match obj.get("args") {
                None => BTreeSet::new(),
                Some(_) => array("args")?
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let f = format!("{field}.args[{i}]");
                        let role = a
                            .get("role")
                            .and_then(Value::as_str)
                            .ok_or_else(|| field_err(format!("{f}.role"), "missing or not a string"))?;
                        let span = a.get("span").ok_or_else(|| field_err(format!("{f}.span"), "missing"))?;
                        Ok(EventArgument {
                            role: role.to_string(),
                            span: parse_span(span, seq, &format!("{f}.span"))?,
                        })
                    })
                    .collect::<Result<_, RecordError>>()?,
            };
            Annotation::EventStructure(EventStructure { trigger, args })
        }
    })
}

/// Parses one JSON line; `line` is only used for error messages.
pub fn parse_record_line(text: &str, line: usize) -> Result<DatasetRecord, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|source| DataError::Json { line, source })?;
    DatasetRecord::from_json(&value).map_err(|source| DataError::Record { line, source })
}

/// Parses a whole JSON-lines document. Blank lines are skipped.
pub fn parse_dataset(content: &str) -> Result<Vec<DatasetRecord>, DataError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record_line(l, i + 1))
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DataError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn dataset_to_string(records: &[DatasetRecord]) -> Result<String, DataError> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        let v = r.to_json().map_err(|source| DataError::Record { line: i + 1, source })?;
        out.push_str(&v.to_string());
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(records: &[DatasetRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    Ok(fs::write(path, dataset_to_string(records)?)?)
}

/// Vocabulary over every unit token of every expanded record.
pub fn build_vocab(records: &[DatasetRecord]) -> Result<Vocabulary, RecordError> {
    let mut words = BTreeSet::new();
    for r in records {
        for u in r.expand()? {
            words.extend(u.instance.tokens.tokens.into_iter().map(|t| t.text));
        }
    }
    Ok(Vocabulary::build(words.iter().map(String::as_str)))
}

/// Seeded split into `(train, heldout)`, with `ceil(n * fraction)` held out.
/// Both parts keep the original record order.
pub fn split_holdout(records: &[DatasetRecord], fraction: f64, seed: u64) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    let n = records.len();
    let k = ((n as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<usize> = idx[..k].iter().copied().collect();
    let mut train = Vec::with_capacity(n - k);
    let mut heldout = Vec::with_capacity(k);
    for (i, r) in records.iter().enumerate() {
        if held.contains(&i) {
            heldout.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (train, heldout)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NER_LINE: &str =
        r#"{"task":"ner","text":"John works at Acme Corp","categories":["person","org"],"gold":{"person":{"spans":[[0,4]]},"org":{"spans":[[14,23]]}}}"#;

    #[test]
    fn parses_char_spans_into_token_spans() {
        let r = parse_record_line(NER_LINE, 1).unwrap();
        assert_eq!(
            r.gold[&CategoryLabel::entity("org")],
            Annotation::EntitySet([Span::new(3, 4)].into())
        );
        let back = parse_record_line(&r.to_json().unwrap().to_string(), 1).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn errors_name_line_and_field() {
        let bad = NER_LINE.replace("[14,23]", "[14,40]");
        let err = parse_dataset(&format!("{NER_LINE}\n\n{bad}\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 3:"), "{msg}");
        assert!(msg.contains("gold[\"org\"].spans[0]"), "{msg}");
        assert!(matches!(
            err,
            DataError::Record {
                source: RecordError::Alignment { .. },
                ..
            }
        ));

        let typo = NER_LINE.replace("\"text\"", "\"txt\"");
        assert!(parse_record_line(&typo, 1).unwrap_err().to_string().contains("txt"));
        assert!(matches!(parse_record_line("{", 4), Err(DataError::Json { line: 4, .. })));
    }

    #[test]
    fn empty_document_is_empty() {
        assert!(parse_dataset("").unwrap().is_empty());
    }

    #[test]
    fn event_records_expand_into_two_stages() {
        let line = r#"{"task":"event_trigger","text":"rebels attacked the town","categories":["attack","attack;attacker","attack;target"],"gold":{"attack":{"trigger":[7,15],"args":[{"role":"attacker","span":[0,6]}]}}}"#;
        let r = parse_record_line(line, 1).unwrap();
        let units = r.expand().unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[0].instance.task, TaskKind::EventTrigger);
        assert_eq!(
            units[1].instance.category,
            CategoryLabel::event_role_with_trigger("attack", "attacked", "attacker")
        );
        assert_eq!(units[1].targets[0].count(), 1);
        assert_eq!(units[2].targets[0].count(), 0);

        let undeclared = line.replace(r#""role":"attacker""#, r#""role":"victim""#);
        assert!(parse_record_line(&undeclared, 1).is_err());
    }

    #[test]
    fn holdout_split_is_seeded_and_complete() {
        let recs: Vec<DatasetRecord> = (0..10)
            .map(|i| DatasetRecord {
                task: TaskKind::Classification,
                text: format!("t{i}"),
                categories: vec![CategoryLabel::plain("x")],
                gold: BTreeMap::new(),
            })
            .collect();
        let (a, b) = split_holdout(&recs, 0.2, 3);
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split_holdout(&recs, 0.2, 3), (a, b));
    }
}
