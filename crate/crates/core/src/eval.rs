//! Decoding whole records and scoring them against gold with exact-match
//! micro precision, recall and F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    decode_classification, decode_relation, decode_spans, relations_ambiguous, roles_for, Annotation, Region,
    Relation, ScoreTable, Span, TargetTable,
};
use crate::data::{DatasetRecord, RecordError};
use crate::model::{ModelError, UbertModel};
use crate::schema::{build_instance, CategoryLabel, SchemaInstance, TaskKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: PredictError,
    },
}

/// Anything that produces score tables for a schema unit.
pub trait TableScorer: Sync {
    /// One table per role of `roles_for(instance.task)`, in that order.
    fn score(&self, instance: &SchemaInstance) -> Result<Vec<ScoreTable>, ModelError>;
}

impl TableScorer for UbertModel {
    fn score(&self, instance: &SchemaInstance) -> Result<Vec<ScoreTable>, ModelError> {
        self.score_tables(instance)
    }
}

/// Scores units with their gold targets as `+-GOLD_LOGIT` logits. Units with
/// no gold entry, such as argument units for a wrong trigger, score all
/// negative.
#[derive(Debug, Default)]
pub struct GoldScorer {
    tables: HashMap<(TaskKind, CategoryLabel, String), Vec<TargetTable>>,
}

impl GoldScorer {
    /// Records sharing task and text should agree on their gold; later
    /// records win otherwise.
    pub fn new(records: &[DatasetRecord]) -> Result<Self, RecordError> {
        let mut tables = HashMap::new();
        for r in records {
            for u in r.expand()? {
                tables.insert((u.instance.task, u.instance.category, u.instance.text), u.targets);
            }
        }
        Ok(GoldScorer { tables })
    }
}

impl TableScorer for GoldScorer {
    fn score(&self, instance: &SchemaInstance) -> Result<Vec<ScoreTable>, ModelError> {
        let key = (instance.task, instance.category.clone(), instance.text.clone());
        Ok(match self.tables.get(&key) {
            Some(targets) => targets.iter().map(TargetTable::to_logits).collect(),
            None => roles_for(instance.task)
                .iter()
                .map(|&role| TargetTable::new(instance.len(), role, Region::for_instance(instance)).to_logits())
                .collect(),
        })
    }
}

/// One atomic extracted fact; precision and recall count these.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fact {
    Label(CategoryLabel),
    Entity(CategoryLabel, Span),
    Relation(CategoryLabel, Relation),
    Trigger(String, Span),
    Argument {
        event_type: String,
        trigger: Span,
        role: String,
        span: Span,
    },
}

impl Fact {
    pub fn task(&self) -> TaskKind {
        match self {
            Fact::Label(_) => TaskKind::Classification,
            Fact::Entity(CategoryLabel::EntityType(_), _) => TaskKind::Ner,
            Fact::Entity(..) | Fact::Argument { .. } => TaskKind::EventArgument,
            Fact::Relation(..) => TaskKind::RelationExtraction,
            Fact::Trigger(..) => TaskKind::EventTrigger,
        }
    }
}

pub fn gold_facts(record: &DatasetRecord) -> BTreeSet<Fact> {
    let mut out = BTreeSet::new();
    for (cat, ann) in &record.gold {
        match ann {
            Annotation::LabelFlag(true) => {
                out.insert(Fact::Label(cat.clone()));
            }
            Annotation::LabelFlag(false) => {}
            Annotation::EntitySet(spans) => out.extend(spans.iter().map(|&s| Fact::Entity(cat.clone(), s))),
            Annotation::RelationSet(rels) => out.extend(rels.iter().map(|&r| Fact::Relation(cat.clone(), r))),
            Annotation::EventStructure(ev) => {
                let event_type = cat.components()[0].to_string();
                out.insert(Fact::Trigger(event_type.clone(), ev.trigger));
                out.extend(ev.args.iter().map(|a| Fact::Argument {
                    event_type: event_type.clone(),
                    trigger: ev.trigger,
                    role: a.role.clone(),
                    span: a.span,
                }));
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::schema::SchemaError> for PredictError {
    fn from(e: crate::schema::SchemaError) -> Self {
        PredictError::Record(e.into())
    }
}

impl From<crate::codec::CodecError> for PredictError {
    fn from(e: crate::codec::CodecError) -> Self {
        PredictError::Record(e.into())
    }
}

/// Decodes every unit of `record`. Events run in two stages: each decoded
/// trigger spawns argument units carrying its text.
pub fn predict_facts(
    scorer: &impl TableScorer,
    record: &DatasetRecord,
    threshold: f64,
) -> Result<BTreeSet<Fact>, PredictError> {
    record.validate()?;
    let mut out = BTreeSet::new();
    for cat in record.unit_categories() {
        let inst = build_instance(record.task, cat.clone(), &record.text)?;
        let tables = scorer.score(&inst)?;
        match record.task {
            TaskKind::Classification => {
                if decode_classification(&tables[0], threshold) {
                    out.insert(Fact::Label(cat.clone()));
                }
            }
            TaskKind::Ner | TaskKind::EventArgument => {
                out.extend(decode_spans(&tables[0], threshold).into_iter().map(|s| Fact::Entity(cat.clone(), s)));
            }
            TaskKind::RelationExtraction => {
                let rels = decode_relation(&tables[0], &tables[1], &tables[2], threshold)?;
                out.extend(rels.into_iter().map(|r| Fact::Relation(cat.clone(), r)));
            }
            TaskKind::EventTrigger => {
                let event_type = cat.components()[0];
                for trigger in decode_spans(&tables[0], threshold) {
                    out.insert(Fact::Trigger(event_type.to_string(), trigger));
                    let arg_units = record.argument_instances(event_type, trigger)?;
                    for unit in &arg_units {
                        let role = match &unit.category {
                            CategoryLabel::EventRoleWithTrigger { role, .. } => role.clone(),
                            _ => unreachable!("argument units carry the trigger"),
                        };
                        let table = scorer.score(unit)?.remove(0);
                        out.extend(decode_spans(&table, threshold).into_iter().map(|span| Fact::Argument {
                            event_type: event_type.to_string(),
                            trigger,
                            role: role.clone(),
                            span,
                        }));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact-match set precision, recall and F1. Empty predictions give
/// precision 0, empty gold gives recall 0.
pub fn span_f1<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> (f64, f64, f64) {
    let tp = pred.intersection(gold).count();
    let m = TaskMetrics::from_counts(tp, pred.len(), gold.len());
    (m.precision, m.recall, m.f1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl TaskMetrics {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(tp, predicted), ratio(tp, gold));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        TaskMetrics {
            precision: p,
            recall: r,
            f1,
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    /// Keyed by task name.
    pub tasks: BTreeMap<String, TaskMetrics>,
    /// Fraction of (record, label) classification decisions that are right.
    pub classification_accuracy: Option<f64>,
    /// Fraction of gold relation sets whose coupling tables are ambiguous.
    pub relation_ambiguity_rate: Option<f64>,
    pub loss_curve: Vec<f64>,
}

impl EvalReport {
    pub fn f1(&self, task: TaskKind) -> Option<f64> {
        self.tasks.get(task.name()).map(|m| m.f1)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records {}", self.records)?;
        for (task, m) in &self.tasks {
            writeln!(
                f,
                "task {task} precision {:.4} recall {:.4} f1 {:.4} tp {} predicted {} gold {}",
                m.precision, m.recall, m.f1, m.true_positives, m.predicted, m.gold
            )?;
        }
        if let Some(a) = self.classification_accuracy {
            writeln!(f, "classification_accuracy {a:.4}")?;
        }
        if let Some(a) = self.relation_ambiguity_rate {
            writeln!(f, "relation_ambiguity_rate {a:.4}")?;
        }
        for (i, l) in self.loss_curve.iter().enumerate() {
            writeln!(f, "epoch {} loss {l:.6}", i + 1)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    counts: BTreeMap<TaskKind, (usize, usize, usize)>,
    label_pairs: usize,
    label_correct: usize,
    relation_sets: usize,
    ambiguous_sets: usize,
}

fn tally(record: &DatasetRecord, pred: &BTreeSet<Fact>) -> Tally {
    let gold = gold_facts(record);
    let mut t = Tally::default();
    t.counts.entry(record.task).or_default();
    for f in pred {
        let c = t.counts.entry(f.task()).or_default();
        c.1 += 1;
        if gold.contains(f) {
            c.0 += 1;
        }
    }
    for f in &gold {
        t.counts.entry(f.task()).or_default().2 += 1;
    }
    if record.task == TaskKind::Classification {
        for cat in record.unit_categories() {
            let fact = Fact::Label(cat.clone());
            t.label_pairs += 1;
            t.label_correct += usize::from(pred.contains(&fact) == gold.contains(&fact));
        }
    }
    for ann in record.gold.values() {
        if let Annotation::RelationSet(rels) = ann {
            t.relation_sets += 1;
            t.ambiguous_sets += usize::from(relations_ambiguous(rels));
        }
    }
    t
}

/// Decodes every record (in parallel) and aggregates micro metrics per task.
pub fn evaluate(scorer: &impl TableScorer, records: &[DatasetRecord], threshold: f64) -> Result<EvalReport, EvalError> {
    let tallies = records
        .par_iter()
        .enumerate()
        .map(|(index, r)| {
            let pred = predict_facts(scorer, r, threshold).map_err(|source| EvalError::Record { index, source })?;
            Ok(tally(r, &pred))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut total = Tally::default();
    for t in tallies {
        for (task, (tp, p, g)) in t.counts {
            let c = total.counts.entry(task).or_default();
            c.0 += tp;
            c.1 += p;
            c.2 += g;
        }
        total.label_pairs += t.label_pairs;
        total.label_correct += t.label_correct;
        total.relation_sets += t.relation_sets;
        total.ambiguous_sets += t.ambiguous_sets;
    }
    let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(EvalReport {
        records: records.len(),
        tasks: total
            .counts
            .into_iter()
            .map(|(task, (tp, p, g))| (task.name().to_string(), TaskMetrics::from_counts(tp, p, g)))
            .collect(),
        classification_accuracy: rate(total.label_correct, total.label_pairs),
        relation_ambiguity_rate: rate(total.ambiguous_sets, total.relation_sets),
        loss_curve: Vec::new(),
    })
}

/// Whether decoding the gold tables of `record` gives back its gold facts.
pub fn record_round_trips(record: &DatasetRecord, threshold: f64) -> Result<bool, PredictError> {
    let scorer = GoldScorer::new(std::slice::from_ref(record))?;
    Ok(predict_facts(&scorer, record, threshold)? == gold_facts(record))
}
