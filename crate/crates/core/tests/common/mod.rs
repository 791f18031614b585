//! Random gold generators and oracles shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubert::codec::{EventArgument, EventStructure, Region, Relation, ScoreTable, Span, TableRole};
use ubert::schema::{build_instance, CategoryLabel, SchemaInstance, TaskKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` space-separated words from a small pool.
pub fn random_text(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| format!("t{}", rng.gen_range(0..20))).collect::<Vec<_>>().join(" ")
}

pub fn random_span(rng: &mut impl Rng, text_len: usize) -> Span {
    let a = rng.gen_range(0..text_len);
    let b = rng.gen_range(0..text_len);
    Span::new(a.min(b), a.max(b))
}

pub fn random_spans(rng: &mut impl Rng, text_len: usize, max: usize) -> BTreeSet<Span> {
    let k = rng.gen_range(0..=max);
    (0..k).map(|_| random_span(rng, text_len)).collect()
}

pub fn random_relations(rng: &mut impl Rng, text_len: usize, max: usize) -> BTreeSet<Relation> {
    let k = rng.gen_range(0..=max);
    (0..k)
        .map(|_| Relation {
            head: random_span(rng, text_len),
            tail: random_span(rng, text_len),
        })
        .collect()
}

pub const ROLES: [&str; 3] = ["agent", "target", "time"];

/// Triggers are at most four tokens, keeping argument units short.
pub fn random_event(rng: &mut impl Rng, text_len: usize) -> EventStructure {
    let start = rng.gen_range(0..text_len);
    let trigger = Span::new(start, (start + rng.gen_range(0..4)).min(text_len - 1));
    let k = rng.gen_range(0..=4);
    let args = (0..k)
        .map(|_| EventArgument {
            role: ROLES[rng.gen_range(0..ROLES.len())].to_string(),
            span: random_span(rng, text_len),
        })
        .collect();
    EventStructure { trigger, args }
}

pub fn category_for(task: TaskKind) -> CategoryLabel {
    match task {
        TaskKind::Classification | TaskKind::EventTrigger => CategoryLabel::plain("attack"),
        TaskKind::Ner => CategoryLabel::entity("person"),
        TaskKind::RelationExtraction => CategoryLabel::triple("person", "works for", "org"),
        TaskKind::EventArgument => CategoryLabel::event_role_with_trigger("attack", "t1", "agent"),
    }
}

/// A unit of `task` over `text`.
pub fn unit(task: TaskKind, text: &str) -> SchemaInstance {
    build_instance(task, category_for(task), text).expect("valid unit")
}

/// Argument units for an event, one per role in [`ROLES`].
pub fn argument_units(text: &str, trigger: Span) -> Vec<SchemaInstance> {
    let words: Vec<&str> = text.split(' ').collect();
    let trigger_text = words[trigger.start..=trigger.end].join(" ");
    ROLES
        .iter()
        .map(|role| {
            build_instance(
                TaskKind::EventArgument,
                CategoryLabel::event_role_with_trigger("attack", &trigger_text, role),
                text,
            )
            .expect("valid argument unit")
        })
        .collect()
}

/// Arbitrary score table: a mix of saturated, moderate and zero logits.
pub fn fuzz_table(rng: &mut impl Rng, size: usize, role: TableRole, region: Region) -> ScoreTable {
    let cells = (0..size * size)
        .map(|_| match rng.gen_range(0..4) {
            0 => -10.0,
            1 => 10.0,
            2 => 0.0,
            _ => rng.gen_range(-5.0..5.0),
        })
        .collect();
    ScoreTable::from_cells(size, role, region, cells).expect("square table")
}

pub fn fuzz_region(rng: &mut impl Rng, size: usize) -> Region {
    if rng.gen_bool(0.2) {
        Region::Cls
    } else {
        Region::TextBlock {
            start: rng.gen_range(0..size),
        }
    }
}
