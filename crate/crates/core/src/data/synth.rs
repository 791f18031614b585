//! Rule-based synthetic corpora. Every rule is recoverable exactly from the
//! tokens, so a perfect model scores F1 = 1.
//!
//! Words are `w0 .. w{vocab_size-1}`, partitioned by a seeded shuffle into
//! the role vocabularies of each task family plus fillers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DatasetRecord;
use crate::codec::{relations_ambiguous, Annotation, EventArgument, EventStructure, Relation, Span};
use crate::schema::{CategoryLabel, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: TaskKind,
    pub vocab_size: usize,
    pub num_records: usize,
    pub max_text_len: usize,
    pub num_categories: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("vocab_size {have} is too small; this spec needs at least {needed} words")]
    VocabTooSmall { needed: usize, have: usize },
    #[error("max_text_len {have} is too short; this spec needs at least {needed} tokens")]
    TextTooShort { needed: usize, have: usize },
    #[error("task {0} has no generator; use event_trigger for events")]
    Unsupported(TaskKind),
}

const ENTITY_NAMES: &[&str] = &["person", "location", "organization", "date", "product", "money", "title", "event"];
const LABEL_NAMES: &[&str] = &["sports", "politics", "finance", "science", "health", "travel", "music", "weather"];
const RELATION_NAMES: &[&str] = &["works for", "located in", "part of", "born in", "owns", "leads"];
const EVENT_NAMES: &[&str] = &["attack", "transfer", "meeting", "election", "arrest", "merger"];
const ROLE_NAMES: &[&str] = &["agent", "target"];

fn name(list: &[&str], i: usize, fallback: &str) -> String {
    list.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("{fallback} {i}"))
}

/// Seeded word pool handing out disjoint groups.
struct Words {
    pool: Vec<String>,
}

impl Words {
    fn new(vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut pool: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
        pool.shuffle(rng);
        Words { pool }
    }

    fn take(&mut self, n: usize) -> Vec<String> {
        let rest = self.pool.split_off(n);
        std::mem::replace(&mut self.pool, rest)
    }

    fn rest(self) -> Vec<String> {
        self.pool
    }
}

/// Token budget for one text: segments separated by at least one filler,
/// padded with fillers to the chosen length.
fn lay_out(segments: Vec<Vec<String>>, len: usize, fillers: &[String], rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>) {
    let used: usize = segments.iter().map(Vec::len).sum::<usize>() + segments.len().saturating_sub(1);
    let mut extra = len.saturating_sub(used);
    // Distribute spare fillers over the gaps before, between and after segments.
    let gaps = segments.len() + 1;
    let mut pad = vec![0usize; gaps];
    while extra > 0 {
        pad[rng.gen_range(0..gaps)] += 1;
        extra -= 1;
    }
    let mut tokens = Vec::with_capacity(len.max(used));
    let mut starts = Vec::with_capacity(segments.len());
    for (i, seg) in segments.into_iter().enumerate() {
        if i > 0 {
            tokens.push(fillers.choose(rng).unwrap().clone());
        }
        for _ in 0..pad[i] {
            tokens.push(fillers.choose(rng).unwrap().clone());
        }
        starts.push(tokens.len());
        tokens.extend(seg);
    }
    for _ in 0..pad[gaps - 1] {
        tokens.push(fillers.choose(rng).unwrap().clone());
    }
    (tokens, starts)
}

fn check(spec: &SyntheticSpec, needed_vocab: usize, needed_len: usize) -> Result<(), SynthError> {
    for (field, v) in [
        ("vocab_size", spec.vocab_size),
        ("num_records", spec.num_records),
        ("max_text_len", spec.max_text_len),
        ("num_categories", spec.num_categories),
    ] {
        if v == 0 {
            return Err(SynthError::NotPositive { field });
        }
    }
    if spec.vocab_size < needed_vocab {
        return Err(SynthError::VocabTooSmall {
            needed: needed_vocab,
            have: spec.vocab_size,
        });
    }
    if spec.max_text_len < needed_len {
        return Err(SynthError::TextTooShort {
            needed: needed_len,
            have: spec.max_text_len,
        });
    }
    Ok(())
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.task {
        TaskKind::Ner => ner(spec, &mut rng),
        TaskKind::Classification => classification(spec, &mut rng),
        TaskKind::RelationExtraction => relation(spec, &mut rng),
        TaskKind::EventTrigger => events(spec, &mut rng),
        other => Err(SynthError::Unsupported(other)),
    }
}

/// Every word of the k-th marker vocabulary is an entity of type k.
/// Entities are separated by at least one filler.
fn ner(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DatasetRecord>, SynthError> {
    let c = spec.num_categories;
    check(spec, 2 * c + 1, 2)?;
    let per_type = ((spec.vocab_size / 2) / c).max(1);
    let mut words = Words::new(spec.vocab_size, rng);
    let markers: Vec<Vec<String>> = (0..c).map(|_| words.take(per_type)).collect();
    let fillers = words.rest();
    let cats: Vec<CategoryLabel> = (0..c).map(|k| CategoryLabel::EntityType(name(ENTITY_NAMES, k, "type"))).collect();

    let mut out = Vec::with_capacity(spec.num_records);
    for _ in 0..spec.num_records {
        let len = rng.gen_range(2.max(spec.max_text_len / 2)..=spec.max_text_len);
        let mut segments = Vec::new();
        let mut types = Vec::new();
        let mut budget = len;
        while budget >= 2 {
            let k = rng.gen_range(0..c);
            segments.push(vec![markers[k].choose(rng).unwrap().clone()]);
            types.push(k);
            budget -= 2;
            if rng.gen_bool(0.4) {
                break;
            }
        }
        let (tokens, starts) = lay_out(segments, len, &fillers, rng);
        let mut gold: BTreeMap<CategoryLabel, Annotation> =
            cats.iter().map(|cat| (cat.clone(), Annotation::EntitySet(BTreeSet::new()))).collect();
        for (k, s) in types.into_iter().zip(starts) {
            if let Some(Annotation::EntitySet(set)) = gold.get_mut(&cats[k]) {
                set.insert(Span::new(s, s));
            }
        }
        out.push(DatasetRecord {
            task: TaskKind::Ner,
            text: tokens.join(" "),
            categories: cats.clone(),
            gold,
        });
    }
    Ok(out)
}

/// Label j applies iff one of its keywords occurs.
fn classification(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DatasetRecord>, SynthError> {
    let c = spec.num_categories;
    check(spec, 2 * c + 1, c + 1)?;
    let mut words = Words::new(spec.vocab_size, rng);
    let keywords: Vec<Vec<String>> = (0..c).map(|_| words.take(2)).collect();
    let fillers = words.rest();
    let cats: Vec<CategoryLabel> = (0..c).map(|k| CategoryLabel::PlainLabel(name(LABEL_NAMES, k, "label"))).collect();

    let mut out = Vec::with_capacity(spec.num_records);
    for _ in 0..spec.num_records {
        let len = rng.gen_range((c + 1).max(spec.max_text_len / 2)..=spec.max_text_len);
        let on: Vec<bool> = (0..c).map(|_| rng.gen_bool(0.5)).collect();
        let mut tokens: Vec<String> = (0..len - on.iter().filter(|&&b| b).count())
            .map(|_| fillers.choose(rng).unwrap().clone())
            .collect();
        for (k, _) in on.iter().enumerate().filter(|(_, &b)| b) {
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, keywords[k].choose(rng).unwrap().clone());
        }
        let gold = cats.iter().zip(&on).map(|(cat, &b)| (cat.clone(), Annotation::LabelFlag(b))).collect();
        out.push(DatasetRecord {
            task: TaskKind::Classification,
            text: tokens.join(" "),
            categories: cats.clone(),
            gold,
        });
    }
    Ok(out)
}

/// Relation r holds for `A c_r B` where A and B are single-token markers of
/// the head and tail types and `c_r` is the relation's connector.
fn relation(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DatasetRecord>, SynthError> {
    let c = spec.num_categories;
    let types = c.clamp(2, 3);
    let per_type = 4;
    check(spec, types * per_type + c + 1, 3)?;
    let mut words = Words::new(spec.vocab_size, rng);
    let markers: Vec<Vec<String>> = (0..types).map(|_| words.take(per_type)).collect();
    let connectors = words.take(c);
    let fillers = words.rest();
    let pairs: Vec<(usize, usize)> = (0..c).map(|r| (r % types, (r + 1) % types)).collect();
    let cats: Vec<CategoryLabel> = (0..c)
        .map(|r| {
            let (h, t) = pairs[r];
            CategoryLabel::triple(&name(ENTITY_NAMES, h, "type"), &name(RELATION_NAMES, r, "relation"), &name(ENTITY_NAMES, t, "type"))
        })
        .collect();

    let mut out = Vec::with_capacity(spec.num_records);
    while out.len() < spec.num_records {
        let len = rng.gen_range(3.max(spec.max_text_len / 2)..=spec.max_text_len);
        let max_rel = ((len + 1) / 4).clamp(1, 2);
        let n_rel = rng.gen_range(1..=max_rel);
        let mut segments = Vec::new();
        let mut rels = Vec::new();
        for _ in 0..n_rel {
            let r = rng.gen_range(0..c);
            let (h, t) = pairs[r];
            segments.push(vec![
                markers[h].choose(rng).unwrap().clone(),
                connectors[r].clone(),
                markers[t].choose(rng).unwrap().clone(),
            ]);
            rels.push(r);
        }
        let used = 4 * n_rel - 1;
        if len >= used + 2 && rng.gen_bool(0.5) {
            segments.push(vec![markers[rng.gen_range(0..types)].choose(rng).unwrap().clone()]);
        }
        // Keep relation segments first in `rels` order; shuffle segment order jointly.
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.shuffle(rng);
        let shuffled: Vec<Vec<String>> = order.iter().map(|&i| segments[i].clone()).collect();
        let (tokens, starts) = lay_out(shuffled, len, &fillers, rng);

        let mut gold: BTreeMap<CategoryLabel, BTreeSet<Relation>> = cats.iter().map(|c| (c.clone(), BTreeSet::new())).collect();
        for (pos, &i) in order.iter().enumerate() {
            if let Some(&r) = rels.get(i) {
                let s = starts[pos];
                gold.get_mut(&cats[r]).unwrap().insert(Relation {
                    head: Span::new(s, s),
                    tail: Span::new(s + 2, s + 2),
                });
            }
        }
        if gold.values().any(relations_ambiguous) {
            continue;
        }
        out.push(DatasetRecord {
            task: TaskKind::RelationExtraction,
            text: tokens.join(" "),
            categories: cats.clone(),
            gold: gold.into_iter().map(|(k, v)| (k, Annotation::RelationSet(v))).collect(),
        });
    }
    Ok(out)
}

/// Event type e is triggered by one of its trigger words; the argument for
/// role r is the marker word right after the (e, r) connector.
fn events(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DatasetRecord>, SynthError> {
    let e = spec.num_categories;
    let roles = ROLE_NAMES.len();
    let args_vocab = 4;
    check(spec, 2 * e + e * roles + args_vocab + 1, 1 + 3 * roles)?;
    let mut words = Words::new(spec.vocab_size, rng);
    let triggers: Vec<Vec<String>> = (0..e).map(|_| words.take(2)).collect();
    let connectors: Vec<Vec<String>> = (0..e).map(|_| words.take(roles)).collect();
    let arg_words = words.take(args_vocab);
    let fillers = words.rest();
    let types: Vec<String> = (0..e).map(|k| name(EVENT_NAMES, k, "event")).collect();
    let mut cats: Vec<CategoryLabel> = types.iter().map(|t| CategoryLabel::plain(t)).collect();
    for t in &types {
        cats.extend(ROLE_NAMES.iter().map(|r| CategoryLabel::event_role(t, r)));
    }

    let mut out = Vec::with_capacity(spec.num_records);
    for _ in 0..spec.num_records {
        let len = rng.gen_range((1 + 3 * roles).max(spec.max_text_len / 2)..=spec.max_text_len);
        let k = rng.gen_range(0..e);
        // Trigger first, then the role segments in random order.
        let mut segments = vec![vec![triggers[k].choose(rng).unwrap().clone()]];
        let mut seg_roles = vec![None];
        let mut present: Vec<usize> = (0..roles).filter(|_| rng.gen_bool(0.7)).collect();
        present.shuffle(rng);
        for r in present {
            segments.push(vec![connectors[k][r].clone(), arg_words.choose(rng).unwrap().clone()]);
            seg_roles.push(Some(r));
        }
        let (tokens, starts) = lay_out(segments, len, &fillers, rng);
        let trigger = Span::new(starts[0], starts[0]);
        let args = seg_roles
            .iter()
            .zip(&starts)
            .filter_map(|(r, &s)| {
                r.map(|r| EventArgument {
                    role: ROLE_NAMES[r].to_string(),
                    span: Span::new(s + 1, s + 1),
                })
            })
            .collect();
        let mut gold = BTreeMap::new();
        gold.insert(
            CategoryLabel::plain(&types[k]),
            Annotation::EventStructure(EventStructure { trigger, args }),
        );
        out.push(DatasetRecord {
            task: TaskKind::EventTrigger,
            text: tokens.join(" "),
            categories: cats.clone(),
            gold,
        });
    }
    Ok(out)
}
