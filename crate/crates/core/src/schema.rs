//! Uniform input units: `[CLS] [task] t [category] c [text] s`.
//!
//! Every task presents one category hypothesis per unit; the `m` units built
//! for one text form a [`SchemaBatch`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{canonical_form, tokenize, Token, TokenSequence};

pub const CLS: &str = "[CLS]";
pub const TASK_MARKER: &str = "[task]";
pub const CATEGORY_MARKER: &str = "[category]";
pub const TEXT_MARKER: &str = "[text]";
/// Separates the components of a multi-part category.
pub const SEPARATOR: &str = ";";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Ner,
    RelationExtraction,
    EventTrigger,
    EventArgument,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Classification,
        TaskKind::Ner,
        TaskKind::RelationExtraction,
        TaskKind::EventTrigger,
        TaskKind::EventArgument,
    ];

    /// The words placed after `[task]`.
    pub fn prompt(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Ner => "ner",
            TaskKind::RelationExtraction => "relation extraction",
            TaskKind::EventTrigger => "event trigger",
            TaskKind::EventArgument => "event argument",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Ner => "ner",
            TaskKind::RelationExtraction => "relation_extraction",
            TaskKind::EventTrigger => "event_trigger",
            TaskKind::EventArgument => "event_argument",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A category hypothesis presented in the `[category]` segment.
///
/// Every component must be non-empty and in canonical spacing (its tokens
/// joined by single spaces); [`CategoryLabel::validate`] checks this. Together
/// with the special separator token this makes the token serialization
/// injective.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryLabel {
    PlainLabel(String),
    EntityType(String),
    RelationTriple {
        head_type: String,
        relation: String,
        tail_type: String,
    },
    EventRole {
        event_type: String,
        role: String,
    },
    EventRoleWithTrigger {
        event_type: String,
        trigger_text: String,
        role: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("category component is empty")]
    EmptyComponent,
    #[error("category component {found:?} is not canonically spaced; write {canonical:?}")]
    NonCanonical { found: String, canonical: String },
    #[error("category {category} cannot be used with task {task}")]
    TaskMismatch { task: TaskKind, category: String },
    #[error("category list is empty")]
    NoCategories,
    #[error("duplicate category {0}")]
    DuplicateCategory(String),
    #[error("malformed category key {key:?}: {reason}")]
    BadKey { key: String, reason: String },
}

impl CategoryLabel {
    pub fn plain(name: &str) -> Self {
        CategoryLabel::PlainLabel(name.to_string())
    }

    pub fn entity(name: &str) -> Self {
        CategoryLabel::EntityType(name.to_string())
    }

    pub fn triple(head_type: &str, relation: &str, tail_type: &str) -> Self {
        CategoryLabel::RelationTriple {
            head_type: head_type.to_string(),
            relation: relation.to_string(),
            tail_type: tail_type.to_string(),
        }
    }

    pub fn event_role(event_type: &str, role: &str) -> Self {
        CategoryLabel::EventRole {
            event_type: event_type.to_string(),
            role: role.to_string(),
        }
    }

    /// Stage-two event category. The trigger text is canonicalized, since it
    /// is usually sliced out of raw text.
    pub fn event_role_with_trigger(event_type: &str, trigger_text: &str, role: &str) -> Self {
        CategoryLabel::EventRoleWithTrigger {
            event_type: event_type.to_string(),
            trigger_text: canonical_form(trigger_text),
            role: role.to_string(),
        }
    }

    pub fn components(&self) -> Vec<&str> {
        match self {
            CategoryLabel::PlainLabel(n) | CategoryLabel::EntityType(n) => vec![n],
            CategoryLabel::RelationTriple {
                head_type,
                relation,
                tail_type,
            } => vec![head_type, relation, tail_type],
            CategoryLabel::EventRole { event_type, role } => vec![event_type, role],
            CategoryLabel::EventRoleWithTrigger {
                event_type,
                trigger_text,
                role,
            } => vec![event_type, trigger_text, role],
        }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        for c in self.components() {
            if c.is_empty() {
                return Err(SchemaError::EmptyComponent);
            }
            let canonical = canonical_form(c);
            if canonical.is_empty() {
                return Err(SchemaError::EmptyComponent);
            }
            if canonical != c {
                return Err(SchemaError::NonCanonical {
                    found: c.to_string(),
                    canonical,
                });
            }
        }
        Ok(())
    }

    pub fn compatible_with(&self, task: TaskKind) -> bool {
        matches!(
            (task, self),
            (TaskKind::Classification, CategoryLabel::PlainLabel(_))
                | (TaskKind::Ner, CategoryLabel::EntityType(_))
                | (TaskKind::RelationExtraction, CategoryLabel::RelationTriple { .. })
                | (TaskKind::EventTrigger, CategoryLabel::PlainLabel(_))
                | (TaskKind::EventArgument, CategoryLabel::EventRole { .. })
                | (TaskKind::EventArgument, CategoryLabel::EventRoleWithTrigger { .. })
        )
    }

    /// The category segment as tokens, components separated by special `;`.
    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        for (i, c) in self.components().into_iter().enumerate() {
            if i > 0 {
                out.push(Token::special(SEPARATOR));
            }
            out.extend(tokenize(c).tokens);
        }
        out
    }

    /// Compact string key: components joined by `;`, with `\` escaping `;`
    /// and `\` inside components.
    pub fn key(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.components().into_iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            for ch in c.chars() {
                if ch == ';' || ch == '\\' {
                    out.push('\\');
                }
                out.push(ch);
            }
        }
        out
    }

    /// Parses a [`key`](Self::key) in the context of a task. The task and the
    /// number of components select the variant.
    pub fn parse_key(task: TaskKind, key: &str) -> Result<Self, SchemaError> {
        let bad = |reason: &str| SchemaError::BadKey {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let mut parts = vec![String::new()];
        let mut chars = key.chars();
        while let Some(ch) = chars.next() {
            match ch {
                '\\' => match chars.next() {
                    Some(e @ (';' | '\\')) => parts.last_mut().unwrap().push(e),
                    _ => return Err(bad("dangling or unknown escape")),
                },
                ';' => parts.push(String::new()),
                c => parts.last_mut().unwrap().push(c),
            }
        }
        let label = match (task, parts.as_slice()) {
            (TaskKind::Classification, [n]) | (TaskKind::EventTrigger, [n]) => {
                CategoryLabel::plain(n)
            }
            (TaskKind::Ner, [n]) => CategoryLabel::entity(n),
            (TaskKind::RelationExtraction, [h, r, t]) => CategoryLabel::triple(h, r, t),
            (TaskKind::EventTrigger, [e, r]) | (TaskKind::EventArgument, [e, r]) => {
                CategoryLabel::event_role(e, r)
            }
            (TaskKind::EventArgument, [e, t, r]) => CategoryLabel::EventRoleWithTrigger {
                event_type: e.clone(),
                trigger_text: t.clone(),
                role: r.clone(),
            },
            _ => return Err(bad(&format!("{} components do not fit task {task}", parts.len()))),
        };
        label.validate()?;
        Ok(label)
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.components().join(", "))
    }
}

/// One `[CLS] [task] t [category] c [text] s` unit.
///
/// `tokens.source_text` is the rendered unit string; content tokens carry
/// offsets into it, marker tokens carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaInstance {
    pub task: TaskKind,
    pub category: CategoryLabel,
    pub text: String,
    pub tokens: TokenSequence,
    pub text_token_offset: usize,
}

impl SchemaInstance {
    /// Unit length `l`, the side of every structure table for this unit.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of raw-text tokens.
    pub fn text_len(&self) -> usize {
        self.tokens.len() - self.text_token_offset
    }

    pub fn text_tokens(&self) -> &[Token] {
        &self.tokens.tokens[self.text_token_offset..]
    }

    /// The raw text as its own token sequence, offsets relative to `text`.
    pub fn text_sequence(&self) -> TokenSequence {
        tokenize(&self.text)
    }
}

/// Accumulates unit tokens together with the rendered unit string.
#[derive(Default)]
struct UnitBuilder {
    tokens: Vec<Token>,
    rendered: String,
    chars: usize,
}

impl UnitBuilder {
    fn push_str(&mut self, s: &str) {
        if !self.rendered.is_empty() {
            self.rendered.push(' ');
            self.chars += 1;
        }
        self.rendered.push_str(s);
        self.chars += s.chars().count();
    }

    fn marker(&mut self, m: &str) {
        self.push_str(m);
        self.tokens.push(Token::special(m));
    }

    fn content(&mut self, src: &str) {
        let shift = self.chars + usize::from(!self.rendered.is_empty());
        self.push_str(src);
        self.tokens.extend(tokenize(src).tokens.into_iter().map(|t| Token {
            char_start: t.char_start + shift,
            char_end: t.char_end + shift,
            ..t
        }));
    }
}

pub fn build_instance(
    task: TaskKind,
    category: CategoryLabel,
    text: &str,
) -> Result<SchemaInstance, SchemaError> {
    category.validate()?;
    if !category.compatible_with(task) {
        return Err(SchemaError::TaskMismatch {
            task,
            category: category.to_string(),
        });
    }
    let raw = tokenize(text);
    if raw.is_empty() {
        return Err(SchemaError::EmptyText);
    }

    let mut unit = UnitBuilder::default();
    unit.marker(CLS);
    unit.marker(TASK_MARKER);
    unit.content(task.prompt());
    unit.marker(CATEGORY_MARKER);
    for (i, c) in category.components().into_iter().enumerate() {
        if i > 0 {
            unit.marker(SEPARATOR);
        }
        unit.content(c);
    }
    unit.marker(TEXT_MARKER);
    let text_token_offset = unit.tokens.len();
    unit.content(text);

    Ok(SchemaInstance {
        task,
        category,
        text: text.to_string(),
        tokens: TokenSequence {
            tokens: unit.tokens,
            source_text: unit.rendered,
        },
        text_token_offset,
    })
}

/// The `m` units of one text, one per category, in the given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaBatch {
    pub instances: Vec<SchemaInstance>,
    pub shared_text: String,
}

pub fn build_batch(
    task: TaskKind,
    categories: &[CategoryLabel],
    text: &str,
) -> Result<SchemaBatch, SchemaError> {
    if categories.is_empty() {
        return Err(SchemaError::NoCategories);
    }
    let mut seen = BTreeSet::new();
    for c in categories {
        if !seen.insert(c) {
            return Err(SchemaError::DuplicateCategory(c.to_string()));
        }
    }
    let instances = categories
        .iter()
        .map(|c| build_instance(task, c.clone(), text))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SchemaBatch {
        instances,
        shared_text: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(inst: &SchemaInstance) -> Vec<&str> {
        inst.tokens.texts().collect()
    }

    #[test]
    fn ner_unit_layout() {
        let inst = build_instance(TaskKind::Ner, CategoryLabel::entity("person"), "john works at acme").unwrap();
        assert_eq!(
            texts(&inst),
            ["[CLS]", "[task]", "ner", "[category]", "person", "[text]", "john", "works", "at", "acme"]
        );
        assert_eq!(inst.text_token_offset, 6);
        assert_eq!(inst.text_len(), 4);
        assert!(inst.tokens.tokens[0].is_special);
        assert!(!inst.tokens.tokens[2].is_special);
    }

    #[test]
    fn content_offsets_index_the_rendered_unit() {
        let inst = build_instance(
            TaskKind::RelationExtraction,
            CategoryLabel::triple("PER", "Originator", "ORG"),
            "Ann  founded Acme.",
        )
        .unwrap();
        let chars: Vec<char> = inst.tokens.source_text.chars().collect();
        for t in inst.tokens.tokens.iter().filter(|t| !t.is_special) {
            let s: String = chars[t.char_start..t.char_end].iter().collect();
            assert_eq!(s, t.text);
        }
    }

    #[test]
    fn relation_triple_serializes_with_separators() {
        let inst = build_instance(
            TaskKind::RelationExtraction,
            CategoryLabel::triple("PER", "Originator", "ORG"),
            "a b",
        )
        .unwrap();
        let cat: Vec<(&str, bool)> = inst.tokens.tokens[5..10]
            .iter()
            .map(|t| (t.text.as_str(), t.is_special))
            .collect();
        assert_eq!(
            cat,
            [("PER", false), (";", true), ("Originator", false), (";", true), ("ORG", false)]
        );
        assert_eq!(inst.tokens.tokens[10].text, TEXT_MARKER);
    }

    #[test]
    fn event_role_serializes_pair() {
        let inst = build_instance(
            TaskKind::EventArgument,
            CategoryLabel::event_role("attack", "victim"),
            "the army attacked the town",
        )
        .unwrap();
        assert_eq!(
            &texts(&inst)[..9],
            ["[CLS]", "[task]", "event", "argument", "[category]", "attack", ";", "victim", "[text]"]
        );
        assert_eq!(inst.text_token_offset, 9);
    }

    #[test]
    fn rejects_empty_text_and_mismatched_category() {
        assert_eq!(
            build_instance(TaskKind::Ner, CategoryLabel::entity("x"), "  "),
            Err(SchemaError::EmptyText)
        );
        assert!(matches!(
            build_instance(TaskKind::Ner, CategoryLabel::plain("x"), "a"),
            Err(SchemaError::TaskMismatch { .. })
        ));
        assert!(matches!(
            build_instance(TaskKind::Ner, CategoryLabel::entity("e-mail"), "a"),
            Err(SchemaError::NonCanonical { .. })
        ));
    }

    #[test]
    fn batches_keep_order_and_reject_duplicates() {
        let cats = [
            CategoryLabel::entity("person"),
            CategoryLabel::entity("place"),
            CategoryLabel::entity("organization name"),
        ];
        let batch = build_batch(TaskKind::Ner, &cats, "john went to paris").unwrap();
        assert_eq!(batch.instances.len(), 3);
        for (inst, cat) in batch.instances.iter().zip(&cats) {
            assert_eq!(&inst.category, cat);
            assert_eq!(
                inst.text_tokens().iter().map(|t| &t.text).collect::<Vec<_>>(),
                ["john", "went", "to", "paris"]
            );
        }
        assert_eq!(batch.instances[2].text_token_offset, 7);

        let single = build_batch(TaskKind::Ner, &cats[..1], "x").unwrap();
        assert_eq!(single.instances.len(), 1);

        let dup = [cats[0].clone(), cats[1].clone(), cats[0].clone()];
        assert!(matches!(
            build_batch(TaskKind::Ner, &dup, "x"),
            Err(SchemaError::DuplicateCategory(_))
        ));
        assert_eq!(build_batch(TaskKind::Ner, &[], "x"), Err(SchemaError::NoCategories));
    }

    #[test]
    fn keys_round_trip_with_escapes() {
        let label = CategoryLabel::EventRoleWithTrigger {
            event_type: "attack".into(),
            trigger_text: "a ; b \\ c".into(),
            role: "victim".into(),
        };
        let key = label.key();
        assert_eq!(key, "attack;a \\; b \\\\ c;victim");
        assert_eq!(CategoryLabel::parse_key(TaskKind::EventArgument, &key).unwrap(), label);
        assert!(CategoryLabel::parse_key(TaskKind::Ner, "a;b").is_err());
        assert!(CategoryLabel::parse_key(TaskKind::Ner, "a\\").is_err());
        assert_eq!(
            CategoryLabel::parse_key(TaskKind::EventTrigger, "attack;time").unwrap(),
            CategoryLabel::event_role("attack", "time")
        );
    }
}
