//! Toy transformer encoder, the start/end span projections, the biaffine
//! structure-table score and the summed BCE objective.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{roles_for, Region, ScoreTable, TableRole, TargetTable};
use crate::schema::SchemaInstance;
use crate::tensor::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::tensor::{Gradients, ParamSet, Tape, Tensor, TensorError, Var};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanActivation {
    #[default]
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Zero means "take it from the vocabulary".
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub max_len: usize,
    pub seed: u64,
    pub span_activation: SpanActivation,
    pub positive_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            hidden_dim: 32,
            ffn_dim: 64,
            encoder_layers: 2,
            encoder_heads: 2,
            max_len: 64,
            seed: 0,
            span_activation: SpanActivation::Relu,
            positive_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_heads", self.encoder_heads),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.encoder_heads) {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by encoder_heads {}",
                self.hidden_dim, self.encoder_heads
            )));
        }
        if !(self.positive_weight.is_finite() && self.positive_weight > 0.0) {
            return Err(ModelError::Config("positive_weight must be finite and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} is outside the {vocab_size}-token vocabulary")]
    UnknownId { id: usize, vocab_size: usize },
    #[error("unit of {len} tokens exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("score and target lists differ: {0}")]
    TargetMismatch(String),
    #[error("checkpoint parameters do not match the config: {0}")]
    ParamMismatch(String),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which biaffine kernel scores a table. The three relation tables need
/// distinct scores from the same projections, so head-entity shares the main
/// kernel and tail-entity and coupling get their own.
fn kernel_slot(role: TableRole) -> usize {
    match role {
        TableRole::TailEntity => 1,
        TableRole::Coupling => 2,
        _ => 0,
    }
}

const KERNELS: [&str; 3] = ["u.main", "u.tail", "u.coupling"];

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    layers: Vec<LayerIdx>,
    final_g: usize,
    final_b: usize,
    ws: usize,
    bs: usize,
    we: usize,
    be: usize,
    u: [usize; 3],
}

struct Init {
    params: ParamSet,
    rng: ChaCha8Rng,
}

impl Init {
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.params.push(name, t)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> usize {
        self.params.push(name, Tensor::from_fn(shape, |_| value))
    }
}

#[derive(Debug, Clone)]
pub struct UbertModel {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamSet,
    layout: Layout,
    positions: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
}

fn sinusoidal(max_len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[max_len, d], |i| {
        let (pos, k) = ((i / d) as f64, i % d);
        let angle = pos / 10000f64.powf((k - k % 2) as f64 / d as f64);
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl UbertModel {
    /// Fresh model; `config.vocab_size` is taken from `vocab` when zero and
    /// must match it otherwise.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        if config.vocab_size == 0 {
            config.vocab_size = vocab.len();
        }
        if config.vocab_size != vocab.len() {
            return Err(ModelError::Config(format!(
                "vocab_size {} but the vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let (d, f) = (config.hidden_dim, config.ffn_dim);
        let mut init = Init {
            params: ParamSet::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let embed = init.uniform("embed".into(), &[config.vocab_size, d], d);
        let layers = (0..config.encoder_layers)
            .map(|i| {
                let p = |s: &str| format!("enc{i}.{s}");
                LayerIdx {
                    ln1_g: init.constant(p("ln1.g"), &[d], 1.0),
                    ln1_b: init.constant(p("ln1.b"), &[d], 0.0),
                    wq: init.uniform(p("attn.wq"), &[d, d], d),
                    wk: init.uniform(p("attn.wk"), &[d, d], d),
                    wv: init.uniform(p("attn.wv"), &[d, d], d),
                    wo: init.uniform(p("attn.wo"), &[d, d], d),
                    bo: init.constant(p("attn.bo"), &[d], 0.0),
                    ln2_g: init.constant(p("ln2.g"), &[d], 1.0),
                    ln2_b: init.constant(p("ln2.b"), &[d], 0.0),
                    w1: init.uniform(p("ffn.w1"), &[d, f], d),
                    b1: init.constant(p("ffn.b1"), &[f], 0.0),
                    w2: init.uniform(p("ffn.w2"), &[f, d], f),
                    b2: init.constant(p("ffn.b2"), &[d], 0.0),
                }
            })
            .collect();
        let final_g = init.constant("final_ln.g".into(), &[d], 1.0);
        let final_b = init.constant("final_ln.b".into(), &[d], 0.0);
        let ws = init.uniform("ffn_s.w".into(), &[d, d], d);
        let bs = init.constant("ffn_s.b".into(), &[d], 0.0);
        let we = init.uniform("ffn_e.w".into(), &[d, d], d);
        let be = init.constant("ffn_e.b".into(), &[d], 0.0);
        let u = KERNELS.map(|name| init.uniform(name.into(), &[d + 1, 1, d + 1], d + 1));
        let layout = Layout {
            embed,
            layers,
            final_g,
            final_b,
            ws,
            bs,
            we,
            be,
            u,
        };
        Ok(UbertModel {
            positions: sinusoidal(config.max_len, d),
            config,
            vocab,
            params: init.params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Vocabulary ids of a unit's tokens.
    pub fn ids(&self, instance: &SchemaInstance) -> Vec<usize> {
        instance.tokens.tokens.iter().map(|t| self.vocab.id(&t.text)).collect()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if ids.len() > self.config.max_len {
            return Err(ModelError::TooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::UnknownId {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, g: Var, b: Var) -> Result<Var, TensorError> {
        let n = tape.layer_norm_rows(x)?;
        let n = tape.mul_row(n, g)?;
        tape.add_row(n, b)
    }

    fn attention(&self, tape: &mut Tape, p: &[Var], li: &LayerIdx, x: Var) -> Result<Var, TensorError> {
        let heads = self.config.encoder_heads;
        let dh = self.config.hidden_dim / heads;
        let q = tape.matmul(x, p[li.wq])?;
        let k = tape.matmul(x, p[li.wk])?;
        let v = tape.matmul(x, p[li.wv])?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(s)?;
            outs.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&outs)?;
        let o = tape.matmul(cat, p[li.wo])?;
        tape.add_row(o, p[li.bo])
    }

    /// Contextual token representations `x`, `l x d`, recorded on `tape`.
    fn encode_on(&self, tape: &mut Tape, p: &[Var], ids: &[usize]) -> Result<Var, ModelError> {
        self.check_ids(ids)?;
        let (l, d) = (ids.len(), self.config.hidden_dim);
        let pos = Tensor::new(&[l, d], self.positions.data()[..l * d].to_vec())?;
        let pos = tape.leaf(pos);
        let emb = tape.gather_rows(p[self.layout.embed], ids)?;
        let mut x = tape.add(emb, pos)?;
        for li in &self.layout.layers {
            let n = self.layer_norm(tape, x, p[li.ln1_g], p[li.ln1_b])?;
            let a = self.attention(tape, p, li, n)?;
            x = tape.add(x, a)?;
            let n = self.layer_norm(tape, x, p[li.ln2_g], p[li.ln2_b])?;
            let h = tape.matmul(n, p[li.w1])?;
            let h = tape.add_row(h, p[li.b1])?;
            let h = tape.relu(h);
            let h = tape.matmul(h, p[li.w2])?;
            let h = tape.add_row(h, p[li.b2])?;
            x = tape.add(x, h)?;
        }
        Ok(self.layer_norm(tape, x, p[self.layout.final_g], p[self.layout.final_b])?)
    }

    fn project(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        let h = match self.config.span_activation {
            SpanActivation::Relu => tape.relu(h),
            SpanActivation::Linear => h,
        };
        tape.append_ones(h)
    }

    fn projections_on(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<(Var, Var), TensorError> {
        let hs = self.project(tape, x, p[self.layout.ws], p[self.layout.bs])?;
        let he = self.project(tape, x, p[self.layout.we], p[self.layout.be])?;
        Ok((hs, he))
    }

    /// One `l x l` score grid per role, from a single encoder pass.
    fn scores_on(&self, tape: &mut Tape, p: &[Var], ids: &[usize], roles: &[TableRole]) -> Result<Vec<Var>, ModelError> {
        let x = self.encode_on(tape, p, ids)?;
        let (hs, he) = self.projections_on(tape, p, x)?;
        roles
            .iter()
            .map(|&r| Ok(tape.biaffine(hs, p[self.layout.u[kernel_slot(r)]], he)?))
            .collect()
    }

    pub fn encode(&self, ids: &[usize]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = self.encode_on(&mut tape, &p, ids)?;
        Ok(tape.value(x).clone())
    }

    /// `(h_s, h_e)`, each `l x (d + 1)` with a trailing column of ones.
    pub fn span_projections(&self, x: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(x.clone());
        let (hs, he) = self.projections_on(&mut tape, &p, x)?;
        Ok((tape.value(hs).clone(), tape.value(he).clone()))
    }

    /// Score tables for every role the unit's task produces.
    pub fn score_tables(&self, instance: &SchemaInstance) -> Result<Vec<ScoreTable>, ModelError> {
        self.score_roles(instance, roles_for(instance.task))
    }

    pub fn score_table(&self, instance: &SchemaInstance, role: TableRole) -> Result<ScoreTable, ModelError> {
        Ok(self.score_roles(instance, &[role])?.remove(0))
    }

    pub fn score_roles(&self, instance: &SchemaInstance, roles: &[TableRole]) -> Result<Vec<ScoreTable>, ModelError> {
        let ids = self.ids(instance);
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let vars = self.scores_on(&mut tape, &p, &ids, roles)?;
        let region = Region::for_instance(instance);
        Ok(roles
            .iter()
            .zip(vars)
            .map(|(&role, v)| {
                let cells = tape.value(v).data().to_vec();
                ScoreTable::from_cells(ids.len(), role, region, cells).expect("l x l scores")
            })
            .collect())
    }

    /// Summed BCE over every table of every unit, flattened jointly.
    ///
    /// Each item is a unit's token ids and its target tables; the table roles
    /// select the kernels.
    pub fn loss_on_tape<'a>(
        &self,
        tape: &mut Tape,
        p: &[Var],
        items: impl IntoIterator<Item = (&'a [usize], &'a [TargetTable])>,
    ) -> Result<Var, ModelError> {
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        for (ids, tables) in items {
            if let Some(t) = tables.iter().find(|t| t.size() != ids.len()) {
                return Err(ModelError::TargetMismatch(format!(
                    "{:?} target of side {} for a {}-token unit",
                    t.role(),
                    t.size(),
                    ids.len()
                )));
            }
            let roles: Vec<TableRole> = tables.iter().map(|t| t.role()).collect();
            scores.extend(self.scores_on(tape, p, ids, &roles)?);
            targets.extend(tables.iter().flat_map(|t| t.cells().iter().map(|&c| f64::from(u8::from(c)))));
        }
        let flat = tape.concat_flat(&scores)?;
        Ok(tape.bce_with_logits(flat, &targets, self.config.positive_weight)?)
    }

    /// Loss value and its gradient for every parameter, in parameter order.
    pub fn loss_and_grads<'a>(
        &self,
        items: impl IntoIterator<Item = (&'a [usize], &'a [TargetTable])>,
    ) -> Result<(f64, Gradients, Vec<Var>), ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let loss = self.loss_on_tape(&mut tape, &p, items)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, grads, p))
    }

    /// Loss value only.
    pub fn loss<'a>(&self, items: impl IntoIterator<Item = (&'a [usize], &'a [TargetTable])>) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let loss = self.loss_on_tape(&mut tape, &p, items)?;
        Ok(tape.value(loss).data()[0])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        })?;
        let mut out = Vec::new();
        write_checkpoint(&mut out, &header, &self.params)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (header, params) = read_checkpoint(bytes)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut model = UbertModel::new(header.config, header.vocab)?;
        if params.len() != model.params.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((name, loaded), (want, slot)) in params.iter().zip(model.params.iter_mut()) {
            if name != want || loaded.shape() != slot.shape() {
                return Err(ModelError::ParamMismatch(format!(
                    "expected {want} {:?}, found {name} {:?}",
                    slot.shape(),
                    loaded.shape()
                )));
            }
            slot.data_mut().copy_from_slice(loaded.data());
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Summed BCE with logits of score tables against boolean targets, all
/// tables flattened into one vector.
pub fn bce_loss(scores: &[ScoreTable], targets: &[TargetTable], positive_weight: f64) -> Result<f64, ModelError> {
    if scores.len() != targets.len() {
        return Err(ModelError::TargetMismatch(format!(
            "{} score tables, {} target tables",
            scores.len(),
            targets.len()
        )));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let mut leaves = Vec::with_capacity(scores.len());
    let mut ys = Vec::new();
    for (s, t) in scores.iter().zip(targets) {
        if s.size() != t.size() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                lhs: vec![s.size(), s.size()],
                rhs: vec![t.size(), t.size()],
            }
            .into());
        }
        leaves.push(tape.leaf(Tensor::new(&[s.size(), s.size()], s.cells().to_vec())?));
        ys.extend(t.cells().iter().map(|&c| f64::from(u8::from(c))));
    }
    let flat = tape.concat_flat(&leaves)?;
    let loss = tape.bce_with_logits(flat, &ys, positive_weight)?;
    Ok(tape.value(loss).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{build_instance, CategoryLabel, TaskKind};

    fn tiny(seed: u64) -> UbertModel {
        let vocab = Vocabulary::build(["a", "b", "c", "d", "ner", "person"]);
        let config = ModelConfig {
            hidden_dim: 8,
            ffn_dim: 16,
            max_len: 16,
            seed,
            ..ModelConfig::default()
        };
        UbertModel::new(config, vocab).unwrap()
    }

    #[test]
    fn encode_shapes_and_errors() {
        let m = tiny(1);
        assert_eq!(m.encode(&[7]).unwrap().shape(), &[1, 8]);
        assert!(matches!(m.encode(&[]), Err(ModelError::EmptyInput)));
        assert!(matches!(m.encode(&[99]), Err(ModelError::UnknownId { id: 99, .. })));
        assert!(matches!(m.encode(&[7; 17]), Err(ModelError::TooLong { len: 17, .. })));
    }

    #[test]
    fn encoder_is_contextual_and_deterministic() {
        let m = tiny(1);
        let a = m.encode(&[7, 8, 9, 10]).unwrap();
        let b = m.encode(&[8, 7, 9, 10]).unwrap();
        let diff = (0..8).map(|j| (a.at(3, j) - b.at(3, j)).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-9);
        assert_eq!(a, tiny(1).encode(&[7, 8, 9, 10]).unwrap());
    }

    #[test]
    fn projections_end_in_ones() {
        let mut m = tiny(2);
        let x = m.encode(&[7, 8, 9]).unwrap();
        let (hs, he) = m.span_projections(&x).unwrap();
        assert_eq!(hs.shape(), &[3, 9]);
        assert!((0..3).all(|i| hs.at(i, 8) == 1.0 && he.at(i, 8) == 1.0));

        let ws = m.params().get(m.layout.ws).clone();
        let bs = m.params().get(m.layout.bs).clone();
        let (we, be) = (m.layout.we, m.layout.be);
        *m.params_mut().get_mut(we) = ws;
        *m.params_mut().get_mut(be) = bs;
        let (hs, he) = m.span_projections(&x).unwrap();
        assert_eq!(hs, he);
    }

    #[test]
    fn zero_kernel_scores_nothing() {
        let mut m = tiny(3);
        let inst = build_instance(TaskKind::Ner, CategoryLabel::entity("person"), "a b c").unwrap();
        let idx = m.layout.u[0];
        m.params_mut().get_mut(idx).data_mut().fill(0.0);
        let table = m.score_table(&inst, TableRole::Single).unwrap();
        assert_eq!(table.size(), inst.len());
        assert!(table.cells().iter().all(|&s| s == 0.0));
        assert!(crate::codec::decode_table(&table, 0.5).is_empty());
    }

    #[test]
    fn bce_limits() {
        let region = Region::TextBlock { start: 0 };
        let mut target = TargetTable::new(3, TableRole::Single, region);
        target.set(0, 2, true);
        let perfect = ScoreTable::from_cells(
            3,
            TableRole::Single,
            region,
            target.cells().iter().map(|&c| if c { 50.0 } else { -50.0 }).collect(),
        )
        .unwrap();
        assert!(bce_loss(&[perfect], &[target.clone()], 1.0).unwrap() < 1e-9);
        let zeros = ScoreTable::new(3, TableRole::Single, region);
        let l = bce_loss(&[zeros.clone(), zeros], &[target.clone(), target], 1.0).unwrap();
        assert!((l - 18.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(4);
        let back = UbertModel::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.vocab(), m.vocab());
    }
}
