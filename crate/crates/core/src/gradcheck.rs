//! Central finite-difference verification of the model's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Region, TableRole, TargetTable};
use crate::model::{ModelConfig, ModelError, SpanActivation, UbertModel};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub span_activation: SpanActivation,
    /// Unit length `l`.
    pub seq_len: usize,
    pub vocab_words: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            hidden_dim: 8,
            ffn_dim: 16,
            encoder_layers: 2,
            encoder_heads: 2,
            span_activation: SpanActivation::Relu,
            seq_len: 6,
            vocab_words: 10,
            seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `|a - n| / (|a| + |n|)` over the whole tensor, 0 when both vanish.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// Worst relative error among tensors whose name starts with `prefix`.
    pub fn group_error(&self, prefix: &str) -> Option<f64> {
        self.tensors
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .map(|t| t.rel_error)
            .reduce(f64::max)
    }
}

/// Relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic) + norm(numeric);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// A small perturbed model plus one random unit whose targets touch all
/// three biaffine kernels.
pub fn fixture(cfg: &GradCheckConfig) -> Result<(UbertModel, Vec<usize>, Vec<TargetTable>), ModelError> {
    let words: Vec<String> = (0..cfg.vocab_words).map(|i| format!("v{i}")).collect();
    let vocab = Vocabulary::build(words.iter().map(String::as_str));
    let config = ModelConfig {
        hidden_dim: cfg.hidden_dim,
        ffn_dim: cfg.ffn_dim,
        encoder_layers: cfg.encoder_layers,
        encoder_heads: cfg.encoder_heads,
        max_len: cfg.seq_len.max(1),
        seed: cfg.seed,
        span_activation: cfg.span_activation,
        ..ModelConfig::default()
    };
    let mut model = UbertModel::new(config, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    // Move gains and biases off their 1/0 initial values so every path is exercised.
    for (_, t) in model.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let vocab_size = model.vocab().len();
    let ids: Vec<usize> = (0..cfg.seq_len).map(|_| rng.gen_range(0..vocab_size)).collect();
    let region = Region::TextBlock { start: 0 };
    let targets = [TableRole::Single, TableRole::TailEntity, TableRole::Coupling]
        .into_iter()
        .map(|role| {
            let mut t = TargetTable::new(cfg.seq_len, role, region);
            for r in 0..cfg.seq_len {
                for c in 0..cfg.seq_len {
                    if rng.gen_bool(0.3) {
                        t.set(r, c, true);
                    }
                }
            }
            t
        })
        .collect();
    Ok((model, ids, targets))
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, ModelError> {
    let (mut model, ids, targets) = fixture(cfg)?;
    let items = || [(ids.as_slice(), targets.as_slice())];
    let (_, grads, bound) = model.loss_and_grads(items())?;
    let analytic: Vec<Vec<f64>> = bound
        .iter()
        .zip(model.params().iter())
        .map(|(&v, (_, t))| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eps = cfg.epsilon;
    let mut tensors = Vec::with_capacity(analytic.len());
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = model.params().get(k).data()[i];
            model.params_mut().get_mut(k).data_mut()[i] = orig + eps;
            let plus = model.loss(items())?;
            model.params_mut().get_mut(k).data_mut()[i] = orig - eps;
            let minus = model.loss(items())?;
            model.params_mut().get_mut(k).data_mut()[i] = orig;
            *n = (plus - minus) / (2.0 * eps);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        tensors.push(TensorCheck {
            name: model.params().iter().nth(k).map(|(n, _)| n.to_string()).unwrap_or_default(),
            analytic_norm: norm(a),
            numeric_norm: norm(&numeric),
            rel_error: relative_error(a, &numeric),
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        tolerance: cfg.tolerance,
    })
}
