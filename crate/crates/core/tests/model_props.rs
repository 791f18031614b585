mod common;

use common::oracle::{naive_biaffine, per_cell_bce};
use common::{random_text, rng, unit};
use proptest::prelude::*;
use rand::Rng;
use ubert::codec::{Region, ScoreTable, TableRole, TargetTable};
use ubert::model::{bce_loss, ModelConfig, UbertModel};
use ubert::schema::TaskKind;
use ubert::tensor::{biaffine_contract, Tensor};
use ubert::vocab::Vocabulary;

fn model(seed: u64, d: usize) -> UbertModel {
    let words: Vec<String> = (0..20)
        .map(|i| format!("t{i}"))
        .chain(["ner", "person"].map(String::from))
        .collect();
    let config = ModelConfig {
        hidden_dim: d,
        ffn_dim: 2 * d,
        seed,
        ..ModelConfig::default()
    };
    UbertModel::new(config, Vocabulary::build(words.iter().map(String::as_str))).unwrap()
}

fn columns(t: &Tensor, keep: usize) -> Tensor {
    let cols = t.shape()[1];
    let data = t.data().chunks(cols).flat_map(|row| row[..keep].to_vec()).collect();
    Tensor::new(&[t.shape()[0], keep], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_table_matches_naive_definition(seed in any::<u64>(), n in 1usize..8) {
        let m = model(seed, 8);
        let inst = unit(TaskKind::Ner, &random_text(&mut rng(seed), n));
        let table = m.score_table(&inst, TableRole::Single).unwrap();
        let (hs, he) = m.span_projections(&m.encode(&m.ids(&inst)).unwrap()).unwrap();
        let want = naive_biaffine(&hs, m.params().by_name("u.main").unwrap(), &he);
        for (i, row) in want.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                prop_assert!((table.get(i, j) - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_matches_per_cell_closed_form(seed in any::<u64>(), tables in 1usize..4, l in 1usize..8) {
        let mut r = rng(seed);
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        let (mut flat_x, mut flat_y) = (Vec::new(), Vec::new());
        for _ in 0..tables {
            let x: Vec<f64> = (0..l * l).map(|_| r.gen_range(-8.0..8.0)).collect();
            let y: Vec<bool> = (0..l * l).map(|_| r.gen_bool(0.3)).collect();
            let region = Region::TextBlock { start: 0 };
            scores.push(ScoreTable::from_cells(l, TableRole::Single, region, x.clone()).unwrap());
            targets.push(TargetTable::from_cells(l, TableRole::Single, region, y.clone()).unwrap());
            flat_x.extend(x);
            flat_y.extend(y);
        }
        let got = bce_loss(&scores, &targets, 1.0).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - per_cell_bce(&flat_x, &flat_y)).abs() < 1e-10);
    }
}

#[test]
fn bce_limits() {
    let region = Region::TextBlock { start: 0 };
    let y: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
    let target = TargetTable::from_cells(4, TableRole::Single, region, y.clone()).unwrap();
    let perfect: Vec<f64> = y.iter().map(|&b| if b { 50.0 } else { -50.0 }).collect();
    let perfect = ScoreTable::from_cells(4, TableRole::Single, region, perfect).unwrap();
    assert!(bce_loss(&[perfect], std::slice::from_ref(&target), 1.0).unwrap() < 1e-9);
    let zero = ScoreTable::from_cells(4, TableRole::Single, region, vec![0.0; 16]).unwrap();
    let loss = bce_loss(&[zero], &[target], 1.0).unwrap();
    assert!((loss - 16.0 * std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn bce_rejects_mismatched_lists() {
    let region = Region::TextBlock { start: 0 };
    let s = ScoreTable::new(2, TableRole::Single, region);
    assert!(bce_loss(&[s], &[], 1.0).is_err());
}

#[test]
fn zeroed_augmentation_reproduces_bias_free_form() {
    let mut m = model(5, 8);
    let d = m.config().hidden_dim;
    let u = m.params_mut().by_name_mut("u.main").unwrap();
    for a in 0..=d {
        u.data_mut()[a * (d + 1) + d] = 0.0;
        u.data_mut()[d * (d + 1) + a] = 0.0;
    }
    let inst = unit(TaskKind::Ner, "t1 t2 t3 t4 t5");
    let table = m.score_table(&inst, TableRole::Single).unwrap();
    let (hs, he) = m.span_projections(&m.encode(&m.ids(&inst)).unwrap()).unwrap();
    let u = m.params().by_name("u.main").unwrap();
    let core = Tensor::from_fn(&[d, 1, d], |i| u.data()[(i / d) * (d + 1) + i % d]);
    let bias_free = biaffine_contract(&columns(&hs, d), &core, &columns(&he, d)).unwrap();
    assert_eq!(table.cells(), bias_free.data());
}

#[test]
fn changing_end_projection_leaves_start_projection() {
    let mut m = model(6, 8);
    let x = m.encode(&m.ids(&unit(TaskKind::Ner, "t1 t2 t3"))).unwrap();
    let (hs0, _) = m.span_projections(&x).unwrap();
    for v in m.params_mut().by_name_mut("ffn_e.w").unwrap().data_mut() {
        *v *= -3.0;
    }
    let (hs1, _) = m.span_projections(&x).unwrap();
    assert_eq!(hs0, hs1);
}

#[test]
fn tied_projections_give_equal_outputs() {
    let mut m = model(7, 8);
    for (from, to) in [("ffn_s.w", "ffn_e.w"), ("ffn_s.b", "ffn_e.b")] {
        let src = m.params().by_name(from).unwrap().clone();
        *m.params_mut().by_name_mut(to).unwrap() = src;
    }
    let x = m.encode(&m.ids(&unit(TaskKind::Ner, "t4 t5 t6 t7"))).unwrap();
    let (hs, he) = m.span_projections(&x).unwrap();
    assert_eq!(hs, he);
    let d = m.config().hidden_dim;
    assert!(hs.data().chunks(d + 1).all(|row| row[d] == 1.0));
}

/// Dead units of the end projection can be reparameterized without touching
/// its outputs; the start projection's gradient must not notice.
#[test]
fn start_gradient_ignores_end_reparameterization() {
    let inst = unit(TaskKind::Ner, "t1 t2 t3 t4 t5 t6");
    let l = inst.len();
    let region = Region::for_instance(&inst);
    let mut target = TargetTable::new(l, TableRole::Single, region);
    target.set(inst.text_token_offset + 1, inst.text_token_offset + 3, true);
    let targets = [target];

    let mut base = model(8, 8);
    let d = base.config().hidden_dim;
    let dead = [1usize, 4];
    for &k in &dead {
        base.params_mut().by_name_mut("ffn_e.b").unwrap().data_mut()[k] = -1e3;
    }
    let mut other = base.clone();
    let mut r = rng(9);
    for &k in &dead {
        for i in 0..d {
            other.params_mut().by_name_mut("ffn_e.w").unwrap().data_mut()[i * d + k] = r.gen_range(-1.0..1.0);
        }
        other.params_mut().by_name_mut("ffn_e.b").unwrap().data_mut()[k] = -2e3;
    }
    let ids = base.ids(&inst);
    let x = base.encode(&ids).unwrap();
    assert_eq!(base.span_projections(&x).unwrap(), other.span_projections(&x).unwrap());

    let grad_ws = |m: &UbertModel| {
        let (_, g, bound) = m.loss_and_grads([(ids.as_slice(), targets.as_slice())]).unwrap();
        g.wrt(bound[m.params().index_of("ffn_s.w").unwrap()]).unwrap().to_vec()
    };
    let (a, b) = (grad_ws(&base), grad_ws(&other));
    assert!(a.iter().any(|&v| v != 0.0));
    assert_eq!(a, b);
}

#[test]
fn encoder_is_contextual_and_deterministic() {
    let m = model(10, 8);
    let ids = m.ids(&unit(TaskKind::Ner, "t1 t2 t3 t4"));
    let x = m.encode(&ids).unwrap();
    assert_eq!(x, m.encode(&ids).unwrap());
    let mut swapped = ids.clone();
    let n = swapped.len();
    swapped.swap(n - 1, n - 3);
    let y = m.encode(&swapped).unwrap();
    let d = m.config().hidden_dim;
    let diff: f64 = (0..d).map(|k| (x.at(0, k) - y.at(0, k)).abs()).sum();
    assert!(diff > 1e-9);
    assert_eq!(m.encode(&ids[..1]).unwrap().shape(), &[1, d]);
}

#[test]
fn zero_kernel_scores_nothing() {
    let mut m = model(11, 8);
    for v in m.params_mut().by_name_mut("u.main").unwrap().data_mut() {
        *v = 0.0;
    }
    let inst = unit(TaskKind::Ner, "t1 t2 t3 t4 t5 t6 t7");
    let table = m.score_table(&inst, TableRole::Single).unwrap();
    assert!(table.cells().iter().all(|&s| s == 0.0));
    assert!(ubert::codec::decode_table(&table, 0.5).is_empty());
}
