//! Deliberately naive reference implementations used only by tests.

use std::collections::BTreeSet;

use ubert::codec::{Annotation, LocatingDesignator, Region, Relation, ScoreTable, Span, TableRole};
use ubert::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn legal(table: &ScoreTable, r: usize, c: usize) -> bool {
    let inside = match table.region() {
        Region::Cls => return r == 0 && c == 0,
        Region::TextBlock { start } => r >= start && c >= start,
    };
    inside && (table.role() == TableRole::Coupling || r <= c)
}

pub fn active(table: &ScoreTable, r: usize, c: usize, threshold: f64) -> bool {
    legal(table, r, c) && sigmoid(table.get(r, c)) > threshold
}

fn offset(table: &ScoreTable) -> usize {
    match table.region() {
        Region::Cls => 0,
        Region::TextBlock { start } => start,
    }
}

/// Scan of all `l * l` cells.
pub fn oracle_designators(table: &ScoreTable, threshold: f64) -> Vec<LocatingDesignator> {
    let l = table.size();
    let mut out = Vec::new();
    for r in 0..l {
        for c in 0..l {
            if active(table, r, c, threshold) {
                out.push(LocatingDesignator {
                    row: r,
                    col: c,
                    table_role: table.role(),
                });
            }
        }
    }
    out
}

fn oracle_spans(table: &ScoreTable, threshold: f64) -> BTreeSet<Span> {
    let o = offset(table);
    oracle_designators(table, threshold)
        .into_iter()
        .map(|d| Span::new(d.row - o, d.col - o))
        .collect()
}

/// Exhaustive decoder: one `Cls` table is a label flag, one span table an
/// entity set, and head/tail/coupling tables a relation set found by
/// enumerating every `(s_h, e_h, s_t, e_t)` quadruple.
pub fn oracle_decode(tables: &[ScoreTable], threshold: f64) -> Annotation {
    match tables {
        [t] if t.region() == Region::Cls => Annotation::LabelFlag(t.size() > 0 && active(t, 0, 0, threshold)),
        [t] => Annotation::EntitySet(oracle_spans(t, threshold)),
        [head, tail, coupling] => {
            let l = head.size();
            let o = offset(coupling);
            let mut out = BTreeSet::new();
            for sh in 0..l {
                for eh in 0..l {
                    for st in 0..l {
                        for et in 0..l {
                            if active(head, sh, eh, threshold)
                                && active(tail, st, et, threshold)
                                && active(coupling, sh, st, threshold)
                                && active(coupling, eh, et, threshold)
                            {
                                out.insert(Relation {
                                    head: Span::new(sh - o, eh - o),
                                    tail: Span::new(st - o, et - o),
                                });
                            }
                        }
                    }
                }
            }
            Annotation::RelationSet(out)
        }
        _ => panic!("oracle_decode takes one or three tables"),
    }
}

/// `score[i][j] = sum_a sum_b hs[i][a] * u[a][0][b] * he[j][b]` by loops.
pub fn naive_biaffine(hs: &Tensor, u: &Tensor, he: &Tensor) -> Vec<Vec<f64>> {
    let (ls, p) = (hs.shape()[0], hs.shape()[1]);
    let le = he.shape()[0];
    let q = he.shape()[1];
    let mut out = vec![vec![0.0; le]; ls];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            for a in 0..p {
                for b in 0..q {
                    *cell += hs.data()[i * p + a] * u.data()[a * q + b] * he.data()[j * q + b];
                }
            }
        }
    }
    out
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

/// `-sum_i y_i ln(sigmoid(x_i)) + (1 - y_i) ln(1 - sigmoid(x_i))`, cell by cell.
pub fn per_cell_bce(logits: &[f64], targets: &[bool]) -> f64 {
    let mut total = 0.0;
    for (&x, &y) in logits.iter().zip(targets) {
        let p = sigmoid(x);
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    total
}
