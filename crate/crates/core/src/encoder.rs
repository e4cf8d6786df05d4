//! Field embeddings and the multi-head self-attention that turns them into
//! initial node states.

use crate::error::{Error, Result};
use crate::numerics::{Axis, Tape, Var};

/// Query/key/value projections of one head, each `dᵢ × d`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Gathers one embedding row per field into an `m × d` matrix.
pub fn embed(tape: &mut Tape, table: Var, features: &[usize]) -> Result<Var> {
    let (rows, _) = tape.shape(table);
    let mut picked = Vec::with_capacity(features.len());
    for &f in features {
        if f >= rows {
            return Err(Error::input(format!(
                "feature index {f} outside an embedding table of {rows} rows"
            )));
        }
        picked.push(tape.slice(table, Axis::Rows, f, 1)?);
    }
    tape.concat(&picked, Axis::Rows)
}

/// `softmax(Q Kᵀ / √dᵢ) V` with `Q = E W_Qᵀ` (and likewise K, V); every
/// field attends to every field, itself included.
pub fn attention_head(tape: &mut Tape, fields: Var, head: &HeadVars) -> Result<Var> {
    let (_, d) = tape.shape(fields);
    let (head_dim, qd) = tape.shape(head.query);
    if qd != d || tape.shape(head.key) != (head_dim, d) || tape.shape(head.value) != (head_dim, d) {
        return Err(Error::Shape(format!(
            "attention head projections {:?}/{:?}/{:?} for {d}-dim embeddings",
            tape.shape(head.query),
            tape.shape(head.key),
            tape.shape(head.value)
        )));
    }
    let project = |tape: &mut Tape, w: Var| -> Result<Var> {
        let wt = tape.transpose(w)?;
        tape.matmul(fields, wt)
    };
    let q = project(tape, head.query)?;
    let k = project(tape, head.key)?;
    let v = project(tape, head.value)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (head_dim as f64).sqrt())?;
    let weights = tape.row_softmax(logits, None)?;
    tape.matmul(weights, v)
}

/// `H¹ = ReLU(H₁ ⊕ … ⊕ H_h)`, heads concatenated along the feature axis.
pub fn initial_states(tape: &mut Tape, fields: Var, heads: &[HeadVars]) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::config("at least one attention head is required"));
    }
    let outs = heads
        .iter()
        .map(|h| attention_head(tape, fields, h))
        .collect::<Result<Vec<_>>>()?;
    let joined = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat(&outs, Axis::Cols)?
    };
    tape.relu(joined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParameterStore, Tensor};

    fn head(tape: &mut Tape, q: Tensor, k: Tensor, v: Tensor) -> HeadVars {
        HeadVars {
            query: tape.constant(q),
            key: tape.constant(k),
            value: tape.constant(v),
        }
    }

    #[test]
    fn embed_gathers_rows_and_checks_range() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let table = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let e = embed(&mut tape, table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(embed(&mut tape, table, &[3]).is_err());
    }

    #[test]
    fn single_field_attends_to_itself() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let e = tape.constant(Tensor::row_vector(vec![0.5, -1.0]));
        let h = head(
            &mut tape,
            Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]),
            Tensor::from_rows(&[vec![-1.0, 0.5], vec![3.0, 0.0]]),
            Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]),
        );
        let out = attention_head(&mut tape, e, &h).unwrap();
        // value vector: W_V e = [2*0.5 + 1*-1, 0*0.5 + 3*-1]
        assert_eq!(tape.value(out).data(), &[0.0, -3.0]);
    }

    #[test]
    fn hand_computed_head() {
        // E: 3×4, projections 2×4
        let e = Tensor::from_rows(&[
            vec![0.2, -0.1, 0.4, 0.0],
            vec![-0.3, 0.5, 0.1, 0.2],
            vec![0.0, 0.3, -0.2, 0.6],
        ]);
        let wq = Tensor::from_rows(&[vec![0.5, 0.0, -0.5, 1.0], vec![0.1, 0.2, 0.3, 0.4]]);
        let wk = Tensor::from_rows(&[vec![1.0, -1.0, 0.0, 0.5], vec![0.0, 0.5, 0.5, -0.5]]);
        let wv = Tensor::from_rows(&[vec![0.3, 0.3, 0.3, 0.3], vec![-0.2, 0.4, 0.0, 1.0]]);

        // straight-line evaluation
        let proj = |w: &Tensor| -> Vec<Vec<f64>> {
            (0..3)
                .map(|i| (0..2).map(|a| (0..4).map(|k| w.get(a, k) * e.get(i, k)).sum()).collect())
                .collect()
        };
        let (q, k, v) = (proj(&wq), proj(&wk), proj(&wv));
        let mut expect = vec![0.0; 6];
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..3 {
                let w = logits[j].exp() / z;
                expect[i * 2] += w * v[j][0];
                expect[i * 2 + 1] += w * v[j][1];
            }
        }

        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let ev = tape.constant(e.clone());
        let h = head(&mut tape, wq, wk, wv);
        let out = attention_head(&mut tape, ev, &h).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_fields_give_identical_rows() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let e = tape.constant(Tensor::from_rows(&vec![vec![0.3, -0.7]; 3]));
        let h = head(
            &mut tape,
            Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.5]]),
            Tensor::from_rows(&[vec![-1.0, 0.5], vec![2.0, 0.0]]),
            Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]),
        );
        let out = attention_head(&mut tape, e, &h).unwrap();
        let t = tape.value(out);
        assert_eq!(t.row(0), t.row(1));
        assert_eq!(t.row(1), t.row(2));
    }

    #[test]
    fn concat_layout_and_relu() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let e = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        // head 1 copies the embedding, head 2 negates it
        let h1 = head(&mut tape, Tensor::zeros(2, 2), Tensor::zeros(2, 2), Tensor::identity(2));
        let mut neg = Tensor::identity(2);
        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
        let h2 = head(&mut tape, Tensor::zeros(2, 2), Tensor::zeros(2, 2), neg);
        let out = initial_states(&mut tape, e, &[h1, h2]).unwrap();
        // zero logits: each row averages both values
        assert_eq!(tape.value(out).to_rows(), vec![vec![0.5, 0.5, 0.0, 0.0]; 2]);
        assert_eq!(tape.shape(out), (2, 4));

        let only_neg = initial_states(&mut tape, e, &[h2]).unwrap();
        assert!(tape.value(only_neg).data().iter().all(|&v| v == 0.0));
        assert!(initial_states(&mut tape, e, &[]).is_err());
    }
}
