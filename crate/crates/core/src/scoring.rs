//! Graph-level readout and the training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_loss_value, Tape, Tensor, Var, PROB_CLAMP};

/// Per-node score head and gate head, both affine maps `d′ → 1`
/// (`d′ × 1` weights, `1 × 1` bias).
#[derive(Debug, Clone, Copy)]
pub struct ScoringVars {
    pub score_w: Var,
    pub score_b: Var,
    pub gate_w: Var,
    pub gate_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOutput {
    /// `m × 1` per-node scores ŷᵢ.
    pub node_scores: Var,
    /// `m × 1` attentional node weights aᵢ ∈ (0, 1).
    pub node_weights: Var,
    pub logit: Var,
    pub probability: Var,
}

/// ŷᵢ = score(hᵢ), aᵢ = σ(gate(hᵢ)), logit = Σ aᵢŷᵢ, probability = σ(logit).
pub fn score(tape: &mut Tape, states: Var, vars: &ScoringVars) -> Result<ScoreOutput> {
    let s = tape.matmul(states, vars.score_w)?;
    let node_scores = tape.add_bias(s, vars.score_b)?;
    let g = tape.matmul(states, vars.gate_w)?;
    let g = tape.add_bias(g, vars.gate_b)?;
    let node_weights = tape.sigmoid(g)?;
    let weighted = tape.mul(node_weights, node_scores)?;
    let logit = tape.sum(weighted)?;
    let probability = tape.sigmoid(logit)?;
    Ok(ScoreOutput {
        node_scores,
        node_weights,
        logit,
        probability,
    })
}

/// Inference result for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Click probability, clamped into `[1e-7, 1 − 1e-7]`.
    pub probability: f64,
    pub logit: f64,
    /// Empty for the linear baselines.
    pub node_scores: Vec<f64>,
    pub node_weights: Vec<f64>,
    /// Edge weights `A` (row-major `m × m`), absent for the baselines.
    pub adjacency: Option<Tensor>,
}

impl Prediction {
    pub(crate) fn clamp_probability(p: f64) -> f64 {
        p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn log_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::input(format!(
            "log loss over {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    Ok(log_loss_value(predictions, &y))
}

/// Attentional node weights, one per field.
pub fn node_importance(prediction: &Prediction) -> Vec<f64> {
    prediction.node_weights.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, ParameterStore};

    fn vars(tape: &mut Tape, sw: Vec<f64>, sb: f64, gw: Vec<f64>, gb: f64) -> ScoringVars {
        ScoringVars {
            score_w: tape.constant(Tensor::column_vector(sw)),
            score_b: tape.constant(Tensor::scalar(sb)),
            gate_w: tape.constant(Tensor::column_vector(gw)),
            gate_b: tape.constant(Tensor::scalar(gb)),
        }
    }

    #[test]
    fn zero_heads_predict_one_half() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]));
        let v = vars(&mut tape, vec![0.0, 0.0], 0.0, vec![0.0, 0.0], 0.0);
        let out = score(&mut tape, h, &v).unwrap();
        assert_eq!(tape.scalar(out.logit), 0.0);
        assert_eq!(tape.scalar(out.probability), 0.5);
        assert_eq!(tape.value(out.node_weights).data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_gate_halves_the_score_sum() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]));
        let v = vars(&mut tape, vec![0.5, -1.0], 0.25, vec![0.0, 0.0], 0.0);
        let out = score(&mut tape, h, &v).unwrap();
        let ys = [0.5 - 2.0 + 0.25, -1.5 - 0.5 + 0.25];
        assert!((tape.scalar(out.logit) - 0.5 * (ys[0] + ys[1])).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_readout() {
        let h = [[0.4, -0.6], [1.2, 0.3]];
        let (sw, sb, gw, gb) = ([0.7, -0.2], 0.1, [-0.5, 0.9], 0.3);
        let y: Vec<f64> = h.iter().map(|r| sw[0] * r[0] + sw[1] * r[1] + sb).collect();
        let a: Vec<f64> = h.iter().map(|r| sigmoid(gw[0] * r[0] + gw[1] * r[1] + gb)).collect();
        let logit = a[0] * y[0] + a[1] * y[1];

        let store = ParameterStore::new();
        let mut tape = Tape::new(store.values());
        let hv = tape.constant(Tensor::from_rows(&h.map(|r| r.to_vec())));
        let v = vars(&mut tape, sw.to_vec(), sb, gw.to_vec(), gb);
        let out = score(&mut tape, hv, &v).unwrap();
        assert!((tape.scalar(out.logit) - logit).abs() < 1e-15);
        assert!((tape.scalar(out.probability) - sigmoid(logit)).abs() < 1e-15);
        for (got, want) in tape.value(out.node_weights).data().iter().zip(&a) {
            assert!((got - want).abs() < 1e-15 && *got > 0.0 && *got < 1.0);
        }
    }

    #[test]
    fn log_loss_examples() {
        assert!((log_loss(&[0.5, 0.5, 0.5], &[1, 0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_loss(&[0.9, 0.2], &[1, 0]).unwrap() - 0.164252033486018).abs() < 1e-12);
        assert!(log_loss(&[], &[]).is_err());
        assert!(log_loss(&[0.5], &[1, 0]).is_err());
        let l = log_loss(&[1.0, 0.0], &[0, 1]).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }
}
