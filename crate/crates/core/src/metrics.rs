//! AUC, log loss and relative improvement.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::EncodedInstance;
use crate::model::Model;
use crate::scoring;

/// Area under the ROC curve from ranks, ties sharing the average rank
/// (equivalently: each tied positive/negative pair counts one half).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "auc over {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::input(format!("auc score {s} is not a number")));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::input(
            "auc needs at least one positive and one negative label",
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // sum of 1-based ranks of the positives, with tie groups averaged
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mean_rank * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `|model − base| / base · 100`, in percent.
pub fn relative_improvement(model_value: f64, base_value: f64) -> Result<f64> {
    if base_value == 0.0 || !base_value.is_finite() || !model_value.is_finite() {
        return Err(Error::input(format!(
            "relative improvement of {model_value} over base {base_value}"
        )));
    }
    Ok((model_value - base_value).abs() / base_value * 100.0)
}

/// Rounds a percentage to the two decimals used in reports.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub logloss: f64,
    pub n_instances: usize,
}

impl EvalReport {
    pub fn from_predictions(probabilities: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(EvalReport {
            auc: auc(probabilities, labels)?,
            logloss: scoring::log_loss(probabilities, labels)?,
            n_instances: labels.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn evaluate(model: &Model, instances: &[EncodedInstance]) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::input("cannot evaluate on an empty instance list"));
    }
    let probs = model.predict_proba(instances)?;
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    EvalReport::from_predictions(&probs, &labels)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub auc: f64,
    pub logloss: f64,
    /// Relative gap to the reference row; `None` for the reference itself.
    pub ri_auc: Option<f64>,
    pub ri_logloss: Option<f64>,
}

/// Table with columns Model, AUC, RI-AUC, Logloss, RI-Logloss, each RI
/// taken between a row and the `reference` row. The reference value is the
/// denominator, which is the convention that reproduces published comparison
/// tables (e.g. AUC 0.7820 against 0.8062 gives 3.00%, not 3.09%).
pub fn comparison_table(reports: &[(String, EvalReport)], reference: &str) -> Result<Vec<ComparisonRow>> {
    let reference_report = reports
        .iter()
        .find(|(name, _)| name == reference)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::input(format!("reference model {reference:?} not among the reports")))?;
    reports
        .iter()
        .map(|(name, r)| {
            let is_ref = name == reference;
            Ok(ComparisonRow {
                model: name.clone(),
                auc: r.auc,
                logloss: r.logloss,
                ri_auc: if is_ref {
                    None
                } else {
                    Some(round2(relative_improvement(r.auc, reference_report.auc)?))
                },
                ri_logloss: if is_ref {
                    None
                } else {
                    Some(round2(relative_improvement(r.logloss, reference_report.logloss)?))
                },
            })
        })
        .collect()
}

pub fn format_table(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let ri = |v: Option<f64>| v.map(|x| format!("{x:.2}%")).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}",
        "Model", "AUC", "RI-AUC", "Logloss", "RI-Logloss"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8}  {:>8.4}  {:>10}",
            r.model,
            r.auc,
            ri(r.ri_auc),
            r.logloss,
            ri(r.ri_logloss)
        );
    }
    out
}
