//! Edge-attention and node-weight explanations for trained Fi-GNN models.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::EncodedInstance;
use crate::model::{Model, ModelKind};
use crate::numerics::Tensor;

/// Default number of instances explained individually.
pub const DEFAULT_CASES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseExplanation {
    /// Position of the instance in the input.
    pub index: usize,
    pub label: u8,
    pub probability: f64,
    pub adjacency: Tensor,
    pub node_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub field_names: Vec<String>,
    /// Mean adjacency over all explained instances.
    pub edge_heatmap: Tensor,
    /// Mean node weights over all explained instances.
    pub node_weights: Vec<f64>,
    pub instances: usize,
    pub cases: Vec<CaseExplanation>,
}

fn require_fignn(model: &Model) -> Result<()> {
    if model.config().kind != ModelKind::Fignn {
        return Err(Error::config(format!(
            "explanations need a fignn checkpoint; a {} model has no edge or node attention",
            model.config().kind
        )));
    }
    Ok(())
}

/// Averages adjacency and node weights over `instances` and keeps the first
/// `cases` of them individually.
pub fn explain(model: &Model, instances: &[EncodedInstance], field_names: &[String], cases: usize) -> Result<ExplanationBundle> {
    require_fignn(model)?;
    let m = model.config().field_count;
    if field_names.len() != m {
        return Err(Error::input(format!(
            "{} field names for a {m}-field model",
            field_names.len()
        )));
    }
    if instances.is_empty() {
        return Err(Error::input("no instances to explain"));
    }
    let mut adjacency_sum = Tensor::zeros(m, m);
    let mut weight_sum = vec![0.0; m];
    let mut kept = Vec::with_capacity(cases.min(instances.len()));
    for (index, inst) in instances.iter().enumerate() {
        let p = model.predict(inst)?;
        let a = p
            .adjacency
            .ok_or_else(|| Error::Invariant("fignn prediction without adjacency".into()))?;
        for (s, v) in adjacency_sum.data_mut().iter_mut().zip(a.data()) {
            *s += v;
        }
        for (s, v) in weight_sum.iter_mut().zip(&p.node_weights) {
            *s += v;
        }
        if index < cases {
            kept.push(CaseExplanation {
                index,
                label: inst.label,
                probability: p.probability,
                adjacency: a,
                node_weights: p.node_weights,
            });
        }
    }
    let n = instances.len() as f64;
    adjacency_sum.data_mut().iter_mut().for_each(|v| *v /= n);
    weight_sum.iter_mut().for_each(|v| *v /= n);
    Ok(ExplanationBundle {
        field_names: field_names.to_vec(),
        edge_heatmap: adjacency_sum,
        node_weights: weight_sum,
        instances: instances.len(),
        cases: kept,
    })
}

/// Square matrix as CSV with field names on both axes (rows are sources of
/// the attention, columns its targets).
pub fn matrix_csv(field_names: &[String], matrix: &Tensor) -> String {
    let mut out = String::from("field");
    for name in field_names {
        out.push(',');
        out.push_str(&csv_escape(name));
    }
    out.push('\n');
    for (i, name) in field_names.iter().enumerate() {
        out.push_str(&csv_escape(name));
        for v in matrix.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// One row per field: the averaged weight followed by one column per case.
pub fn node_weights_csv(bundle: &ExplanationBundle) -> String {
    let mut out = String::from("field,global");
    for c in &bundle.cases {
        let _ = write!(out, ",case{}", c.index);
    }
    out.push('\n');
    for (i, name) in bundle.field_names.iter().enumerate() {
        out.push_str(&csv_escape(name));
        let _ = write!(out, ",{}", bundle.node_weights[i]);
        for c in &bundle.cases {
            let _ = write!(out, ",{}", c.node_weights[i]);
        }
        out.push('\n');
    }
    out
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("f{i}")).collect()
    }

    fn instances(m: usize, n: usize) -> Vec<EncodedInstance> {
        (0..n)
            .map(|k| EncodedInstance {
                label: (k % 2) as u8,
                features: (0..m).map(|f| f * 3 + k % 3).collect(),
            })
            .collect()
    }

    fn model(m: usize) -> Model {
        let cfg = ModelConfig {
            embed_dim: 4,
            state_dim: 4,
            ..ModelConfig::new(ModelKind::Fignn, m, 3 * m)
        };
        Model::new(cfg, 2).unwrap()
    }

    #[test]
    fn global_map_keeps_adjacency_invariants() {
        let b = explain(&model(4), &instances(4, 10), &names(4), DEFAULT_CASES).unwrap();
        assert_eq!(b.cases.len(), 4);
        for i in 0..4 {
            assert_eq!(b.edge_heatmap.get(i, i), 0.0);
            assert!((b.edge_heatmap.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(b.node_weights.iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn two_fields_always_swap() {
        let b = explain(&model(2), &instances(2, 5), &names(2), 2).unwrap();
        assert_eq!(b.edge_heatmap.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn csv_layouts() {
        let b = explain(&model(3), &instances(3, 6), &names(3), 2).unwrap();
        let edges = matrix_csv(&b.field_names, &b.edge_heatmap);
        let lines: Vec<&str> = edges.lines().collect();
        assert_eq!(lines[0], "field,f0,f1,f2");
        assert!(lines[1].starts_with("f0,0,"));
        let nodes = node_weights_csv(&b);
        assert_eq!(nodes.lines().next().unwrap(), "field,global,case0,case1");
        assert_eq!(nodes.lines().count(), 4);
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
    }

    #[test]
    fn baselines_cannot_be_explained() {
        let lr = Model::new(ModelConfig::new(ModelKind::Lr, 3, 9), 0).unwrap();
        let err = explain(&lr, &instances(3, 2), &names(3), 1).unwrap_err();
        assert!(err.to_string().contains("fignn"));
    }
}
