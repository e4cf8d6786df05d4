//! Model assembly: configuration, parameter layout and the forward pass for
//! Fi-GNN and the linear baselines.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, HeadVars};
use crate::error::{Error, Result};
use crate::featurestore::EncodedInstance;
use crate::graphcore::{self, EdgeTransform, GruVars, PreparedTransform, Propagation};
use crate::parallel;
use crate::numerics::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::scoring::{self, Prediction, ScoringVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Fm,
    Fignn,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelKind::Lr),
            "fm" => Ok(ModelKind::Fm),
            "fignn" | "fi-gnn" => Ok(ModelKind::Fignn),
            other => Err(Error::config(format!("unknown model kind {other:?} (lr, fm, fignn)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lr => "lr",
            ModelKind::Fm => "fm",
            ModelKind::Fignn => "fignn",
        })
    }
}

/// Switches for the ablated Fi-GNN variants. All off is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Replace attentional edge weights with a fixed adjacency (-W).
    pub disable_edge_attention: bool,
    /// One shared transform matrix on every edge (-T).
    pub disable_edge_transform: bool,
    /// Plain GRU update without adding back H¹ (-R).
    pub disable_residual: bool,
    /// With attention disabled, use raw ones instead of `1/(m−1)`.
    pub binary_adjacency: bool,
}

impl AblationConfig {
    pub const FULL: AblationConfig = AblationConfig {
        disable_edge_attention: false,
        disable_edge_transform: false,
        disable_residual: false,
        binary_adjacency: false,
    };

    /// Parses a comma-separated flag list such as
    /// `no-edge-attention,no-residual`. Short forms `W`, `T`, `R`, `E`
    /// (= `W` + `T`) are accepted with or without a leading dash.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut cfg = AblationConfig::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.trim_start_matches('-').to_ascii_lowercase().as_str() {
                "no-edge-attention" | "w" => cfg.disable_edge_attention = true,
                "no-edge-transform" | "t" => cfg.disable_edge_transform = true,
                "no-residual" | "r" => cfg.disable_residual = true,
                "no-edge-wise" | "e" | "w/t" => {
                    cfg.disable_edge_attention = true;
                    cfg.disable_edge_transform = true;
                }
                "e/r" => {
                    cfg.disable_edge_attention = true;
                    cfg.disable_edge_transform = true;
                    cfg.disable_residual = true;
                }
                "binary-adjacency" => cfg.binary_adjacency = true,
                other => return Err(Error::config(format!("unknown ablation flag {other:?}"))),
            }
        }
        Ok(cfg)
    }

    /// Short variant label, e.g. `Fi-GNN(-W/T)`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.disable_edge_attention {
            parts.push("W");
        }
        if self.disable_edge_transform {
            parts.push("T");
        }
        if self.disable_residual {
            parts.push("R");
        }
        if parts.is_empty() {
            "Fi-GNN".to_string()
        } else {
            format!("Fi-GNN(-{})", parts.join("/"))
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of fields m.
    pub field_count: usize,
    /// Total feature count V over all fields.
    pub vocab_size: usize,
    /// Field embedding size d.
    #[serde(default = "defaults::embed_dim")]
    pub embed_dim: usize,
    /// Node state size d′ (sum of head sizes).
    #[serde(default = "defaults::state_dim")]
    pub state_dim: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    /// Interaction steps T.
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    /// FM latent size k.
    #[serde(default = "defaults::embed_dim")]
    pub fm_factors: usize,
    #[serde(default = "defaults::leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub ablation: AblationConfig,
}

mod defaults {
    pub fn embed_dim() -> usize {
        16
    }
    pub fn state_dim() -> usize {
        16
    }
    pub fn heads() -> usize {
        2
    }
    pub fn steps() -> usize {
        2
    }
    pub fn leaky_slope() -> f64 {
        0.01
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind, field_count: usize, vocab_size: usize) -> Self {
        ModelConfig {
            kind,
            field_count,
            vocab_size,
            embed_dim: defaults::embed_dim(),
            state_dim: defaults::state_dim(),
            heads: defaults::heads(),
            steps: defaults::steps(),
            fm_factors: defaults::embed_dim(),
            leaky_slope: defaults::leaky_slope(),
            ablation: AblationConfig::default(),
        }
    }

    /// Best full-scale settings reported for the Criteo benchmark (d′ = 64, T = 3).
    pub fn criteo_like(field_count: usize, vocab_size: usize) -> Self {
        ModelConfig {
            state_dim: 64,
            steps: 3,
            ..Self::new(ModelKind::Fignn, field_count, vocab_size)
        }
    }

    /// Best full-scale settings reported for the Avazu benchmark (d′ = 32, T = 2).
    pub fn avazu_like(field_count: usize, vocab_size: usize) -> Self {
        ModelConfig {
            state_dim: 32,
            steps: 2,
            ..Self::new(ModelKind::Fignn, field_count, vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.state_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.field_count < 2 {
            return bad(format!("need at least 2 fields, got {}", self.field_count));
        }
        if self.vocab_size < self.field_count {
            return bad(format!(
                "vocabulary of {} features cannot cover {} fields",
                self.vocab_size, self.field_count
            ));
        }
        match self.kind {
            ModelKind::Lr => {}
            ModelKind::Fm => {
                if self.fm_factors < 1 {
                    return bad("fm_factors must be at least 1".into());
                }
            }
            ModelKind::Fignn => {
                if self.embed_dim < 1 || self.state_dim < 1 {
                    return bad("embedding and state sizes must be positive".into());
                }
                if self.heads < 1 || !self.state_dim.is_multiple_of(self.heads) {
                    return bad(format!(
                        "state_dim {} must split evenly over {} heads",
                        self.state_dim, self.heads
                    ));
                }
                if self.steps < 1 {
                    return bad("steps must be at least 1".into());
                }
                if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
                    return bad("leaky_slope must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FiGnnIds {
    table: ParamId,
    heads: Vec<[ParamId; 3]>,
    w_w: Option<ParamId>,
    transform: TransformIds,
    b_p: ParamId,
    gru: [ParamId; 9],
    scoring: [ParamId; 4],
}

#[derive(Debug, Clone)]
enum TransformIds {
    PerNode { w_out: Vec<ParamId>, w_in: Vec<ParamId> },
    Shared(ParamId),
}

#[derive(Debug, Clone)]
enum Layout {
    Lr { w: ParamId, b: ParamId },
    Fm { w: ParamId, b: ParamId, v: ParamId },
    FiGnn(FiGnnIds),
}

const GRU_NAMES: [&str; 9] = ["Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh"];

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub probability: Var,
    pub logit: Var,
    pub adjacency: Option<Var>,
    pub node_scores: Option<Var>,
    pub node_weights: Option<Var>,
}

/// Configuration plus resolved parameter handles; separate from the
/// parameter values so training can borrow both independently.
#[derive(Debug, Clone)]
pub struct Architecture {
    config: ModelConfig,
    layout: Layout,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParameterStore,
}

/// Creates every parameter of `config` in canonical order. With `rng`
/// absent all tensors start at zero (used to enumerate names and shapes).
fn allocate(config: &ModelConfig, store: &mut ParameterStore, rng: Option<&mut ChaCha8Rng>) -> Result<()> {
    let mut zero_rng = ChaCha8Rng::seed_from_u64(0);
    let (rng, scale_on) = match rng {
        Some(r) => (r, true),
        None => (&mut zero_rng, false),
    };
    let mut matrix = |store: &mut ParameterStore, name: String, r: usize, c: usize, s: f64| {
        if scale_on {
            store.insert_uniform(name, r, c, s, rng).map(|_| ())
        } else {
            store.insert_zeros(name, r, c).map(|_| ())
        }
    };
    let (v, m) = (config.vocab_size, config.field_count);
    match config.kind {
        ModelKind::Lr => {
            store.insert_zeros("lr.w", v, 1)?;
            store.insert_zeros("lr.b", 1, 1)?;
        }
        ModelKind::Fm => {
            store.insert_zeros("lr.w", v, 1)?;
            store.insert_zeros("lr.b", 1, 1)?;
            let k = config.fm_factors;
            matrix(store, "fm.v".into(), v, k, 1.0 / (k as f64).sqrt())?;
        }
        ModelKind::Fignn => {
            let (d, dp) = (config.embed_dim, config.state_dim);
            let s = 1.0 / (dp as f64).sqrt();
            matrix(store, "embed.table".into(), v, d, s)?;
            for k in 0..config.heads {
                for part in ["Q", "K", "V"] {
                    matrix(store, format!("attn.head{k}.{part}"), config.head_dim(), d, s)?;
                }
            }
            if !config.ablation.disable_edge_attention {
                matrix(store, "graph.W_w".into(), 2 * dp, 1, s)?;
            }
            if config.ablation.disable_edge_transform {
                matrix(store, "graph.W_p".into(), dp, dp, s)?;
            } else {
                for i in 0..m {
                    matrix(store, format!("graph.node{i}.W_out"), dp, dp, s)?;
                    matrix(store, format!("graph.node{i}.W_in"), dp, dp, s)?;
                }
            }
            store.insert_zeros("graph.b_p", 1, dp)?;
            for name in GRU_NAMES {
                if name.starts_with('b') {
                    store.insert_zeros(format!("graph.gru.{name}"), 1, dp)?;
                } else {
                    matrix(store, format!("graph.gru.{name}"), dp, dp, s)?;
                }
            }
            matrix(store, "score.w".into(), dp, 1, s)?;
            store.insert_zeros("score.b", 1, 1)?;
            matrix(store, "gate.w".into(), dp, 1, s)?;
            store.insert_zeros("gate.b", 1, 1)?;
        }
    }
    Ok(())
}

impl Architecture {
    fn resolve(config: &ModelConfig, store: &ParameterStore) -> Result<Self> {
        let id = |n: &str| store.id(n);
        let layout = match config.kind {
            ModelKind::Lr => Layout::Lr {
                w: id("lr.w")?,
                b: id("lr.b")?,
            },
            ModelKind::Fm => Layout::Fm {
                w: id("lr.w")?,
                b: id("lr.b")?,
                v: id("fm.v")?,
            },
            ModelKind::Fignn => {
                let heads = (0..config.heads)
                    .map(|k| {
                        Ok([
                            id(&format!("attn.head{k}.Q"))?,
                            id(&format!("attn.head{k}.K"))?,
                            id(&format!("attn.head{k}.V"))?,
                        ])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let w_w = if config.ablation.disable_edge_attention {
                    None
                } else {
                    Some(id("graph.W_w")?)
                };
                let transform = if config.ablation.disable_edge_transform {
                    TransformIds::Shared(id("graph.W_p")?)
                } else {
                    TransformIds::PerNode {
                        w_out: (0..config.field_count)
                            .map(|i| id(&format!("graph.node{i}.W_out")))
                            .collect::<Result<_>>()?,
                        w_in: (0..config.field_count)
                            .map(|i| id(&format!("graph.node{i}.W_in")))
                            .collect::<Result<_>>()?,
                    }
                };
                let mut gru = [ParamId(0); 9];
                for (slot, name) in gru.iter_mut().zip(GRU_NAMES) {
                    *slot = id(&format!("graph.gru.{name}"))?;
                }
                Layout::FiGnn(FiGnnIds {
                    table: id("embed.table")?,
                    heads,
                    w_w,
                    transform,
                    b_p: id("graph.b_p")?,
                    gru,
                    scoring: [id("score.w")?, id("score.b")?, id("gate.w")?, id("gate.b")?],
                })
            }
        };
        Ok(Architecture {
            config: config.clone(),
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Records the forward pass for one instance on `tape`.
    pub fn forward(&self, tape: &mut Tape, instance: &EncodedInstance) -> Result<Forward> {
        let cfg = &self.config;
        if instance.features.len() != cfg.field_count {
            return Err(Error::input(format!(
                "instance has {} features, model expects {}",
                instance.features.len(),
                cfg.field_count
            )));
        }
        match &self.layout {
            Layout::Lr { w, b } => {
                let logit = linear_logit(tape, *w, *b, &instance.features)?;
                let probability = tape.sigmoid(logit)?;
                Ok(Forward::flat(probability, logit))
            }
            Layout::Fm { w, b, v } => {
                let linear = linear_logit(tape, *w, *b, &instance.features)?;
                let table = tape.param(*v);
                let vecs = encoder::embed(tape, table, &instance.features)?;
                // ½(‖Σv‖² − Σ‖v‖²)
                let ones = tape.constant(Tensor::filled(1, cfg.field_count, 1.0));
                let total = tape.matmul(ones, vecs)?;
                let total_sq = tape.mul(total, total)?;
                let total_sq = tape.sum(total_sq)?;
                let each_sq = tape.mul(vecs, vecs)?;
                let each_sq = tape.sum(each_sq)?;
                let diff = tape.sub(total_sq, each_sq)?;
                let pairwise = tape.scale(diff, 0.5)?;
                let logit = tape.add(linear, pairwise)?;
                let probability = tape.sigmoid(logit)?;
                Ok(Forward::flat(probability, logit))
            }
            Layout::FiGnn(ids) => self.forward_fignn(tape, ids, instance),
        }
    }

    fn forward_fignn(&self, tape: &mut Tape, ids: &FiGnnIds, instance: &EncodedInstance) -> Result<Forward> {
        let cfg = &self.config;
        let table = tape.param(ids.table);
        let fields = encoder::embed(tape, table, &instance.features)?;
        let heads: Vec<HeadVars> = ids
            .heads
            .iter()
            .map(|[q, k, v]| HeadVars {
                query: tape.param(*q),
                key: tape.param(*k),
                value: tape.param(*v),
            })
            .collect();
        let h1 = encoder::initial_states(tape, fields, &heads)?;

        let adjacency = match ids.w_w {
            Some(w) => {
                let w = tape.param(w);
                graphcore::edge_attention(tape, h1, w, cfg.leaky_slope)?
            }
            None => graphcore::fixed_adjacency(tape, cfg.field_count, cfg.ablation.binary_adjacency)?,
        };
        let transform = match &ids.transform {
            TransformIds::PerNode { w_out, w_in } => EdgeTransform::PerNode {
                w_out: w_out.iter().map(|&p| tape.param(p)).collect(),
                w_in: w_in.iter().map(|&p| tape.param(p)).collect(),
            },
            TransformIds::Shared(p) => EdgeTransform::Shared(tape.param(*p)),
        };
        let transform = PreparedTransform::new(tape, &transform)?;
        let g = ids.gru.map(|p| tape.param(p));
        let gru = GruVars {
            w_z: g[0],
            u_z: g[1],
            b_z: g[2],
            w_r: g[3],
            u_r: g[4],
            b_r: g[5],
            w_h: g[6],
            u_h: g[7],
            b_h: g[8],
        }
        .prepared(tape)?;
        let bias = tape.param(ids.b_p);
        let propagation = Propagation {
            initial: h1,
            adjacency,
            transform: &transform,
            bias,
            gru: &gru,
            residual: !cfg.ablation.disable_residual,
        };
        let final_state = propagation.run(tape, cfg.steps)?;

        let [sw, sb, gw, gb] = ids.scoring.map(|p| tape.param(p));
        let out = scoring::score(
            tape,
            final_state.states,
            &ScoringVars {
                score_w: sw,
                score_b: sb,
                gate_w: gw,
                gate_b: gb,
            },
        )?;
        Ok(Forward {
            probability: out.probability,
            logit: out.logit,
            adjacency: Some(adjacency),
            node_scores: Some(out.node_scores),
            node_weights: Some(out.node_weights),
        })
    }
}

impl Forward {
    fn flat(probability: Var, logit: Var) -> Self {
        Forward {
            probability,
            logit,
            adjacency: None,
            node_scores: None,
            node_weights: None,
        }
    }
}

/// `bias + Σᵢ w[featureᵢ]` as a `1 × 1` tensor.
fn linear_logit(tape: &mut Tape, w: ParamId, b: ParamId, features: &[usize]) -> Result<Var> {
    let w = tape.param(w);
    let picked = encoder::embed(tape, w, features)?;
    let s = tape.sum(picked)?;
    let b = tape.param(b);
    tape.add(s, b)
}

impl Model {
    /// Fresh model with seeded uniform(−1/√d′, 1/√d′) matrices and zero
    /// biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        allocate(&config, &mut store, Some(&mut rng))?;
        let arch = Architecture::resolve(&config, &store)?;
        Ok(Model { arch, params: store })
    }

    /// Rebuilds a model from stored parameters, checking that names and
    /// shapes match what `config` requires.
    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config)?;
        if expected.len() != params.len() {
            return Err(Error::Invariant(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let id = params.id(name)?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Invariant(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
        }
        let arch = Architecture::resolve(&config, &params)?;
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn predict(&self, instance: &EncodedInstance) -> Result<Prediction> {
        let mut tape = Tape::new(self.params.values());
        let out = self.arch.forward(&mut tape, instance)?;
        let column = |v: Option<Var>| v.map(|v| tape.value(v).data().to_vec()).unwrap_or_default();
        Ok(Prediction {
            probability: Prediction::clamp_probability(tape.scalar(out.probability)),
            logit: tape.scalar(out.logit),
            node_scores: column(out.node_scores),
            node_weights: column(out.node_weights),
            adjacency: out.adjacency.map(|a| tape.value(a).clone()),
        })
    }

    pub fn predict_proba(&self, instances: &[EncodedInstance]) -> Result<Vec<f64>> {
        let parts = parallel::map_chunks(instances, |chunk| {
            chunk
                .iter()
                .map(|i| self.predict(i).map(|p| p.probability))
                .collect::<Result<Vec<_>>>()
        });
        let mut out = Vec::with_capacity(instances.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}

/// Names and shapes of every parameter `config` creates, in canonical order.
pub fn parameter_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let mut store = ParameterStore::new();
    allocate(config, &mut store, None)?;
    Ok(store
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            state_dim: 4,
            heads: 2,
            steps: 2,
            fm_factors: 3,
            ..ModelConfig::new(kind, 3, 9)
        }
    }

    #[test]
    fn config_validation() {
        let mut c = toy(ModelKind::Fignn);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = toy(ModelKind::Fignn);
        c.steps = 0;
        assert!(c.validate().is_err());
        let mut c = toy(ModelKind::Fignn);
        c.field_count = 1;
        assert!(c.validate().is_err());
        assert!(toy(ModelKind::Lr).validate().is_ok());
    }

    #[test]
    fn ablation_flag_parsing() {
        let a = AblationConfig::parse_list("no-edge-attention,no-residual").unwrap();
        assert!(a.disable_edge_attention && a.disable_residual && !a.disable_edge_transform);
        let e = AblationConfig::parse_list("-E").unwrap();
        assert!(e.disable_edge_attention && e.disable_edge_transform);
        assert_eq!(e.label(), "Fi-GNN(-W/T)");
        assert_eq!(AblationConfig::parse_list("").unwrap(), AblationConfig::FULL);
        assert!(AblationConfig::parse_list("no-gru").is_err());
    }

    #[test]
    fn model_kind_round_trip() {
        for k in [ModelKind::Lr, ModelKind::Fm, ModelKind::Fignn] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("dnn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn fignn_prediction_is_well_formed() {
        let model = Model::new(toy(ModelKind::Fignn), 3).unwrap();
        let p = model
            .predict(&EncodedInstance {
                label: 1,
                features: vec![0, 4, 8],
            })
            .unwrap();
        assert!(p.probability > 0.0 && p.probability < 1.0);
        assert_eq!(p.node_weights.len(), 3);
        let a = p.adjacency.unwrap();
        for i in 0..3 {
            assert_eq!(a.get(i, i), 0.0);
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_arity_and_out_of_range_features_are_rejected() {
        let model = Model::new(toy(ModelKind::Fignn), 3).unwrap();
        let short = EncodedInstance { label: 0, features: vec![0, 1] };
        assert!(model.predict(&short).is_err());
        let far = EncodedInstance { label: 0, features: vec![0, 1, 9] };
        assert!(model.predict(&far).is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let model = Model::new(toy(ModelKind::Fignn), 3).unwrap();
        let rebuilt = Model::from_parts(model.config().clone(), model.params.clone()).unwrap();
        assert_eq!(rebuilt.params, model.params);
        let mut other = toy(ModelKind::Fignn);
        other.state_dim = 8;
        assert!(Model::from_parts(other, model.params.clone()).is_err());
    }
}
