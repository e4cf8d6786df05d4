//! Browser demo. Trains Fi-GNN and logistic regression side by side on a
//! synthetic log whose label is the XOR of two fields, one epoch per call,
//! and exposes the learned edge attention.

use fignn::explain::explain;
use fignn::featurestore::{build_vocabulary, encode, encode_all, split_dataset, DatasetSplit, RawRecord, Vocabulary};
use fignn::metrics;
use fignn::model::{Model, ModelConfig, ModelKind};
use fignn::numerics::Gradients;
use fignn::synthetic::XorTask;
use fignn::training::{balanced_batches, batch_gradients, rmsprop_step, OptimizerState, TrainingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

struct Learner {
    model: Model,
    opt: OptimizerState,
    template: Gradients,
}

impl Learner {
    fn new(config: ModelConfig, seed: u64) -> fignn::Result<Self> {
        let model = Model::new(config, seed)?;
        Ok(Learner {
            opt: OptimizerState::new(&model.params),
            template: model.params.zeroed_gradients(),
            model,
        })
    }

    fn epoch(&mut self, train: &[fignn::featurestore::EncodedInstance], batches: &[Vec<usize>], cfg: &TrainingConfig) -> fignn::Result<f64> {
        let mut loss_sum = 0.0;
        for batch in batches {
            let (loss, grads) = batch_gradients(&self.model.arch, self.model.params.values(), &self.template, train, batch)?;
            loss_sum += loss;
            *self.model.params.grads_mut() = grads;
            rmsprop_step(&mut self.model.params, &mut self.opt, cfg)?;
        }
        Ok(loss_sum / batches.len() as f64)
    }
}

#[derive(Serialize)]
struct Curve {
    train_loss: f64,
    val_auc: f64,
    val_logloss: f64,
}

#[derive(Serialize)]
struct EpochReport {
    epoch: usize,
    fignn: Curve,
    lr: Curve,
}

#[derive(Serialize)]
struct AttentionReport {
    fields: Vec<String>,
    signal_fields: (usize, usize),
    heatmap: Vec<Vec<f64>>,
    node_weights: Vec<f64>,
}

#[derive(Serialize)]
struct CaseReport {
    fignn_probability: f64,
    lr_probability: f64,
    /// Label the planted rule assigns before noise.
    rule_label: u8,
    adjacency: Vec<Vec<f64>>,
    node_weights: Vec<f64>,
}

/// A training session kept alive between calls from the page.
#[wasm_bindgen]
pub struct Session {
    task: XorTask,
    hidden_bits: (Vec<bool>, Vec<bool>),
    vocab: Vocabulary,
    split: DatasetSplit,
    fignn: Learner,
    lr: Learner,
    cfg: TrainingConfig,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn rows(t: &fignn::numerics::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[wasm_bindgen]
impl Session {
    /// Generates the data and initialises both models.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, instances: usize, noise: f64, steps: usize, learning_rate: f64) -> Result<Session, JsError> {
        Self::build(u64::from(seed), instances, noise, steps, learning_rate).map_err(js)
    }

    /// Runs one epoch for both models; returns the curves point as JSON.
    pub fn train_epoch(&mut self) -> Result<String, JsError> {
        let report = self.step().map_err(js)?;
        serde_json::to_string(&report).map_err(js)
    }

    /// Mean Fi-GNN edge attention and node weights over the validation set.
    pub fn attention_map(&self) -> Result<String, JsError> {
        let report = self.attention().map_err(js)?;
        serde_json::to_string(&report).map_err(js)
    }

    /// Scores one hand-built instance given as comma-separated value indices,
    /// one per field (e.g. "0,3,7,1").
    pub fn score_case(&self, values: &str) -> Result<String, JsError> {
        let report = self.case(values).map_err(js)?;
        serde_json::to_string(&report).map_err(js)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn fields(&self) -> usize {
        self.task.fields
    }

    pub fn cardinality(&self) -> usize {
        self.task.cardinality
    }
}

impl Session {
    pub fn build(seed: u64, instances: usize, noise: f64, steps: usize, learning_rate: f64) -> fignn::Result<Session> {
        let task = XorTask {
            instances,
            noise,
            seed,
            ..XorTask::default()
        };
        let data = task.generate()?;
        let vocab = build_vocabulary(&data.records, &data.schema, 1)?;
        let split = split_dataset(encode_all(&data.records, &vocab)?, seed)?;
        let (m, v) = (vocab.field_count(), vocab.total_feature_count);
        let fignn = Learner::new(
            ModelConfig {
                steps,
                ..ModelConfig::new(ModelKind::Fignn, m, v)
            },
            seed,
        )?;
        let lr = Learner::new(ModelConfig::new(ModelKind::Lr, m, v), seed)?;
        let cfg = TrainingConfig {
            learning_rate,
            batch_size: 256,
            seed,
            ..TrainingConfig::default()
        };
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Session {
            task,
            hidden_bits: data.hidden_bits,
            vocab,
            split,
            fignn,
            lr,
            cfg,
            rng,
            epoch: 0,
        })
    }

    fn step(&mut self) -> fignn::Result<EpochReport> {
        // both models see the same batches
        let batches = balanced_batches(&self.split.train, self.cfg.batch_size, &mut self.rng)?;
        let curve = |learner: &mut Learner| -> fignn::Result<Curve> {
            let train_loss = learner.epoch(&self.split.train, &batches, &self.cfg)?;
            let r = metrics::evaluate(&learner.model, &self.split.validation)?;
            Ok(Curve {
                train_loss,
                val_auc: r.auc,
                val_logloss: r.logloss,
            })
        };
        let fignn = curve(&mut self.fignn)?;
        let lr = curve(&mut self.lr)?;
        self.epoch += 1;
        Ok(EpochReport {
            epoch: self.epoch,
            fignn,
            lr,
        })
    }

    fn attention(&self) -> fignn::Result<AttentionReport> {
        let bundle = explain(&self.fignn.model, &self.split.validation, &self.vocab.field_names(), 0)?;
        Ok(AttentionReport {
            fields: bundle.field_names,
            signal_fields: self.task.signal_fields,
            heatmap: rows(&bundle.edge_heatmap),
            node_weights: bundle.node_weights,
        })
    }

    fn case(&self, values: &str) -> fignn::Result<CaseReport> {
        let picks: Vec<usize> = values
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v < self.task.cardinality)
                    .ok_or_else(|| fignn::Error::Input(format!("{s:?} is not a value index below {}", self.task.cardinality)))
            })
            .collect::<fignn::Result<_>>()?;
        if picks.len() != self.task.fields {
            return Err(fignn::Error::Input(format!(
                "{} values given for {} fields",
                picks.len(),
                self.task.fields
            )));
        }
        let (a, b) = self.task.signal_fields;
        let rule_label = u8::from(self.hidden_bits.0[picks[a]] != self.hidden_bits.1[picks[b]]);
        let record = RawRecord {
            label: rule_label,
            values: picks.iter().enumerate().map(|(f, v)| format!("f{f}_v{v}")).collect(),
        };
        let inst = encode(&record, &self.vocab)?;
        let p = self.fignn.model.predict(&inst)?;
        Ok(CaseReport {
            fignn_probability: p.probability,
            lr_probability: self.lr.model.predict(&inst)?.probability,
            rule_label,
            adjacency: p.adjacency.as_ref().map(rows).unwrap_or_default(),
            node_weights: p.node_weights,
        })
    }
}
