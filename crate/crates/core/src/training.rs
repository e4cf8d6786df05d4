//! Balanced mini-batches, RMSProp, early stopping and parameter counting.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{DatasetSplit, EncodedInstance};
use crate::metrics;
use crate::model::{Architecture, Model, ModelConfig, ModelKind};
use crate::numerics::{Gradients, ParamValues, ParameterStore, Tape, Tensor};
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Must be even: half positives, half negatives.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-AUC improvement before stopping; 0 never
    /// stops early.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            batch_size: 1024,
            max_epochs: 20,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        if !positive(self.learning_rate) || !positive(self.rmsprop_epsilon) {
            return Err(Error::config("learning_rate and rmsprop_epsilon must be positive"));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::config(format!(
                "rmsprop_decay must lie in (0, 1), got {}",
                self.rmsprop_decay
            )));
        }
        Ok(())
    }
}

/// Draws an epoch of batches, each exactly half positive and half negative.
///
/// The epoch is long enough for the larger class to be seen once. Each class
/// is shuffled and consumed in order; once a class runs out, the rest of its
/// draws are uniform with replacement.
pub fn balanced_batches<R: Rng>(
    instances: &[EncodedInstance],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::config(format!("batch_size must be even, got {batch_size}")));
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if inst.label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::input(format!(
            "balanced batches need both classes ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let half = batch_size / 2;
    let n_batches = pos.len().max(neg.len()).div_ceil(half);
    let draw = |pool: &[usize], k: usize, rng: &mut R| -> usize {
        pool.get(k).copied().unwrap_or_else(|| pool[rng.gen_range(0..pool.len())])
    };
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for k in b * half..(b + 1) * half {
            batch.push(draw(&pos, k, rng));
        }
        for k in b * half..(b + 1) * half {
            batch.push(draw(&neg, k, rng));
        }
        batch.shuffle(rng);
        batches.push(batch);
    }
    Ok(batches)
}

/// Running mean of squared gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    mean_square: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore) -> Self {
        OptimizerState {
            mean_square: store
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.mean_square
    }
}

/// `s ← ρs + (1−ρ)g²; θ ← θ − η·g / (√s + ε)` using the gradients held in
/// `store`.
pub fn rmsprop_step(store: &mut ParameterStore, opt: &mut OptimizerState, cfg: &TrainingConfig) -> Result<()> {
    if !store.grads().is_finite() {
        let bad = store
            .ids()
            .find(|&id| !store.grad(id).is_finite())
            .map(|id| store.name(id).to_string())
            .unwrap_or_default();
        log::error!("non-finite gradient in {bad}");
        return Err(Error::NonFinite { op: "rmsprop_step" });
    }
    let (rho, eta, eps) = (cfg.rmsprop_decay, cfg.learning_rate, cfg.rmsprop_epsilon);
    let (values, grads) = store.values_and_grads_mut();
    if opt.mean_square.len() != values.len() {
        return Err(Error::Invariant("optimizer state does not match the parameter store".into()));
    }
    for ((theta, g), s) in values.iter_mut().zip(grads).zip(opt.mean_square.iter_mut()) {
        for ((t, &g), s) in theta.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
            *s = rho * *s + (1.0 - rho) * g * g;
            *t -= eta * g / (s.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean log loss of `batch` and its gradient, accumulated chunk by chunk in
/// a fixed order.
pub fn batch_gradients(
    arch: &Architecture,
    values: &ParamValues,
    template: &Gradients,
    instances: &[EncodedInstance],
    batch: &[usize],
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / batch.len() as f64;
    let parts = parallel::map_chunks(batch, |chunk| -> Result<(f64, Gradients)> {
        let mut grads = template.clone();
        let mut loss_sum = 0.0;
        for &i in chunk {
            let inst = &instances[i];
            let mut tape = Tape::new(values);
            let out = arch.forward(&mut tape, inst)?;
            let loss = tape.log_loss(out.probability, &[f64::from(inst.label)])?;
            loss_sum += tape.scalar(loss);
            tape.backward(loss, scale, &mut grads)?;
        }
        Ok((loss_sum, grads))
    });
    let mut total = template.clone();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.accumulate(&g);
    }
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept; 0 if none ran.
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_auc,val_logloss,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3}",
                e.epoch, e.train_loss, e.val_auc, e.val_logloss, e.seconds
            );
        }
        out
    }

    /// History with wall time removed, for comparing runs.
    pub fn without_timing(&self) -> TrainingHistory {
        let mut h = self.clone();
        h.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        h
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainingHistory,
}

/// Trains on `split.train`, scoring `split.validation` after every epoch and
/// keeping the parameters of the best epoch (higher AUC, ties broken by lower
/// log loss).
pub fn train(model: Model, split: &DatasetSplit, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    train_with(model, &split.train, &split.validation, cfg, |_| {})
}

pub fn train_with(
    mut model: Model,
    train_set: &[EncodedInstance],
    validation: &[EncodedInstance],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut history = TrainingHistory::default();
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome { model, history });
    }
    if validation.is_empty() {
        return Err(Error::input("validation set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(&model.params);
    let template = model.params.zeroed_gradients();
    let mut best: Option<(f64, f64, ParameterStore)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let clock = Clock::start();
        let batches = balanced_batches(train_set, cfg.batch_size, &mut rng)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            let (loss, grads) =
                batch_gradients(&model.arch, model.params.values(), &template, train_set, batch)?;
            loss_sum += loss;
            *model.params.grads_mut() = grads;
            rmsprop_step(&mut model.params, &mut opt, cfg)?;
        }
        let report = metrics::evaluate(&model, validation)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_auc: report.auc,
            val_logloss: report.logloss,
            seconds: clock.elapsed(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val auc {:.5}, val logloss {:.5}",
            record.train_loss,
            record.val_auc,
            record.val_logloss
        );
        on_epoch(&record);
        history.epochs.push(record);

        let improved = match &best {
            None => true,
            Some((auc, ll, _)) => report.auc > *auc || (report.auc == *auc && report.logloss < *ll),
        };
        if improved {
            best = Some((report.auc, report.logloss, model.params.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                log::info!("no improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    model.params.zero_grads();
    Ok(TrainOutcome { model, history })
}

/// Exact number of trainable scalars `config` creates.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let (v, m) = (config.vocab_size, config.field_count);
    Ok(match config.kind {
        ModelKind::Lr => v + 1,
        ModelKind::Fm => v + 1 + v * config.fm_factors,
        ModelKind::Fignn => {
            let (d, dp, h) = (config.embed_dim, config.state_dim, config.heads);
            let ab = &config.ablation;
            let embeddings = v * d;
            let attention = h * 3 * (dp / h) * d;
            let edge_attention = if ab.disable_edge_attention { 0 } else { 2 * dp };
            let transforms = if ab.disable_edge_transform { dp * dp } else { 2 * m * dp * dp };
            let gru = 6 * dp * dp + 3 * dp;
            let scoring = 2 * (dp + 1);
            embeddings + attention + edge_attention + transforms + dp + gru + scoring
        }
    })
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }
    fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

// no monotonic clock on bare wasm; timings read as zero there
#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Clock
    }
    fn elapsed(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(pos: usize, neg: usize) -> Vec<EncodedInstance> {
        (0..pos + neg)
            .map(|i| EncodedInstance {
                label: u8::from(i < pos),
                features: vec![i],
            })
            .collect()
    }

    fn check_balanced(data: &[EncodedInstance], batches: &[Vec<usize>], size: usize) {
        for b in batches {
            assert_eq!(b.len(), size);
            let p = b.iter().filter(|&&i| data[i].label == 1).count();
            assert_eq!(p, size / 2);
        }
    }

    #[test]
    fn batches_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let even = labelled(3, 3);
        check_balanced(&even, &balanced_batches(&even, 4, &mut rng).unwrap(), 4);
        let skewed = labelled(100, 4);
        let batches = balanced_batches(&skewed, 8, &mut rng).unwrap();
        assert_eq!(batches.len(), 25);
        check_balanced(&skewed, &batches, 8);
        // every positive is seen once per epoch
        let mut seen: Vec<usize> = batches.iter().flatten().copied().filter(|&i| i < 100).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batches_are_seeded() {
        let data = labelled(20, 30);
        let a = balanced_batches(&data, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = balanced_batches(&data, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(balanced_batches(&labelled(5, 0), 4, &mut rng).is_err());
        assert!(balanced_batches(&labelled(5, 5), 3, &mut rng).is_err());
    }

    fn scalar_store(theta: f64, g: f64) -> ParameterStore {
        let mut store = ParameterStore::new();
        let id = store.insert("theta", Tensor::scalar(theta)).unwrap();
        store.grads_mut().get_mut(id).data_mut()[0] = g;
        store
    }

    #[test]
    fn rmsprop_hand_example() {
        let mut store = scalar_store(1.0, 2.0);
        let mut opt = OptimizerState::new(&store);
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            ..TrainingConfig::default()
        };
        rmsprop_step(&mut store, &mut opt, &cfg).unwrap();
        assert!((opt.accumulators()[0].data()[0] - 0.4).abs() < 1e-15);
        let theta = store.values().iter_first();
        assert!((theta - 0.683772).abs() < 1e-6, "{theta}");

        // a second identical gradient takes a smaller step
        let before = theta;
        rmsprop_step(&mut store, &mut opt, &cfg).unwrap();
        let second = before - store.values().iter_first();
        assert!(second < 1.0 - 0.683772 && second > 0.0);
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_parameters() {
        let mut store = scalar_store(0.7, 0.0);
        let mut opt = OptimizerState::new(&store);
        opt.mean_square[0].data_mut()[0] = 1.0;
        rmsprop_step(&mut store, &mut opt, &TrainingConfig::default()).unwrap();
        assert_eq!(store.values().iter_first(), 0.7);
        assert!((opt.accumulators()[0].data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_rejects_nan() {
        let mut store = scalar_store(0.7, f64::NAN);
        let mut opt = OptimizerState::new(&store);
        assert!(rmsprop_step(&mut store, &mut opt, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        assert!(TrainingConfig { batch_size: 7, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { rmsprop_decay: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn count_matches_worked_example() {
        let cfg = ModelConfig {
            embed_dim: 4,
            state_dim: 4,
            heads: 2,
            ..ModelConfig::new(ModelKind::Fignn, 3, 9)
        };
        assert_eq!(count_parameters(&cfg).unwrap(), 310);
        assert_eq!(Model::new(cfg, 0).unwrap().parameter_count(), 310);
    }

    trait First {
        fn iter_first(&self) -> f64;
    }

    impl First for ParamValues {
        fn iter_first(&self) -> f64 {
            self.get(crate::numerics::ParamId(0)).data()[0]
        }
    }
}
