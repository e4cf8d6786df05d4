//! Logistic regression and factorization machine reference models, plus the
//! constructor for ablated Fi-GNN variants.
//!
//! The tape-based versions used for training live in [`crate::model`]; the
//! plain functions here evaluate a trained store directly and double as the
//! readable definition of each model.

use crate::error::{Error, Result};
use crate::featurestore::EncodedInstance;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::numerics::{sigmoid, ParameterStore, Tensor};

pub use crate::model::AblationConfig;

/// One weight per feature index plus a global bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LrParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// LR part plus a `V × k` latent matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FmParams {
    pub linear: LrParams,
    pub factors: Tensor,
}

impl LrParams {
    pub fn zeros(vocab_size: usize) -> Self {
        LrParams {
            weights: vec![0.0; vocab_size],
            bias: 0.0,
        }
    }

    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Ok(LrParams {
            weights: store.value(store.id("lr.w")?).data().to_vec(),
            bias: store
                .value(store.id("lr.b")?)
                .as_scalar()
                .ok_or_else(|| Error::Invariant("lr.b is not a scalar".into()))?,
        })
    }

    fn logit(&self, instance: &EncodedInstance) -> Result<f64> {
        let mut z = self.bias;
        for &f in &instance.features {
            z += self.weights.get(f).ok_or_else(|| {
                Error::input(format!("feature index {f} outside {} weights", self.weights.len()))
            })?;
        }
        Ok(z)
    }
}

impl FmParams {
    pub fn from_store(store: &ParameterStore) -> Result<Self> {
        Ok(FmParams {
            linear: LrParams::from_store(store)?,
            factors: store.value(store.id("fm.v")?).clone(),
        })
    }
}

/// σ(bias + Σᵢ w[featureᵢ]).
pub fn lr_forward(instance: &EncodedInstance, params: &LrParams) -> Result<f64> {
    Ok(sigmoid(params.logit(instance)?))
}

/// Σ_{i<j} ⟨vᵢ, vⱼ⟩ over the active features, via ½(‖Σv‖² − Σ‖v‖²).
pub fn fm_pairwise(factors: &Tensor, features: &[usize]) -> Result<f64> {
    let k = factors.cols();
    let mut total = vec![0.0; k];
    let mut squares = 0.0;
    for &f in features {
        if f >= factors.rows() {
            return Err(Error::input(format!(
                "feature index {f} outside {} latent rows",
                factors.rows()
            )));
        }
        for (t, &v) in total.iter_mut().zip(factors.row(f)) {
            *t += v;
            squares += v * v;
        }
    }
    let total_sq: f64 = total.iter().map(|t| t * t).sum();
    Ok(0.5 * (total_sq - squares))
}

/// σ(linear + pairwise).
pub fn fm_forward(instance: &EncodedInstance, params: &FmParams) -> Result<f64> {
    let z = params.linear.logit(instance)? + fm_pairwise(&params.factors, &instance.features)?;
    Ok(sigmoid(z))
}

/// A Fi-GNN with the given ablation switches on top of `base`.
pub fn build_variant(ablation: AblationConfig, base: &ModelConfig, seed: u64) -> Result<Model> {
    if base.kind != ModelKind::Fignn {
        return Err(Error::config(format!(
            "ablations apply to fignn models, not {}",
            base.kind
        )));
    }
    let config = ModelConfig {
        ablation,
        ..base.clone()
    };
    Model::new(config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(features: Vec<usize>) -> EncodedInstance {
        EncodedInstance { label: 0, features }
    }

    fn naive_pairwise(factors: &Tensor, features: &[usize]) -> f64 {
        let mut s = 0.0;
        for a in 0..features.len() {
            for b in a + 1..features.len() {
                let (va, vb) = (factors.row(features[a]), factors.row(features[b]));
                s += va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        s
    }

    #[test]
    fn lr_examples() {
        let mut p = LrParams::zeros(6);
        assert_eq!(lr_forward(&inst(vec![0, 3]), &p).unwrap(), 0.5);
        p.bias = 1.0;
        assert!((lr_forward(&inst(vec![0, 3]), &p).unwrap() - 0.7310585786300049).abs() < 1e-15);
        let before = lr_forward(&inst(vec![0, 3]), &p).unwrap();
        p.weights[5] = 7.0;
        assert_eq!(lr_forward(&inst(vec![0, 3]), &p).unwrap(), before);
        assert!(lr_forward(&inst(vec![0, 6]), &p).is_err());
    }

    #[test]
    fn fm_examples() {
        let factors = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(fm_pairwise(&factors, &[0, 1]).unwrap(), 2.0);
        let zero = FmParams {
            linear: LrParams { weights: vec![0.3, -0.2, 0.1], bias: 0.5 },
            factors: Tensor::zeros(3, 2),
        };
        let i = inst(vec![0, 2]);
        assert_eq!(fm_forward(&i, &zero).unwrap(), lr_forward(&i, &zero.linear).unwrap());
    }

    #[test]
    fn fm_identity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (m, k, v) = (rng.gen_range(2..=10), rng.gen_range(1..=8), 30);
            let data = (0..v * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let factors = Tensor::new(v, k, data).unwrap();
            let features: Vec<usize> = (0..m).map(|_| rng.gen_range(0..v)).collect();
            let fast = fm_pairwise(&factors, &features).unwrap();
            assert!((fast - naive_pairwise(&factors, &features)).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_forwards_agree_with_tape_models() {
        for kind in [ModelKind::Lr, ModelKind::Fm] {
            let mut model = Model::new(ModelConfig { fm_factors: 3, ..ModelConfig::new(kind, 3, 9) }, 5).unwrap();
            // nonzero linear weights so the check is not vacuous
            let w = model.params.id("lr.w").unwrap();
            for (i, v) in model.params.value_mut(w).data_mut().iter_mut().enumerate() {
                *v = 0.1 * i as f64 - 0.4;
            }
            let x = inst(vec![1, 4, 8]);
            let tape_p = model.predict(&x).unwrap().probability;
            let pure = match kind {
                ModelKind::Lr => lr_forward(&x, &LrParams::from_store(&model.params).unwrap()).unwrap(),
                _ => fm_forward(&x, &FmParams::from_store(&model.params).unwrap()).unwrap(),
            };
            assert!((tape_p - pure).abs() < 1e-12, "{kind}: {tape_p} vs {pure}");
        }
    }

    #[test]
    fn variants_only_apply_to_fignn() {
        let base = ModelConfig::new(ModelKind::Lr, 3, 9);
        assert!(build_variant(AblationConfig::default(), &base, 0).is_err());
    }
}
