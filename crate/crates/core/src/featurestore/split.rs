use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EncodedInstance;
use crate::error::{Error, Result};

/// 8:1:1 train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<EncodedInstance>,
    pub validation: Vec<EncodedInstance>,
    pub test: Vec<EncodedInstance>,
    pub split_seed: u64,
}

/// Shuffles with `seed`, then takes ⌊0.8n⌋ for training, ⌊0.1n⌋ for
/// validation and the remainder for test.
pub fn split_dataset(instances: Vec<EncodedInstance>, seed: u64) -> Result<DatasetSplit> {
    let n = instances.len();
    if n < 10 {
        return Err(Error::input(format!("need at least 10 instances to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut slots: Vec<Option<EncodedInstance>> = instances.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<EncodedInstance> {
        idx.iter().map(|&i| slots[i].take().expect("each index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let validation = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(DatasetSplit {
        train,
        validation,
        test,
        split_seed: seed,
    })
}
