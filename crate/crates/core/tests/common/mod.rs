#![allow(dead_code)]

use fignn::featurestore::EncodedInstance;
use fignn::model::Model;
use fignn::numerics::{Tape, Tensor};
use rand::Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero for the relative error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn log_loss_of(model: &Model, inst: &EncodedInstance) -> f64 {
    let mut tape = Tape::new(model.params.values());
    let out = model.arch.forward(&mut tape, inst).unwrap();
    let loss = tape.log_loss(out.probability, &[f64::from(inst.label)]).unwrap();
    tape.scalar(loss)
}

pub struct FdResult {
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares the tape gradient of the log loss against central differences
/// for every scalar of every parameter.
pub fn finite_difference_check(model: &Model, inst: &EncodedInstance) -> FdResult {
    let mut grads = model.params.zeroed_gradients();
    {
        let mut tape = Tape::new(model.params.values());
        let out = model.arch.forward(&mut tape, inst).unwrap();
        let loss = tape.log_loss(out.probability, &[f64::from(inst.label)]).unwrap();
        tape.backward(loss, 1.0, &mut grads).unwrap();
    }
    let mut probe = model.clone();
    let mut result = FdResult {
        worst_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for k in 0..model.params.value(id).len() {
            let original = probe.params.value(id).data()[k];
            probe.params.value_mut(id).data_mut()[k] = original + FD_EPS;
            let up = log_loss_of(&probe, inst);
            probe.params.value_mut(id).data_mut()[k] = original - FD_EPS;
            let down = log_loss_of(&probe, inst);
            probe.params.value_mut(id).data_mut()[k] = original;

            let numeric = (up - down) / (2.0 * FD_EPS);
            let analytic = grads.get(id).data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            result.checked += 1;
            if rel > result.worst_rel_err {
                result.worst_rel_err = rel;
                result.worst_param = format!("{}[{k}] analytic {analytic:e} numeric {numeric:e}", model.params.name(id));
            }
        }
    }
    result
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Plain row-major product, independent of the library kernels.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (p, q, r) = (a.rows(), a.cols(), b.cols());
    assert_eq!(q, b.rows());
    let mut out = Tensor::zeros(p, r);
    for i in 0..p {
        for j in 0..r {
            let mut s = 0.0;
            for k in 0..q {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
