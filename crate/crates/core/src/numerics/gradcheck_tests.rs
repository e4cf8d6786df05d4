//! Central finite-difference checks for every primitive.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

type LossFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn random_store(shapes: &[(usize, usize)], rng: &mut ChaCha8Rng) -> ParameterStore {
    let mut store = ParameterStore::new();
    for (k, &(r, c)) in shapes.iter().enumerate() {
        store.insert_uniform(format!("p{k}"), r, c, 1.0, rng).unwrap();
    }
    store
}

fn eval(store: &ParameterStore, f: &LossFn) -> f64 {
    let mut tape = Tape::new(store.values());
    let vars: Vec<Var> = store.ids().map(|id| tape.param(id)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.scalar(loss)
}

fn analytic(store: &mut ParameterStore, f: &LossFn) -> Vec<Tensor> {
    store.zero_grads();
    let ids: Vec<ParamId> = store.ids().collect();
    let (values, grads) = store.split_mut();
    let mut tape = Tape::new(values);
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss, 1.0, grads).unwrap();
    store.grads().iter().cloned().collect()
}

fn check(store: &mut ParameterStore, f: &LossFn) {
    let grads = analytic(store, f);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + EPS;
            let up = eval(store, f);
            store.value_mut(id).data_mut()[k] = orig - EPS;
            let down = eval(store, f);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = grads[id.0].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                rel < TOL,
                "{}[{k}]: analytic {a} vs numeric {numeric} (rel {rel})",
                store.name(id)
            );
        }
    }
}

/// Contracts an arbitrary-shaped output with fixed random weights so every
/// output entry carries a distinct gradient.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn run(shapes: &[(usize, usize)], f: Box<LossFn>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = random_store(shapes, &mut rng);
    check(&mut store, &*f);
}

#[test]
fn matmul_gradient() {
    run(
        &[(3, 4), (4, 2)],
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            contract(t, y, 1)
        }),
    );
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = random_store(&[(2, 3), (3, 4)], &mut rng);
    let f: Box<LossFn> = Box::new(|t, v| {
        let y = t.matmul(v[0], v[1])?;
        t.sum(y)
    });
    let grads = analytic(&mut store, &*f);
    let b = store.value(store.id("p1").unwrap()).clone();
    let expect = Tensor::filled(2, 4, 1.0).matmul(&b.transpose()).unwrap();
    for (a, e) in grads[0].data().iter().zip(expect.data()) {
        assert!((a - e).abs() < 1e-12);
    }
    check(&mut store, &*f);
}

#[test]
fn elementwise_gradients() {
    run(
        &[(2, 3), (2, 3)],
        Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let m = t.mul(m, v[0])?;
            let y = t.scale(m, -1.5)?;
            contract(t, y, 2)
        }),
    );
}

#[test]
fn bias_concat_slice_transpose_gradients() {
    run(
        &[(3, 2), (1, 2), (3, 3)],
        Box::new(|t, v| {
            let b = t.add_bias(v[0], v[1])?;
            let cols = t.concat(&[b, v[2]], Axis::Cols)?;
            let rows = t.concat(&[cols, cols], Axis::Rows)?;
            let s1 = t.slice(rows, Axis::Rows, 2, 3)?;
            let s2 = t.slice(s1, Axis::Cols, 1, 3)?;
            let tr = t.transpose(s2)?;
            contract(t, tr, 3)
        }),
    );
}

#[test]
fn softmax_gradient_with_and_without_mask() {
    run(
        &[(3, 3)],
        Box::new(|t, v| {
            let y = t.row_softmax(v[0], None)?;
            contract(t, y, 4)
        }),
    );
    run(
        &[(3, 3)],
        Box::new(|t, v| {
            let mask = [true, false, false, false, true, false, false, false, true];
            let y = t.row_softmax(v[0], Some(&mask))?;
            contract(t, y, 5)
        }),
    );
}

#[test]
fn pointwise_gradients() {
    for f in [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::LeakyRelu(0.01),
    ] {
        run(
            &[(4, 3)],
            Box::new(move |t, v| {
                let y = t.pointwise(v[0], f)?;
                contract(t, y, 6)
            }),
        );
    }
}

#[test]
fn reductions_and_log_loss_gradients() {
    run(
        &[(2, 5)],
        Box::new(|t, v| {
            let s = t.sum(v[0])?;
            let m = t.mean(v[0])?;
            let sm = t.mul(s, m)?;
            t.add(sm, m)
        }),
    );
    run(
        &[(4, 1)],
        Box::new(|t, v| {
            let p = t.sigmoid(v[0])?;
            t.log_loss(p, &[1.0, 0.0, 0.0, 1.0])
        }),
    );
}

fn softmax_row(values: &[f64]) -> Vec<f64> {
    let store = ParameterStore::new();
    let mut tape = Tape::new(store.values());
    let x = tape.constant(Tensor::row_vector(values.to_vec()));
    let y = tape.row_softmax(x, None).unwrap();
    tape.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        row in proptest::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
    ) {
        let y = softmax_row(&row);
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(y.iter().all(|&v| v > 0.0));
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let z = softmax_row(&shifted);
        for (a, b) in y.iter().zip(&z) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed(seed in 0u64..1000, factor in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = random_store(&[(2, 3), (3, 2)], &mut rng);
        let ids: Vec<ParamId> = store.ids().collect();
        let grads_at = |store: &mut ParameterStore, scale: f64| {
            store.zero_grads();
            let (values, grads) = store.split_mut();
            let mut tape = Tape::new(values);
            let a = tape.param(ids[0]);
            let b = tape.param(ids[1]);
            let y = tape.matmul(a, b).unwrap();
            let y = tape.tanh(y).unwrap();
            let loss = tape.sum(y).unwrap();
            tape.backward(loss, scale, grads).unwrap();
            store.grads().clone()
        };
        let base = grads_at(&mut store, 1.0);
        let scaled = grads_at(&mut store, factor);
        for (g1, g2) in base.iter().zip(scaled.iter()) {
            for (x, y) in g1.data().iter().zip(g2.data()) {
                prop_assert!((x * factor - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
