//! Shared helpers for the integration suites: random inputs and central
//! finite-difference gradient checks.
#![allow(dead_code)]

pub mod grad_cases;
pub mod oracle_suite;

use dfgn::tensor::{ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [-2, 2].
pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// Gradients whose norm is below this are compared absolutely: a parameter
/// the loss is invariant to (a bias under a shift-invariant softmax) has an
/// exact gradient of zero and both estimates are pure rounding noise.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖ + ‖n‖, NORM_FLOOR)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(NORM_FLOOR)
}

/// Reduces any output to a scalar with fixed random weights so every output
/// element contributes to the checked gradient.
fn probe(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let n = tape.value(out).len();
    let mut r = rng(seed ^ 0x9e37_79b9);
    let w = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let weighted = tape.mul_const(out, w)?;
    tape.sum(weighted)
}

/// Largest relative error over all `inputs` of `f`, which is rebuilt on a
/// fresh tape for every evaluation.
pub fn check_inputs<F>(seed: u64, inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars).unwrap();
        let loss = probe(&mut tape, out, seed).unwrap();
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = f(&mut tape, &vars).unwrap();
    let loss = probe(&mut tape, out, seed).unwrap();
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        let mut values = inputs.to_vec();
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            values[k].data_mut()[i] = x + H;
            let up = eval(&values);
            values[k].data_mut()[i] = x - H;
            let down = eval(&values);
            values[k].data_mut()[i] = x;
            numeric[i] = (up - down) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Same as [`check_inputs`] for every parameter of `store`, plus any extra
/// leaf inputs.
pub fn check_params<F>(seed: u64, store: &ParamStore, inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = f(&mut tape, store, &vars).unwrap();
        let loss = probe(&mut tape, out, seed).unwrap();
        tape.value(loss).item()
    };
    let mut grads = store.clone();
    grads.zero_grads();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
    let out = f(&mut tape, &grads, &vars).unwrap();
    let loss = probe(&mut tape, out, seed).unwrap();
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(&mut grads);

    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.value(id).len();
        let mut numeric = vec![0.0; len];
        for i in 0..len {
            let x = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = x + H;
            let up = eval(&work, inputs);
            work.value_mut(id).data_mut()[i] = x - H;
            let down = eval(&work, inputs);
            work.value_mut(id).data_mut()[i] = x;
            numeric[i] = (up - down) / (2.0 * H);
        }
        let e = rel_err(grads.grad(id), &numeric);
        assert!(e < REL_TOL, "param {} rel err {e:e}", store.name(id));
        worst = worst.max(e);
    }
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut values = inputs.to_vec();
        let mut numeric = vec![0.0; inputs[k].len()];
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            values[k].data_mut()[i] = x + H;
            let up = eval(store, &values);
            values[k].data_mut()[i] = x - H;
            let down = eval(store, &values);
            values[k].data_mut()[i] = x;
            numeric[i] = (up - down) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}
