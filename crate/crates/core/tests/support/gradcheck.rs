//! Central finite-difference gradient check for sequential models.

#![allow(dead_code)]

use chaintwin::nn::{Loss, Sequential, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Objective: weighted sum of outputs (smooth, exercises every output), or a
/// real loss when `loss` is given.
pub fn objective(model: &Sequential, x: &Tensor, w: &Tensor, loss: Option<Loss>, l1: &[(usize, f64)]) -> f64 {
    let y = model.predict(x).unwrap();
    let base = match loss {
        Some(l) => l.value_and_grad(&y, w).unwrap().0,
        None => y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
    };
    base + model.l1_total(l1)
}

/// Largest relative error over all parameters; panics above the tolerance.
pub fn check(model: &mut Sequential, x: &Tensor, w: &Tensor, loss: Option<Loss>, l1: &[(usize, f64)]) -> f64 {
    let (y, caches) = model.forward(x, None).unwrap();
    let dy = match loss {
        Some(l) => l.value_and_grad(&y, w).unwrap().1,
        None => w.clone(),
    };
    let mut grads = model.backward(&caches, &dy);
    model.add_l1_gradients(l1, &mut grads);
    let mut worst = 0.0f64;
    let n_arrays = grads.len();
    for a in 0..n_arrays {
        for k in 0..grads[a].len() {
            let orig = model.param_arrays()[a][k];
            model.param_arrays_mut()[a][k] = orig + STEP;
            let fp = objective(model, x, w, loss, l1);
            model.param_arrays_mut()[a][k] = orig - STEP;
            let fm = objective(model, x, w, loss, l1);
            model.param_arrays_mut()[a][k] = orig;
            let num = (fp - fm) / (2.0 * STEP);
            let e = rel_err(grads[a][k], num);
            assert!(e < TOL, "array {a} elem {k}: analytic {} numeric {num} rel {e}", grads[a][k]);
            worst = worst.max(e);
        }
    }
    assert!(worst < TOL);
    worst
}

/// Moves weights away from zero so the L1 kink is not straddled.
pub fn push_from_zero(model: &mut Sequential) {
    for p in model.param_arrays_mut() {
        for v in p.iter_mut() {
            if v.abs() < 1e-3 {
                *v = if *v >= 0.0 { 1e-2 } else { -1e-2 };
            }
        }
    }
}

