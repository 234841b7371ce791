#[path = "support/gradcheck.rs"]
mod gradcheck;

use chaintwin::nn::layers::{Activation, Dense, Dropout, Layer, Lstm};
use chaintwin::nn::{Loss, Sequential, Tensor};
use gradcheck::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dense_activations_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for act in [Activation::Linear, Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
        let mut m = Sequential::new(vec![
            Layer::Dense(Dense::new(5, 4, Activation::Tanh, &mut rng)),
            Layer::Dense(Dense::new(4, 3, act, &mut rng)),
        ]);
        let x = random_tensor(vec![6, 5], &mut rng);
        let w = random_tensor(vec![6, 3], &mut rng);
        check(&mut m, &x, &w, None, &[]);
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = Sequential::new(vec![
        Layer::Dense(Dense::new(4, 5, Activation::Sigmoid, &mut rng)),
        Layer::Dense(Dense::new(5, 6, Activation::Softmax, &mut rng)),
    ]);
    let x = random_tensor(vec![7, 4], &mut rng);
    let mut y = vec![0.0; 7 * 6];
    for r in 0..7 {
        y[r * 6 + rng.gen_range(0..6)] = 1.0;
    }
    let y = Tensor::new(vec![7, 6], y).unwrap();
    check(&mut m, &x, &y, Some(Loss::CategoricalCrossEntropy), &[]);
}

#[test]
fn lstm_gradients_sequence_and_last() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = Sequential::new(vec![
        Layer::Lstm(Lstm::new(3, 4, true, &mut rng)),
        Layer::Lstm(Lstm::new(4, 3, false, &mut rng)),
        Layer::Dense(Dense::new(3, 2, Activation::Linear, &mut rng)),
    ]);
    let x = random_tensor(vec![3, 5, 3], &mut rng);
    let w = random_tensor(vec![3, 2], &mut rng);
    check(&mut m, &x, &w, None, &[]);
}

#[test]
fn lstm_sequence_output_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = Sequential::new(vec![Layer::Lstm(Lstm::new(2, 3, true, &mut rng))]);
    let x = random_tensor(vec![2, 6, 2], &mut rng);
    let w = random_tensor(vec![2, 6, 3], &mut rng);
    check(&mut m, &x, &w, None, &[]);
}

#[test]
fn l1_penalty_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = Sequential::new(vec![
        Layer::Lstm(Lstm::new(3, 4, false, &mut rng)),
        Layer::Dense(Dense::new(4, 1, Activation::Linear, &mut rng)),
    ]);
    push_from_zero(&mut m);
    let x = random_tensor(vec![4, 3, 3], &mut rng);
    let w = random_tensor(vec![4, 1], &mut rng);
    check(&mut m, &x, &w, None, &[(0, 1e-3), (1, 0.05)]);
}

#[test]
fn random_shapes_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let (b, t, f, u) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..5));
        let mut m = Sequential::new(vec![
            Layer::Lstm(Lstm::new(f, u, true, &mut rng)),
            Layer::Dropout(Dropout { rate: 0.1 }),
            Layer::Lstm(Lstm::new(u, u, false, &mut rng)),
            Layer::Dense(Dense::new(u, 2, Activation::Sigmoid, &mut rng)),
        ]);
        let x = random_tensor(vec![b, t, f], &mut rng);
        let w = random_tensor(vec![b, 2], &mut rng);
        check(&mut m, &x, &w, None, &[]);
    }
}
