mod common;

use common::*;
use eeg_seizure::nn::{AdamState, Conv1d, Dense, Dropout, Layer, MaxPool1d, Network, Padding, Tensor};
use eeg_seizure::rng::rng_from;
use rand::Rng as _;

#[test]
fn every_layer_matches_finite_differences() {
    let out = gradient_checks(50, 2024, 1e-6);
    println!("{}", out.detail);
    assert!(out.pass, "{}", out.detail);
    assert!(out.elapsed.as_secs() < 60);
}

#[test]
fn each_layer_kind_is_covered() {
    let mut rng = rng_from(5, &[]);
    let kinds: std::collections::BTreeSet<&str> = (0..9).map(|c| grad_case(c, &mut rng).0).collect();
    assert_eq!(kinds.len(), 8, "{kinds:?}");
}

/// Direct quadruple loop: out[o][t] = b[o] + sum_c sum_j w[o][c][j] * xpad[c][t*s + j].
fn conv_oracle(conv: &Conv1d, x: &Tensor) -> Vec<f64> {
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, k, s) = (conv.out_channels(), conv.kernel(), conv.stride);
    let (left, padded) = match conv.padding {
        Padding::Valid => (0, len),
        Padding::Same => {
            let out = len.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(len);
            (total / 2, len + total)
        }
    };
    let xp = |c: usize, i: usize| if i < left || i >= left + len { 0.0 } else { x.data()[c * len + i - left] };
    let lout = (padded - k) / s + 1;
    let w = conv.weight.data();
    let mut out = vec![0.0; cout * lout];
    for o in 0..cout {
        for t in 0..lout {
            let mut acc = conv.bias.data()[o];
            for c in 0..cin {
                for j in 0..k {
                    acc += w[(o * cin + c) * k + j] * xp(c, t * s + j);
                }
            }
            out[o * lout + t] = acc;
        }
    }
    out
}

#[test]
fn conv_forward_matches_loop_oracle() {
    let mut rng = rng_from(11, &[]);
    for case in 0..40 {
        let (cin, cout) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let len = rng.random_range(4..=40);
        let k = rng.random_range(1..=len.min(9));
        let padding = if case % 2 == 0 { Padding::Valid } else { Padding::Same };
        let mut conv = Conv1d::new(cin, cout, k, rng.random_range(1..=4), padding, &mut rng);
        conv.bias = tensor(&mut rng, &[cout]);
        let x = tensor(&mut rng, &[cin, len]);
        let got = conv.forward(&x).unwrap();
        let want = conv_oracle(&conv, &x);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_small_examples() {
    let mut rng = rng_from(0, &[]);
    let mut conv = Conv1d::new(1, 1, 3, 1, Padding::Valid, &mut rng);
    conv.weight = Tensor::from_vec(&[1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap();
    let y = conv.forward(&Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    assert_eq!(y.data(), &[-2.0]);

    let mut id = Conv1d::new(1, 1, 3, 1, Padding::Same, &mut rng);
    id.weight = Tensor::from_vec(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
    let x = Tensor::from_vec(&[1, 5], vec![3.0, -1.0, 4.0, 1.0, -5.0]).unwrap();
    assert_eq!(id.forward(&x).unwrap().data(), x.data());
}

#[test]
fn maxpool_ties_route_to_first_index() {
    let pool = MaxPool1d::new(2);
    let x = Tensor::from_vec(&[1, 4], vec![2.0, 2.0, 1.0, 3.0]).unwrap();
    let (y, argmax) = pool.forward(&x).unwrap();
    assert_eq!(y.data(), &[2.0, 3.0]);
    assert_eq!(argmax, vec![0, 3]);
    let g = pool.backward(&[1, 4], &argmax, &Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
    assert_eq!(g.data(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn forward_is_deterministic_for_fixed_seed() {
    let mut rng = rng_from(3, &[]);
    let net = Network::new(vec![
        Layer::Conv1d(Conv1d::new(2, 3, 3, 1, Padding::Same, &mut rng)),
        Layer::Relu,
        Layer::Dropout(Dropout { rate: 0.5 }),
        Layer::Flatten,
        Layer::Dense(Dense::new(30, 2, &mut rng)),
    ]);
    let x = tensor(&mut rng, &[2, 10]);
    let a = net.forward_train(&x, &mut rng_from(9, &[])).unwrap().0;
    let b = net.forward_train(&x, &mut rng_from(9, &[])).unwrap().0;
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let c = net.forward_train(&x, &mut rng_from(10, &[])).unwrap().0;
    assert_ne!(a, c);
    // Inference ignores dropout.
    assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
}

#[test]
fn two_layer_composition_passes_gradient_check() {
    let mut rng = rng_from(21, &[]);
    let net = Network::new(vec![
        Layer::Dense(Dense::new(5, 4, &mut rng)),
        Layer::Sigmoid,
        Layer::Dense(Dense::new(4, 2, &mut rng)),
    ]);
    let e = network_grad_error(&net, &tensor(&mut rng, &[3, 5]), 1, 2);
    assert!(e <= 1e-6, "{e}");
}

#[test]
fn adam_with_zero_learning_rate_keeps_parameters() {
    let mut rng = rng_from(4, &[]);
    let mut dense = Dense::new(3, 2, &mut rng);
    let before = dense.clone();
    let mut adam = AdamState::new([&dense.weight, &dense.bias]);
    let grads = vec![tensor(&mut rng, &[2, 3]), tensor(&mut rng, &[2])];
    let names = vec!["w".to_string(), "b".to_string()];
    for _ in 0..5 {
        adam.step(&mut [&mut dense.weight, &mut dense.bias], &grads, &names, 0.0).unwrap();
    }
    assert_eq!(dense, before);
}
