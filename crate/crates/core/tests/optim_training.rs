use proptest::prelude::*;
use svb_core::harness::dataset::{Dataset, Split};
use svb_core::network::{Layer, Network};
use svb_core::optim::{lr_at, sgd_momentum_step, train, OptState, TrainConfig};
use svb_core::spectral::svd;
use svb_core::{Error, Rng, Tensor};

/// Heavy-ball iterates on `f(θ) = a(θ − c)²/2` from the 2×2 linear
/// recurrence on `(θ_t, θ_{t−1})`, raised to a power by repeated squaring.
fn heavy_ball_oracle(theta0: f64, a: f64, c: f64, lr: f64, m: f64, wd: f64, steps: u32) -> f64 {
    // θ_{t+1} = (1 + m − lr(a + wd))θ_t − mθ_{t−1} + lr·a·c, in homogeneous form.
    let t = [
        [1.0 + m - lr * (a + wd), -m, lr * a * c],
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let mul = |x: &[[f64; 3]; 3], y: &[[f64; 3]; 3]| {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
            }
        }
        r
    };
    let mut acc = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let (mut base, mut e) = (t, steps);
    while e > 0 {
        if e & 1 == 1 {
            acc = mul(&acc, &base);
        }
        base = mul(&base, &base);
        e >>= 1;
    }
    acc[0][0] * theta0 + acc[0][1] * theta0 + acc[0][2]
}

#[test]
fn momentum_matches_the_closed_recurrence() {
    let cfg = TrainConfig {
        momentum: 0.9,
        weight_decay: 1e-3,
        ..TrainConfig::default()
    };
    let (a, c, lr) = (0.7, -1.3, 0.05);
    let theta0 = [2.0, -0.5, 0.25];
    let mut theta = Tensor::vector(theta0.to_vec());
    let mut state = OptState {
        velocities: vec![Tensor::zeros(&[3])],
        iteration: 0,
        epoch: 0,
    };
    for _ in 0..100 {
        let g = theta.map(|t| a * (t - c));
        let mut params = vec![("theta".to_string(), &mut theta)];
        sgd_momentum_step(&mut params, &[g], &mut state, lr, &cfg).unwrap();
    }
    assert_eq!(state.iteration, 100);
    for (i, &t0) in theta0.iter().enumerate() {
        let want = heavy_ball_oracle(t0, a, c, lr, cfg.momentum, cfg.weight_decay, 100);
        assert!(
            (theta.data()[i] - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{} vs {want}",
            theta.data()[i]
        );
    }
}

proptest! {
    #[test]
    fn lr_schedule_is_monotone_and_hits_both_ends(
        start in 1e-3f64..1.0,
        ratio in 1e-4f64..1.0,
        every in 1usize..10,
        epochs in 1usize..200,
    ) {
        let cfg = TrainConfig {
            lr_start: start,
            lr_end: start * ratio,
            lr_decay_every_epochs: every,
            epochs,
            ..TrainConfig::default()
        };
        prop_assert_eq!(lr_at(0, &cfg), start);
        if (epochs - 1) / every > 0 {
            prop_assert!((lr_at(epochs - 1, &cfg) / (start * ratio) - 1.0).abs() < 1e-12);
        }
        for e in 1..epochs {
            prop_assert!(lr_at(e, &cfg) <= lr_at(e - 1, &cfg) * (1.0 + 1e-15));
            if e % every != 0 {
                prop_assert_eq!(lr_at(e, &cfg), lr_at(e - 1, &cfg));
            }
        }
    }
}

fn toy_images(rng: &mut Rng, n: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut x = Tensor::gaussian(rng, &[n, 3, 8, 8]);
    for (i, &label) in labels.iter().enumerate() {
        let plane = &mut x.data_mut()[i * 192 + label * 64..i * 192 + (label + 1) * 64];
        plane.iter_mut().for_each(|v| *v += 1.5);
    }
    Dataset::classification(x, labels, 3, Split::Train, "toy").unwrap()
}

#[test]
fn convnet_training_keeps_spectra_and_bn_gains_bounded() {
    let mut rng = Rng::seed_from(3);
    let data = toy_images(&mut rng, 48);
    let mut net = Network::convnet(1, 3, 3, &mut rng).unwrap();
    let (eps, eps_tilde) = (0.2, 0.3);
    let cfg = TrainConfig {
        lr_start: 0.05,
        lr_end: 0.01,
        lr_decay_every_epochs: 1,
        epochs: 2,
        batch_size: 16,
        t_svb: 2,
        epsilon: eps,
        epsilon_tilde: eps_tilde,
        ..TrainConfig::default()
    };
    let mut sink = Vec::new();
    let report = train(&mut net, &data, None, &cfg, &mut sink).unwrap();
    assert_eq!(report.state.iteration, 6);
    assert_eq!(report.svb_calls, 3);
    assert_eq!(report.bbn_calls, 3);
    assert_eq!(sink.len(), 2);
    for &(lo, hi) in &report.post_svb_extremes {
        assert!(lo >= 1.0 / (1.0 + eps) - 1e-9 && hi <= 1.0 + eps + 1e-9, "({lo}, {hi})");
    }
    for m in net.bounded_matrices(true) {
        for s in svd(&m.matrix).unwrap().s {
            assert!(
                s >= 1.0 / (1.0 + eps) - 1e-9 && s <= 1.0 + eps + 1e-9,
                "{}: {s}",
                m.name
            );
        }
    }
    for layer in &net.layers {
        if let Layer::BatchNorm(bn) = layer {
            let gains = bn.gains();
            let hi = gains.iter().copied().fold(f64::MIN, f64::max);
            let lo = gains.iter().copied().fold(f64::MAX, f64::min);
            assert!(
                lo > 0.0 && hi / lo <= (1.0 + eps_tilde).powi(2) * (1.0 + 1e-12),
                "{lo} {hi}"
            );
        }
    }
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let mut rng = Rng::seed_from(5);
    let data = toy_images(&mut rng, 32);
    let mut net = Network::mlp(&[192, 16, 3], &mut rng);
    let cfg = TrainConfig {
        lr_start: 1e200,
        lr_end: 1e200,
        epochs: 3,
        batch_size: 8,
        momentum: 0.0,
        t_svb: 0,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &data, None, &cfg, &mut Vec::new()).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}
