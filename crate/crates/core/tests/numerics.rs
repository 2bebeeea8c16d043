mod common;

use common::{layer_cases, max_param_error, random_batch, random_params, rel_err, spec, EPS, TOL};
use eds_core::explainers::logit_input_gradients;
use eds_core::numerics::{
    per_example_gradient, train, Geometry, GradientScope, Head, Layer, ModelCheckpoint, ModelSpec, Tensor, TrainConfig,
    VecSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case_error(name: &str) -> f64 {
    let (_, s, seed) = layer_cases().into_iter().find(|(n, _, _)| *n == name).unwrap();
    max_param_error(&s, seed)
}

#[test]
fn dense_and_relu_gradients_match_finite_differences() {
    let e = case_error("dense+relu");
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    let e = case_error("conv");
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn maxpool_gradients_match_finite_differences() {
    let e = case_error("maxpool");
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn sigmoid_head_gradients_match_finite_differences() {
    let e = case_error("sigmoid");
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn full_conv_net_gradients_match_finite_differences() {
    let e = case_error("conv-net");
    assert!(e <= TOL, "max relative error {e}");
}

#[test]
fn input_gradients_match_finite_differences() {
    let s = spec(
        Geometry::new(6, 6, 1),
        vec![
            Layer::Conv { filters: 2, kernel: 3 },
            Layer::Relu,
            Layer::MaxPool,
            Layer::Dense { units: 4 },
            Layer::Relu,
        ],
        Head::Softmax { classes: 2 },
    );
    let params = random_params(&s, 16);
    let x = random_batch(&s, 1, 17).into_data();
    let grad = &logit_input_gradients(&s, &params, std::slice::from_ref(&x), 1).unwrap()[0];
    let logit = |v: &[f64]| s.forward(&params, &Tensor::new(vec![1, 6, 6, 1], v.to_vec()).unwrap()).unwrap().data()[1];
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[j] += EPS;
        m[j] -= EPS;
        worst = worst.max(rel_err(grad[j], (logit(&p) - logit(&m)) / (2.0 * EPS)));
    }
    assert!(worst <= TOL, "max relative error {worst}");
}

#[test]
fn two_layer_forward_matches_hand_rolled_oracle() {
    let s = spec(Geometry::new(1, 3, 1), vec![Layer::Dense { units: 4 }, Layer::Relu], Head::Softmax { classes: 2 });
    let p = s.init(0).unwrap();
    let x = [0.2, -0.7, 1.3];
    let (w1, b1) = (p.get("dense0.weight").unwrap().data(), p.get("dense0.bias").unwrap().data());
    let (w2, b2) = (p.get("head.weight").unwrap().data(), p.get("head.bias").unwrap().data());
    let mut h = [0.0; 4];
    for (u, hu) in h.iter_mut().enumerate() {
        let mut acc = b1[u];
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w1[i * 4 + u];
        }
        *hu = acc.max(0.0);
    }
    let mut expected = [0.0; 2];
    for (c, e) in expected.iter_mut().enumerate() {
        *e = b2[c] + (0..4).map(|u| h[u] * w2[u * 2 + c]).sum::<f64>();
    }
    let got = s.forward(&p, &Tensor::new(vec![1, 1, 3, 1], x.to_vec()).unwrap()).unwrap();
    for (g, e) in got.data().iter().zip(expected) {
        assert!((g - e).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let s = ModelSpec::default_classifier(Geometry::new(12, 12, 1), 3);
    let p = s.init(3).unwrap();
    let probs = s.probabilities(&p, &random_batch(&s, 5, 4)).unwrap();
    for r in 0..5 {
        assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn logistic_head_gradient_matches_closed_form() {
    // Sigmoid head straight on two features: d(bits)/dw = (p - y) x / ln 2.
    let s = spec(Geometry::new(1, 2, 1), vec![], Head::Sigmoid);
    let mut p = s.zeros().unwrap();
    p.entries[0].1.data_mut().copy_from_slice(&[0.4, -1.1]);
    p.entries[1].1.data_mut()[0] = 0.25;
    let ckpt = ModelCheckpoint { params: p, step: 0, learning_rate: 0.01, seed: 0 };
    let x = [1.5, 0.5];
    for y in [0usize, 1] {
        let g = per_example_gradient(&s, &ckpt, &x, y, &GradientScope::FinalDense).unwrap();
        let z: f64 = 0.4 * 1.5 - 1.1 * 0.5 + 0.25;
        let prob = 1.0 / (1.0 + (-z).exp());
        let d = (prob - y as f64) / std::f64::consts::LN_2;
        let expected = [d * x[0], d * x[1], d];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{g:?} vs {expected:?}");
        }
    }
}

fn separable_toy(seed: u64, n: usize) -> VecSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = VecSet::default();
    while set.inputs.len() < n {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let margin = x[0] + 0.5 * x[1] - 0.25 * x[2];
        if margin.abs() < 0.1 {
            continue;
        }
        set.targets.push(usize::from(margin > 0.0));
        set.inputs.push(x);
    }
    set
}

fn toy_spec() -> ModelSpec {
    spec(Geometry::new(1, 4, 1), vec![Layer::Dense { units: 8 }, Layer::Relu], Head::Softmax { classes: 2 })
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 20, checkpoint_every: 20, seed, ..TrainConfig::default() }
}

#[test]
fn separable_toy_reaches_full_accuracy() {
    let data = separable_toy(5, 600);
    let s = toy_spec();
    let out = train(&s, &data, &toy_config(1)).unwrap();
    let acc = eds_core::numerics::accuracy(&s, &out.params, &data).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn epoch_loss_is_nonincreasing_for_most_seeds() {
    let data = separable_toy(6, 600);
    let s = toy_spec();
    let mono = (0..10)
        .filter(|&seed| {
            let out = train(&s, &data, &toy_config(seed)).unwrap();
            out.epoch_losses.windows(2).all(|w| w[1] <= w[0])
        })
        .count();
    assert!(mono >= 9, "{mono} of 10 seeds monotone");
}

#[test]
fn training_is_bit_identical_per_seed() {
    let data = separable_toy(7, 300);
    let s = toy_spec();
    let a = train(&s, &data, &toy_config(3)).unwrap();
    let b = train(&s, &data, &toy_config(3)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}
