#![allow(dead_code)]

use eds_core::numerics::{loss_and_gradients, Geometry, Head, Layer, ModelSpec, Parameters, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random_params(spec: &ModelSpec, seed: u64) -> Parameters {
    let mut p = spec.init(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    // Nonzero biases keep rectifier and pooling inputs away from ties.
    for (name, t) in &mut p.entries {
        if name.ends_with("bias") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    p
}

pub fn random_batch(spec: &ModelSpec, n: usize, seed: u64) -> Tensor {
    let g = spec.input;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(vec![n, g.height, g.width, g.channels], data).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between autodiff and central differences over
/// every parameter.
pub fn max_param_error(spec: &ModelSpec, seed: u64) -> f64 {
    let params = random_params(spec, seed);
    let batch = random_batch(spec, 3, seed + 1);
    let classes = match spec.head {
        Head::Sigmoid => 2,
        Head::Softmax { classes } => classes,
    };
    let targets: Vec<usize> = (0..3).map(|i| i % classes).collect();
    let loss = |p: &Parameters| loss_and_gradients(spec, p, batch.clone(), &targets).unwrap().0;
    let (_, grads) = loss_and_gradients(spec, &params, batch.clone(), &targets).unwrap();
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        for j in 0..g.len() {
            let mut plus = params.clone();
            plus.entries[k].1.data_mut()[j] += EPS;
            let mut minus = params.clone();
            minus.entries[k].1.data_mut()[j] -= EPS;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

pub fn spec(input: Geometry, layers: Vec<Layer>, head: Head) -> ModelSpec {
    ModelSpec { input, layers, head }
}

/// One small network per layer kind, plus a full conv stack.
pub fn layer_cases() -> Vec<(&'static str, ModelSpec, u64)> {
    vec![
        (
            "dense+relu",
            spec(
                Geometry::new(1, 5, 1),
                vec![Layer::Dense { units: 4 }, Layer::Relu, Layer::Dense { units: 3 }, Layer::Relu],
                Head::Softmax { classes: 3 },
            ),
            11,
        ),
        (
            "conv",
            spec(Geometry::new(5, 5, 2), vec![Layer::Conv { filters: 3, kernel: 3 }], Head::Softmax { classes: 2 }),
            12,
        ),
        (
            "maxpool",
            spec(
                Geometry::new(6, 6, 1),
                vec![Layer::Conv { filters: 2, kernel: 3 }, Layer::MaxPool],
                Head::Softmax { classes: 2 },
            ),
            13,
        ),
        ("sigmoid", spec(Geometry::new(1, 6, 1), vec![Layer::Dense { units: 4 }, Layer::Relu], Head::Sigmoid), 14),
        (
            "conv-net",
            spec(
                Geometry::new(10, 10, 1),
                vec![
                    Layer::Conv { filters: 2, kernel: 3 },
                    Layer::Relu,
                    Layer::MaxPool,
                    Layer::Conv { filters: 3, kernel: 2 },
                    Layer::Relu,
                    Layer::MaxPool,
                    Layer::Dense { units: 5 },
                    Layer::Relu,
                ],
                Head::Softmax { classes: 3 },
            ),
            15,
        ),
    ]
}

/// Completeness residual of integrated gradients on `x` against a zero
/// baseline, with the absolute logit difference.
pub fn ig_residual(spec: &ModelSpec, params: &Parameters, x: &[f64], steps: usize) -> (f64, f64) {
    let g = spec.input;
    let zero = vec![0.0; x.len()];
    let (h, class) = eds_core::explainers::integrated_gradients(spec, params, x, &zero, steps).unwrap();
    let logit = |v: &[f64]| {
        spec.forward(params, &Tensor::new(vec![1, g.height, g.width, g.channels], v.to_vec()).unwrap()).unwrap().data()
            [class]
    };
    let delta = logit(x) - logit(&zero);
    ((h.values.iter().sum::<f64>() - delta).abs(), delta.abs())
}
