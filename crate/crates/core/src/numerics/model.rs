//! Layer-list network specifications, parameters and forward passes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Geometry { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv { filters: usize, kernel: usize },
    MaxPool,
    Dense { units: usize },
    Relu,
}

/// Output head; always a dense layer named `head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Softmax { classes: usize },
    Sigmoid,
}

impl Head {
    pub fn outputs(&self) -> usize {
        match self {
            Head::Softmax { classes } => *classes,
            Head::Sigmoid => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Geometry,
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Spatial(Geometry),
    Flat(usize),
}

impl Act {
    fn len(&self) -> usize {
        match self {
            Act::Spatial(g) => g.len(),
            Act::Flat(n) => *n,
        }
    }
}

/// Shape of one named parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ModelSpec {
    /// conv(8, 3x3) → relu → pool → conv(16, 3x3) → relu → pool → dense(64) → relu → softmax head.
    pub fn default_classifier(input: Geometry, classes: usize) -> Self {
        ModelSpec {
            input,
            layers: vec![
                Layer::Conv { filters: 8, kernel: 3 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv { filters: 16, kernel: 3 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Dense { units: 64 },
                Layer::Relu,
            ],
            head: Head::Softmax { classes },
        }
    }

    pub fn raster_discriminator(input: Geometry) -> Self {
        ModelSpec {
            input,
            layers: vec![
                Layer::Conv { filters: 8, kernel: 3 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Conv { filters: 16, kernel: 3 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Dense { units: 32 },
                Layer::Relu,
            ],
            head: Head::Sigmoid,
        }
    }

    pub fn vector_discriminator(len: usize) -> Self {
        ModelSpec {
            input: Geometry::new(1, len, 1),
            layers: vec![Layer::Dense { units: 32 }, Layer::Relu, Layer::Dense { units: 32 }, Layer::Relu],
            head: Head::Sigmoid,
        }
    }

    fn walk(&self) -> Result<(Vec<Act>, Vec<ParamShape>)> {
        if let Head::Softmax { classes } = self.head {
            if classes < 2 {
                return Err(Error::Spec(format!("softmax head needs at least 2 classes, got {classes}")));
            }
        }
        if self.input.is_empty() {
            return Err(Error::Spec("empty input geometry".into()));
        }
        let mut acts = vec![Act::Spatial(self.input)];
        let mut params = Vec::new();
        let mut cur = Act::Spatial(self.input);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (Layer::Conv { filters, kernel }, Act::Spatial(g)) => {
                    if kernel == 0 || filters == 0 || kernel > g.height || kernel > g.width {
                        return Err(Error::Spec(format!("layer {i}: conv {filters}x{kernel} does not fit {g:?}")));
                    }
                    params.push(ParamShape {
                        name: format!("conv{i}.weight"),
                        shape: vec![kernel, kernel, g.channels, filters],
                        fan_in: kernel * kernel * g.channels,
                    });
                    params.push(ParamShape { name: format!("conv{i}.bias"), shape: vec![filters], fan_in: 0 });
                    Act::Spatial(Geometry::new(g.height - kernel + 1, g.width - kernel + 1, filters))
                }
                (Layer::MaxPool, Act::Spatial(g)) => {
                    if g.height < 2 || g.width < 2 {
                        return Err(Error::Spec(format!("layer {i}: max-pool on {g:?}")));
                    }
                    Act::Spatial(Geometry::new(g.height / 2, g.width / 2, g.channels))
                }
                (Layer::Conv { .. } | Layer::MaxPool, Act::Flat(_)) => {
                    return Err(Error::Spec(format!("layer {i}: spatial layer after flattening")));
                }
                (Layer::Dense { units }, a) => {
                    if units == 0 {
                        return Err(Error::Spec(format!("layer {i}: dense with zero units")));
                    }
                    params.push(ParamShape {
                        name: format!("dense{i}.weight"),
                        shape: vec![a.len(), units],
                        fan_in: a.len(),
                    });
                    params.push(ParamShape { name: format!("dense{i}.bias"), shape: vec![units], fan_in: 0 });
                    Act::Flat(units)
                }
                (Layer::Relu, a) => a,
            };
            acts.push(cur);
        }
        let outputs = self.head.outputs();
        params.push(ParamShape { name: "head.weight".into(), shape: vec![cur.len(), outputs], fan_in: cur.len() });
        params.push(ParamShape { name: "head.bias".into(), shape: vec![outputs], fan_in: 0 });
        Ok((acts, params))
    }

    pub fn validate(&self) -> Result<()> {
        self.walk().map(|_| ())
    }

    pub fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        Ok(self.walk()?.1)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|p| p.shape.iter().product::<usize>()).sum())
    }

    /// Width of the activations feeding the head.
    pub fn feature_width(&self) -> Result<usize> {
        Ok(self.walk()?.0.last().map(|a| a.len()).unwrap_or(0))
    }

    /// Fan-in scaled uniform initialization. Weights feeding a rectifier use
    /// bound sqrt(6 / fan_in); the head uses sqrt(3 / fan_in); biases start at 0.
    pub fn init(&self, seed: u64) -> Result<Parameters> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = self.param_shapes()?;
        let entries = shapes
            .into_iter()
            .map(|p| {
                let n: usize = p.shape.iter().product();
                let data = if p.fan_in == 0 {
                    vec![0.0; n]
                } else {
                    let gain = if p.name.starts_with("head") { 3.0 } else { 6.0 };
                    let bound = (gain / p.fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                (p.name, Tensor::new(p.shape, data).expect("shape from spec"))
            })
            .collect();
        Ok(Parameters { entries })
    }

    /// All-zero parameters.
    pub fn zeros(&self) -> Result<Parameters> {
        let entries = self.param_shapes()?.into_iter().map(|p| (p.name, Tensor::zeros(&p.shape))).collect();
        Ok(Parameters { entries })
    }

    pub fn check_params(&self, params: &Parameters) -> Result<()> {
        let shapes = self.param_shapes()?;
        if shapes.len() != params.entries.len() {
            return Err(Error::Spec(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.entries.len()
            )));
        }
        for (s, (name, t)) in shapes.iter().zip(&params.entries) {
            if &s.name != name || s.shape != t.shape() {
                return Err(Error::Spec(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        let g = self.input;
        if s.len() != 4 || s[1] != g.height || s[2] != g.width || s[3] != g.channels {
            return Err(Error::Shape(format!(
                "batch {s:?} does not match model input {}x{}x{}",
                g.height, g.width, g.channels
            )));
        }
        Ok(s[0])
    }

    /// Records the forward pass on `graph` and returns the logits node.
    /// `params` must hold one graph leaf per parameter tensor, in spec order.
    pub fn forward_graph(&self, graph: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        let batch = self.check_batch(graph.value(input)?)?;
        let mut x = input;
        let mut p = params.iter();
        let mut next = || p.next().copied().ok_or_else(|| Error::Spec("too few parameters".into()));
        let mut flat = false;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { .. } => {
                    let (w, b) = (next()?, next()?);
                    graph.conv2d(x, w, b)?
                }
                Layer::MaxPool => graph.maxpool2(x)?,
                Layer::Relu => graph.relu(x)?,
                Layer::Dense { .. } => {
                    if !flat {
                        let n = graph.value(x)?.len() / batch;
                        x = graph.reshape(x, &[batch, n])?;
                        flat = true;
                    }
                    let (w, b) = (next()?, next()?);
                    let h = graph.matmul(x, w)?;
                    graph.add_row_bias(h, b)?
                }
            };
        }
        if !flat {
            let n = graph.value(x)?.len() / batch;
            x = graph.reshape(x, &[batch, n])?;
        }
        let (w, b) = (next()?, next()?);
        let h = graph.matmul(x, w)?;
        graph.add_row_bias(h, b)
    }

    /// Inference without a tape. Returns `(logits[n, outputs], features[n, feature_width])`
    /// where features are the activations entering the head.
    pub fn forward_with_features(&self, params: &Parameters, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        let mut act = Act::Spatial(self.input);
        let mut p = params.entries.iter();
        let mut next = || p.next().map(|(_, t)| t).ok_or_else(|| Error::Spec("too few parameters".into()));
        for layer in &self.layers {
            match (*layer, act) {
                (Layer::Conv { filters, kernel }, Act::Spatial(g)) => {
                    let (w, b) = (next()?, next()?);
                    let d = ConvDims {
                        batch: n,
                        height: g.height,
                        width: g.width,
                        in_channels: g.channels,
                        out_channels: filters,
                        kernel,
                    };
                    x = kernels::conv2d_forward(&x, w.data(), b.data(), d);
                    act = Act::Spatial(Geometry::new(d.out_height(), d.out_width(), filters));
                }
                (Layer::MaxPool, Act::Spatial(g)) => {
                    x = kernels::maxpool2_forward(&x, n, g.height, g.width, g.channels).0;
                    act = Act::Spatial(Geometry::new(g.height / 2, g.width / 2, g.channels));
                }
                (Layer::Dense { units }, a) => {
                    let (w, b) = (next()?, next()?);
                    x = kernels::matmul(&x, w.data(), n, a.len(), units);
                    kernels::add_row_bias(&mut x, b.data());
                    act = Act::Flat(units);
                }
                (Layer::Relu, _) => kernels::relu_inplace(&mut x),
                _ => return Err(Error::Spec("spatial layer after flattening".into())),
            }
        }
        let width = act.len();
        let (w, b) = (next()?, next()?);
        let outputs = self.head.outputs();
        let mut logits = kernels::matmul(&x, w.data(), n, width, outputs);
        kernels::add_row_bias(&mut logits, b.data());
        Ok((Tensor::new(vec![n, outputs], logits)?, Tensor::new(vec![n, width], x)?))
    }

    pub fn forward(&self, params: &Parameters, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_features(params, batch)?.0)
    }

    /// Softmax (or sigmoid) probabilities per row.
    pub fn probabilities(&self, params: &Parameters, batch: &Tensor) -> Result<Tensor> {
        let logits = self.forward(params, batch)?;
        let shape = logits.shape().to_vec();
        let data = match self.head {
            Head::Softmax { classes } => kernels::softmax_rows(logits.data(), classes),
            Head::Sigmoid => logits.data().iter().map(|&z| kernels::sigmoid(z)).collect(),
        };
        Tensor::new(shape, data)
    }

    /// Argmax class per row (softmax head) or `p >= 0.5` (sigmoid head).
    pub fn predict(&self, params: &Parameters, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(params, batch)?;
        Ok(match self.head {
            Head::Softmax { classes } => logits.data().chunks_exact(classes).map(argmax).collect(),
            Head::Sigmoid => logits.data().iter().map(|&z| usize::from(z >= 0.0)).collect(),
        })
    }
}

/// First index of the maximum (ties resolve to the lowest index).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Named parameter tensors in spec order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub entries: Vec<(String, Tensor)>,
}

impl Parameters {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Rounds every value to the nearest `f32`, the persisted precision.
    pub fn round_to_f32(&mut self) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Registers every tensor as a gradient-receiving leaf.
    pub fn leaves(&self, graph: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| graph.param(t.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_input() -> Geometry {
        Geometry::new(10, 10, 1)
    }

    #[test]
    fn default_classifier_shapes_compose() {
        let spec = ModelSpec::default_classifier(Geometry::new(64, 64, 1), 2);
        let shapes = spec.param_shapes().unwrap();
        let names: Vec<_> = shapes.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv0.weight",
                "conv0.bias",
                "conv3.weight",
                "conv3.bias",
                "dense6.weight",
                "dense6.bias",
                "head.weight",
                "head.bias"
            ]
        );
        // 64 -> 62 -> 31 -> 29 -> 14
        assert_eq!(shapes[4].shape, vec![14 * 14 * 16, 64]);
        assert_eq!(spec.feature_width().unwrap(), 64);
    }

    #[test]
    fn rejects_single_class_and_oversized_kernel() {
        let mut spec = ModelSpec::default_classifier(tiny_input(), 1);
        assert!(matches!(spec.validate(), Err(Error::Spec(_))));
        spec.head = Head::Softmax { classes: 2 };
        spec.layers = vec![Layer::Conv { filters: 2, kernel: 11 }];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let spec = ModelSpec::default_classifier(Geometry::new(12, 12, 1), 4);
        let params = spec.zeros().unwrap();
        let batch = Tensor::full(&[3, 12, 12, 1], 0.7);
        let p = spec.probabilities(&params, &batch).unwrap();
        for v in p.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_mismatch_is_shape_error() {
        let spec = ModelSpec::default_classifier(tiny_input(), 2);
        let params = spec.init(0).unwrap();
        let bad = Tensor::zeros(&[1, 9, 10, 1]);
        assert!(matches!(spec.forward(&params, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn graph_and_tapeless_forward_agree() {
        let spec = ModelSpec::default_classifier(Geometry::new(12, 12, 2), 3);
        let params = spec.init(5).unwrap();
        let data: Vec<f64> = (0..2 * 12 * 12 * 2).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let batch = Tensor::new(vec![2, 12, 12, 2], data).unwrap();
        let mut g = Graph::new();
        let leaves = params.leaves(&mut g);
        let x = g.constant(batch.clone());
        let logits = spec.forward_graph(&mut g, &leaves, x).unwrap();
        let direct = spec.forward(&params, &batch).unwrap();
        assert_eq!(g.value(logits).unwrap(), &direct);
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::default_classifier(tiny_input(), 2);
        assert_eq!(spec.init(3).unwrap(), spec.init(3).unwrap());
        assert_ne!(spec.init(3).unwrap(), spec.init(4).unwrap());
    }
}
