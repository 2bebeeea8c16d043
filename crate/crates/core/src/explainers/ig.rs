use super::Heatmap;
use crate::error::{Error, Result};
use crate::numerics::{argmax, Graph, Head, ModelSpec, Parameters, Tensor};

/// Right Riemann sum of the path integral from `baseline` to `x`:
/// `(x_i − x'_i) · (1/m) Σ_{t=1..m} ∂F/∂x_i (x' + (t/m)(x − x'))`.
///
/// `gradients` receives a batch of path points and returns one gradient per
/// point. It is called with at most `chunk` points at a time.
pub fn integrate_path<G>(x: &[f64], baseline: &[f64], steps: usize, chunk: usize, mut gradients: G) -> Result<Vec<f64>>
where
    G: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    if steps == 0 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    if x.len() != baseline.len() {
        return Err(Error::Shape(format!("input length {} vs baseline length {}", x.len(), baseline.len())));
    }
    let mut total = vec![0.0; x.len()];
    let ts: Vec<usize> = (1..=steps).collect();
    for part in ts.chunks(chunk.max(1)) {
        let points: Vec<Vec<f64>> = part
            .iter()
            .map(|&t| {
                let a = t as f64 / steps as f64;
                x.iter().zip(baseline).map(|(xi, bi)| bi + a * (xi - bi)).collect()
            })
            .collect();
        let grads = gradients(&points)?;
        for (&t, g) in part.iter().zip(&grads) {
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric { step: t, detail: format!("non-finite gradient at input {bad}") });
            }
            for (acc, v) in total.iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    Ok(total.iter().zip(x).zip(baseline).map(|((g, xi), bi)| (xi - bi) * g / steps as f64).collect())
}

/// Gradient of logit `class` with respect to each input in `batch`.
pub fn logit_input_gradients(
    spec: &ModelSpec,
    params: &Parameters,
    batch: &[Vec<f64>],
    class: usize,
) -> Result<Vec<Vec<f64>>> {
    let g = spec.input;
    let n = batch.len();
    let mut graph = Graph::new();
    let leaves: Vec<_> = params.entries.iter().map(|(_, t)| graph.constant(t.clone())).collect();
    let x = graph.param(Tensor::new(vec![n, g.height, g.width, g.channels], batch.concat())?);
    let logits = spec.forward_graph(&mut graph, &leaves, x)?;
    let target = graph.gather_sum(logits, &vec![class; n])?;
    let grads = graph.backward(target)?.get(x)?;
    Ok(grads.data().chunks_exact(g.len()).map(|c| c.to_vec()).collect())
}

const IG_CHUNK: usize = 32;

/// Integrated-gradients heatmap of the predicted-class logit, channels
/// summed. Returns the heatmap and the attributed class.
pub fn integrated_gradients(
    spec: &ModelSpec,
    params: &Parameters,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<(Heatmap, usize)> {
    let g = spec.input;
    if x.len() != g.len() {
        return Err(Error::Shape(format!("input of length {} for a {g:?} model", x.len())));
    }
    let logits = spec.forward(params, &Tensor::new(vec![1, g.height, g.width, g.channels], x.to_vec())?)?;
    let class = match spec.head {
        Head::Softmax { .. } => argmax(logits.data()),
        Head::Sigmoid => 0,
    };
    let attr = integrate_path(x, baseline, steps, IG_CHUNK, |pts| logit_input_gradients(spec, params, pts, class))?;
    let values = attr.chunks_exact(g.channels).map(|c| c.iter().sum()).collect();
    Ok((Heatmap::new(g.height, g.width, values)?, class))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact_for_any_step_count() {
        let w = [0.5, -2.0, 3.0];
        let x = [1.0, 2.0, -1.0];
        for m in [1, 3, 17] {
            let a = integrate_path(&x, &[0.0; 3], m, 4, |pts| Ok(pts.iter().map(|_| w.to_vec()).collect())).unwrap();
            for i in 0..3 {
                assert!((a[i] - w[i] * x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_splits_evenly() {
        let x = [1.5, -2.0];
        let a =
            integrate_path(&x, &[0.0; 2], 1024, 100, |pts| Ok(pts.iter().map(|p| vec![p[1], p[0]]).collect())).unwrap();
        let half = x[0] * x[1] / 2.0;
        for v in a {
            assert!((v - half).abs() <= 0.01 * half.abs());
        }
    }

    #[test]
    fn non_finite_gradient_names_the_step() {
        let r = integrate_path(&[1.0], &[0.0], 4, 4, |pts| {
            Ok(pts.iter().map(|p| vec![if p[0] > 0.6 { f64::NAN } else { 1.0 }]).collect())
        });
        assert!(matches!(r, Err(Error::Numeric { step: 3, .. })));
    }
}
