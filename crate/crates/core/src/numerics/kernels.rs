//! Raw layer kernels over row-major `f64` slices.
//!
//! Activations use NHWC layout. Convolution weights are `[k, k, cin, cout]`
//! and dense weights are `[in, out]` so the innermost loops run over output
//! channels and stay contiguous.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvDims {
    pub fn out_height(&self) -> usize {
        self.height - self.kernel + 1
    }

    pub fn out_width(&self) -> usize {
        self.width - self.kernel + 1
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.out_height() * self.out_width() * self.out_channels
    }
}

/// Valid (unpadded) stride-1 convolution.
pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let (oh, ow, cin, cout, k) = (d.out_height(), d.out_width(), d.in_channels, d.out_channels, d.kernel);
    let mut out = vec![0.0; d.out_len()];
    for b in 0..d.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * cout;
                let acc = &mut out[o..o + cout];
                acc.copy_from_slice(bias);
                for ky in 0..k {
                    let xrow = ((b * d.height + oy + ky) * d.width + ox) * cin;
                    let wrow = ky * k * cin * cout;
                    for t in 0..k * cin {
                        let xv = x[xrow + t];
                        if xv == 0.0 {
                            continue;
                        }
                        let w = &weight[wrow + t * cout..wrow + (t + 1) * cout];
                        for (a, wv) in acc.iter_mut().zip(w) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a valid convolution with respect to input, weight and bias.
///
/// Works per output position on a gathered input window so the inner loops
/// are axpys over the `k * k * cin` window; zero upstream gradients (common
/// behind max-pool and rectifier layers) are skipped.
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: ConvDims,
    need_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (oh, ow, cin, cout, k) = (d.out_height(), d.out_width(), d.in_channels, d.out_channels, d.kernel);
    let span = k * cin;
    let kk = k * span;
    let mut wt = vec![0.0; cout * kk];
    for t in 0..kk {
        for co in 0..cout {
            wt[co * kk + t] = weight[t * cout + co];
        }
    }
    let mut dx = if need_input_grad { Some(vec![0.0; x.len()]) } else { None };
    let mut dwt = vec![0.0; cout * kk];
    let mut db = vec![0.0; cout];
    let mut col = vec![0.0; kk];
    let mut dcol = vec![0.0; kk];
    for b in 0..d.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * cout;
                let g = &dout[o..o + cout];
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for ky in 0..k {
                    let xrow = ((b * d.height + oy + ky) * d.width + ox) * cin;
                    col[ky * span..(ky + 1) * span].copy_from_slice(&x[xrow..xrow + span]);
                }
                for (co, &gv) in g.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    db[co] += gv;
                    for (acc, c) in dwt[co * kk..(co + 1) * kk].iter_mut().zip(&col) {
                        *acc += gv * c;
                    }
                    if dx.is_some() {
                        for (acc, w) in dcol.iter_mut().zip(&wt[co * kk..(co + 1) * kk]) {
                            *acc += gv * w;
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    for ky in 0..k {
                        let xrow = ((b * d.height + oy + ky) * d.width + ox) * cin;
                        for (acc, v) in dx[xrow..xrow + span].iter_mut().zip(&mut dcol[ky * span..(ky + 1) * span]) {
                            *acc += *v;
                            *v = 0.0;
                        }
                    }
                }
            }
        }
    }
    let mut dw = vec![0.0; weight.len()];
    for t in 0..kk {
        for co in 0..cout {
            dw[t * cout + co] = dwt[co * kk + t];
        }
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pool (floor on odd sizes). Returns the output and the
/// flat input index of each selected maximum.
pub fn maxpool2_forward(
    x: &[f64],
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let n = batch * oh * ow * channels;
    let mut out = vec![0.0; n];
    let mut arg = vec![0usize; n];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * channels;
                for c in 0..channels {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((b * height + 2 * oy + dy) * width + 2 * ox + dx) * channels + c;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out[o + c] = best;
                    arg[o + c] = best_i;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(dout: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (g, &i) in dout.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}

/// `x[n, k] · w[k, m]`.
pub fn matmul(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for b in 0..n {
        let row = &mut out[b * m..(b + 1) * m];
        for (i, &xv) in x[b * k..(b + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, wv) in row.iter_mut().zip(&w[i * m..(i + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Gradients of `x · w` given `dout[n, m]`: returns `(dx[n, k], dw[k, m])`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    n: usize,
    k: usize,
    m: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * k];
        for b in 0..n {
            let g = &dout[b * m..(b + 1) * m];
            for i in 0..k {
                dx[b * k + i] = w[i * m..(i + 1) * m].iter().zip(g).map(|(a, c)| a * c).sum();
            }
        }
        dx
    });
    let dw = need_dw.then(|| {
        let mut dw = vec![0.0; k * m];
        for b in 0..n {
            let g = &dout[b * m..(b + 1) * m];
            for (i, &xv) in x[b * k..(b + 1) * k].iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (acc, gv) in dw[i * m..(i + 1) * m].iter_mut().zip(g) {
                    *acc += xv * gv;
                }
            }
        }
        dw
    });
    (dx, dw)
}

pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &[f64], cols: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax in natural log units.
pub fn log_softmax_rows(logits: &[f64], cols: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_copies_input() {
        let d = ConvDims { batch: 1, height: 3, width: 3, in_channels: 1, out_channels: 1, kernel: 1 };
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let out = conv2d_forward(&x, &[1.0], &[0.5], d);
        let expected: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn conv_sums_window() {
        let d = ConvDims { batch: 1, height: 3, width: 3, in_channels: 1, out_channels: 1, kernel: 2 };
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let out = conv2d_forward(&x, &[1.0; 4], &[0.0], d);
        assert_eq!(out, vec![8.0, 12.0, 20.0, 24.0]);
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let x = vec![1.0, 5.0, 2.0, 3.0];
        let (out, arg) = maxpool2_forward(&x, 1, 2, 2, 1);
        assert_eq!(out, vec![5.0]);
        assert_eq!(maxpool2_backward(&[2.0], &arg, 4), vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax_rows(&[1000.0, 1001.0, -3.0, 0.0, 0.0, 0.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
    }
}
