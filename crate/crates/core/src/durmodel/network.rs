use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DurationModel, Layout, Tensor, TrainingExample, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Disjoint mutable views of a flat gradient buffer, one per tensor.
struct GradParts<'a> {
    embedding: &'a mut [f64],
    conv1_w: &'a mut [f64],
    conv1_b: &'a mut [f64],
    ln1_gain: &'a mut [f64],
    ln1_bias: &'a mut [f64],
    conv2_w: &'a mut [f64],
    conv2_b: &'a mut [f64],
    ln2_gain: &'a mut [f64],
    ln2_bias: &'a mut [f64],
    proj_w: &'a mut [f64],
    proj_b: &'a mut [f64],
}

impl<'a> GradParts<'a> {
    fn split(grads: &'a mut [f64], layout: &Layout) -> Self {
        let mut rest = grads;
        let mut take = |t: Tensor| {
            let (head, tail) = std::mem::take(&mut rest).split_at_mut(layout.range(t).len());
            rest = tail;
            head
        };
        GradParts {
            embedding: take(Tensor::Embedding),
            conv1_w: take(Tensor::Conv1Weight),
            conv1_b: take(Tensor::Conv1Bias),
            ln1_gain: take(Tensor::Ln1Gain),
            ln1_bias: take(Tensor::Ln1Bias),
            conv2_w: take(Tensor::Conv2Weight),
            conv2_b: take(Tensor::Conv2Bias),
            ln2_gain: take(Tensor::Ln2Gain),
            ln2_bias: take(Tensor::Ln2Bias),
            proj_w: take(Tensor::ProjWeight),
            proj_b: take(Tensor::ProjBias),
        }
    }
}

/// Activations kept from the forward pass for backpropagation.
struct Cache {
    x0: Vec<f64>,
    z1: Vec<f64>,
    xhat1: Vec<f64>,
    inv_std1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    xhat2: Vec<f64>,
    inv_std2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

/// Same-padded 1-D convolution; `w` is `cout x kernel x cin`.
fn conv(input: &[f64], n: usize, cin: usize, w: &[f64], b: &[f64], cout: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let mut out = vec![0.0; n * cout];
    for pos in 0..n {
        let row = &mut out[pos * cout..(pos + 1) * cout];
        row.copy_from_slice(b);
        for tap in 0..kernel {
            let Some(src) = (pos + tap).checked_sub(pad).filter(|&s| s < n) else { continue };
            let x = &input[src * cin..(src + 1) * cin];
            for (f, acc) in row.iter_mut().enumerate() {
                let wf = &w[(f * kernel + tap) * cin..(f * kernel + tap + 1) * cin];
                *acc += wf.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    n: usize,
    cin: usize,
    w: &[f64],
    cout: usize,
    kernel: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let pad = kernel / 2;
    let mut din = vec![0.0; n * cin];
    for pos in 0..n {
        let g = &dout[pos * cout..(pos + 1) * cout];
        for (f, &gf) in g.iter().enumerate() {
            db[f] += gf;
        }
        for tap in 0..kernel {
            let Some(src) = (pos + tap).checked_sub(pad).filter(|&s| s < n) else { continue };
            let x = &input[src * cin..(src + 1) * cin];
            let dx = &mut din[src * cin..(src + 1) * cin];
            for (f, &gf) in g.iter().enumerate() {
                if gf == 0.0 {
                    continue;
                }
                let base = (f * kernel + tap) * cin;
                let wf = &w[base..base + cin];
                let dwf = &mut dw[base..base + cin];
                for c in 0..cin {
                    dwf[c] += gf * x[c];
                    dx[c] += gf * wf[c];
                }
            }
        }
    }
    din
}

/// ReLU followed by layer normalization over the channel axis. Returns
/// `(normalized, inv_std)`; the affine transform is applied by the caller.
fn relu_norm(z: &[f64], n: usize, ch: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; n * ch];
    let mut inv = vec![0.0; n];
    for pos in 0..n {
        let a: Vec<f64> = z[pos * ch..(pos + 1) * ch].iter().map(|&v| v.max(0.0)).collect();
        let mean = a.iter().sum::<f64>() / ch as f64;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ch as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv[pos] = s;
        for (o, v) in xhat[pos * ch..(pos + 1) * ch].iter_mut().zip(&a) {
            *o = (v - mean) * s;
        }
    }
    (xhat, inv)
}

/// Backward through ReLU + layer norm + affine; accumulates gain/bias grads
/// and returns the gradient w.r.t. the pre-activation `z`.
#[allow(clippy::too_many_arguments)]
fn relu_norm_backward(
    z: &[f64],
    xhat: &[f64],
    inv: &[f64],
    gain: &[f64],
    dy: &[f64],
    n: usize,
    ch: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dz = vec![0.0; n * ch];
    let mut dxhat = vec![0.0; ch];
    for pos in 0..n {
        let r = pos * ch..(pos + 1) * ch;
        let (xh, g) = (&xhat[r.clone()], &dy[r.clone()]);
        for c in 0..ch {
            dgain[c] += g[c] * xh[c];
            dbias[c] += g[c];
            dxhat[c] = g[c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / ch as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / ch as f64;
        for c in 0..ch {
            let da = inv[pos] * (dxhat[c] - mean_d - xh[c] * mean_dx);
            dz[pos * ch + c] = if z[pos * ch + c] > 0.0 { da } else { 0.0 };
        }
    }
    dz
}

fn affine(xhat: &[f64], gain: &[f64], bias: &[f64], ch: usize) -> Vec<f64> {
    xhat.chunks_exact(ch)
        .flat_map(|row| row.iter().zip(gain).zip(bias).map(|((x, g), b)| g * x + b))
        .collect()
}

fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

impl DurationModel {
    /// Predicted natural-log durations, one per input position.
    ///
    /// Passing a generator enables training mode: dropout masks are drawn
    /// from it. With `None` the pass is deterministic.
    pub fn forward(&self, units: &[u32], training: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(units, training)?.out)
    }

    fn forward_cached(&self, units: &[u32], mut training: Option<&mut ChaCha8Rng>) -> Result<Cache> {
        self.check_units(units)?;
        let cfg = &self.config;
        let (n, e, f, k) = (units.len(), cfg.embed_dim, cfg.filter_size, cfg.kernel_size);
        let emb = self.tensor(Tensor::Embedding);
        let x0: Vec<f64> = units.iter().flat_map(|&u| &emb[u as usize * e..(u as usize + 1) * e]).copied().collect();

        let z1 = conv(&x0, n, e, self.tensor(Tensor::Conv1Weight), self.tensor(Tensor::Conv1Bias), f, k);
        let (xhat1, inv_std1) = relu_norm(&z1, n, f);
        let mut h1 = affine(&xhat1, self.tensor(Tensor::Ln1Gain), self.tensor(Tensor::Ln1Bias), f);
        let mask1 = match (&mut training, cfg.dropout_rate > 0.0) {
            (Some(rng), true) => Some(dropout_mask(n * f, cfg.dropout_rate, rng)),
            _ => None,
        };
        if let Some(m) = &mask1 {
            h1.iter_mut().zip(m).for_each(|(h, m)| *h *= m);
        }

        let z2 = conv(&h1, n, f, self.tensor(Tensor::Conv2Weight), self.tensor(Tensor::Conv2Bias), f, k);
        let (xhat2, inv_std2) = relu_norm(&z2, n, f);
        let mut h2 = affine(&xhat2, self.tensor(Tensor::Ln2Gain), self.tensor(Tensor::Ln2Bias), f);
        let mask2 = match (&mut training, cfg.dropout_rate > 0.0) {
            (Some(rng), true) => Some(dropout_mask(n * f, cfg.dropout_rate, rng)),
            _ => None,
        };
        if let Some(m) = &mask2 {
            h2.iter_mut().zip(m).for_each(|(h, m)| *h *= m);
        }

        let pw = self.tensor(Tensor::ProjWeight);
        let pb = self.tensor(Tensor::ProjBias)[0];
        let out = h2.chunks_exact(f).map(|row| pb + row.iter().zip(pw).map(|(a, b)| a * b).sum::<f64>()).collect();

        Ok(Cache { x0, z1, xhat1, inv_std1, mask1, h1, z2, xhat2, inv_std2, mask2, h2, out })
    }

    /// Backpropagates `dout` (gradient w.r.t. each output) into `grads`.
    fn backward(&self, units: &[u32], cache: &Cache, dout: &[f64], grads: &mut [f64]) {
        let cfg = &self.config;
        let (n, e, f, k) = (units.len(), cfg.embed_dim, cfg.filter_size, cfg.kernel_size);
        let g = GradParts::split(grads, &self.layout);

        let pw = self.tensor(Tensor::ProjWeight);
        let mut dh2 = vec![0.0; n * f];
        for pos in 0..n {
            for c in 0..f {
                g.proj_w[c] += dout[pos] * cache.h2[pos * f + c];
                dh2[pos * f + c] = dout[pos] * pw[c];
            }
        }
        g.proj_b[0] += dout.iter().sum::<f64>();
        if let Some(m) = &cache.mask2 {
            dh2.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        let dz2 = relu_norm_backward(
            &cache.z2,
            &cache.xhat2,
            &cache.inv_std2,
            self.tensor(Tensor::Ln2Gain),
            &dh2,
            n,
            f,
            g.ln2_gain,
            g.ln2_bias,
        );
        let mut dh1 = conv_backward(
            &cache.h1,
            n,
            f,
            self.tensor(Tensor::Conv2Weight),
            f,
            k,
            &dz2,
            g.conv2_w,
            g.conv2_b,
        );
        if let Some(m) = &cache.mask1 {
            dh1.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
        }
        let dz1 = relu_norm_backward(
            &cache.z1,
            &cache.xhat1,
            &cache.inv_std1,
            self.tensor(Tensor::Ln1Gain),
            &dh1,
            n,
            f,
            g.ln1_gain,
            g.ln1_bias,
        );
        let dx0 = conv_backward(
            &cache.x0,
            n,
            e,
            self.tensor(Tensor::Conv1Weight),
            f,
            k,
            &dz1,
            g.conv1_w,
            g.conv1_b,
        );
        for (pos, &u) in units.iter().enumerate() {
            let row = &mut g.embedding[u as usize * e..(u as usize + 1) * e];
            row.iter_mut().zip(&dx0[pos * e..(pos + 1) * e]).for_each(|(g, d)| *g += d);
        }
    }

    /// Sum of squared log-duration errors for one example, with gradients
    /// of `scale * sse` accumulated into a fresh buffer.
    fn example_gradient(&self, ex: &TrainingExample, rng: Option<&mut ChaCha8Rng>, scale: f64) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(&ex.input_units, rng)?;
        let mut sse = 0.0;
        let dout: Vec<f64> = cache
            .out
            .iter()
            .zip(&ex.target_durations)
            .map(|(&y, &d)| {
                let r = y - (d as f64).ln();
                sse += r * r;
                2.0 * r * scale
            })
            .collect();
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&ex.input_units, &cache, &dout, &mut grads);
        Ok((sse, grads))
    }
}

/// Mean squared log-duration error over every position of `batch` with
/// dropout active, and its gradient w.r.t. all parameters in storage order.
///
/// Each example gets its own dropout stream seeded from `rng` in batch order,
/// and per-example gradients are summed in batch order, so the result does
/// not depend on thread scheduling.
pub fn loss_and_gradients(
    model: &DurationModel,
    batch: &[TrainingExample],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    for ex in batch {
        if ex.input_units.len() != ex.target_durations.len() || ex.is_empty() {
            return Err(Error::validation("malformed training example"));
        }
    }
    let total: usize = batch.iter().map(TrainingExample::len).sum();
    let scale = 1.0 / total as f64;
    let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
    let parts = batch
        .par_iter()
        .zip(seeds)
        .map(|(ex, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            model.example_gradient(ex, Some(&mut r), scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = vec![0.0; model.params.len()];
    let mut sse = 0.0;
    for (s, g) in parts {
        sse += s;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((sse * scale, grads))
}

/// Dropout-free mean squared log-duration error over a set of examples.
pub fn mean_loss(model: &DurationModel, set: &[TrainingExample]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::validation("empty example set"));
    }
    let parts = set
        .par_iter()
        .map(|ex| {
            let y = model.forward(&ex.input_units, None)?;
            Ok((
                y.iter().zip(&ex.target_durations).map(|(&y, &d)| (y - (d as f64).ln()).powi(2)).sum::<f64>(),
                ex.len(),
            ))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let (sse, n) = parts.iter().fold((0.0, 0usize), |(s, n), (a, b)| (s + a, n + b));
    Ok(sse / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::durmodel::DurationModelConfig;

    fn toy(k: usize) -> DurationModelConfig {
        DurationModelConfig {
            embed_dim: 1,
            filter_size: 1,
            kernel_size: 1,
            dropout_rate: 0.0,
            ..DurationModelConfig::new(k)
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = DurationModel::zeros(DurationModelConfig::new(5)).unwrap();
        assert_eq!(m.forward(&[0, 4, 2, 1], None).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn hand_computed_single_filter() {
        // With one filter the normalized activation is identically zero, so
        // the output is proj_w * ln_bias2 + proj_b no matter the input.
        let mut m = DurationModel::zeros(toy(2)).unwrap();
        m.tensor_mut(Tensor::Embedding).copy_from_slice(&[0.5, -1.5]);
        m.tensor_mut(Tensor::Conv1Weight)[0] = 2.0;
        m.tensor_mut(Tensor::Conv1Bias)[0] = 0.25;
        m.tensor_mut(Tensor::Ln1Gain)[0] = 3.0;
        m.tensor_mut(Tensor::Ln1Bias)[0] = 0.75;
        m.tensor_mut(Tensor::Conv2Weight)[0] = -2.0;
        m.tensor_mut(Tensor::Conv2Bias)[0] = 0.5;
        m.tensor_mut(Tensor::Ln2Gain)[0] = 1.0;
        m.tensor_mut(Tensor::Ln2Bias)[0] = 0.4;
        m.tensor_mut(Tensor::ProjWeight)[0] = 1.5;
        m.tensor_mut(Tensor::ProjBias)[0] = 0.1;
        let y = m.forward(&[0], None).unwrap();
        assert!((y[0] - (1.5 * 0.4 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_two_filters() {
        // E=1, F=2, kernel 1, one position, unit 1 with embedding 2.
        let cfg = DurationModelConfig { filter_size: 2, ..toy(2) };
        let mut m = DurationModel::zeros(cfg).unwrap();
        m.tensor_mut(Tensor::Embedding).copy_from_slice(&[0.0, 2.0]);
        m.tensor_mut(Tensor::Conv1Weight).copy_from_slice(&[1.0, 0.5]);
        m.tensor_mut(Tensor::Conv1Bias).copy_from_slice(&[0.0, -0.5]);
        m.tensor_mut(Tensor::Ln1Gain).copy_from_slice(&[1.0, 2.0]);
        m.tensor_mut(Tensor::Ln1Bias).copy_from_slice(&[0.0, 1.0]);
        m.tensor_mut(Tensor::Conv2Weight).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        m.tensor_mut(Tensor::Conv2Bias).copy_from_slice(&[0.0, 0.0]);
        m.tensor_mut(Tensor::Ln2Gain).copy_from_slice(&[1.0, 1.0]);
        m.tensor_mut(Tensor::Ln2Bias).copy_from_slice(&[0.0, 0.0]);
        m.tensor_mut(Tensor::ProjWeight).copy_from_slice(&[1.0, -1.0]);
        m.tensor_mut(Tensor::ProjBias)[0] = 0.0;

        // conv1: (2, 0.5) -> relu (2, 0.5); mean 1.25, var 0.5625
        let s1 = 1.0 / (0.5625f64 + LAYER_NORM_EPS).sqrt();
        let n1 = [0.75 * s1, -0.75 * s1];
        let h1 = [n1[0], 2.0 * n1[1] + 1.0];
        // conv2 is the identity; relu clips the negative channel.
        let a2 = [h1[0].max(0.0), h1[1].max(0.0)];
        let mean2 = (a2[0] + a2[1]) / 2.0;
        let var2 = ((a2[0] - mean2).powi(2) + (a2[1] - mean2).powi(2)) / 2.0;
        let s2 = 1.0 / (var2 + LAYER_NORM_EPS).sqrt();
        let expected = (a2[0] - mean2) * s2 - (a2[1] - mean2) * s2;
        let y = m.forward(&[1], None).unwrap();
        assert!((y[0] - expected).abs() < 1e-12, "{} vs {expected}", y[0]);
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = DurationModelConfig { embed_dim: 4, filter_size: 6, ..DurationModelConfig::new(5) };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DurationModel::init(cfg, &mut rng, 0.2).unwrap();
        let a = m.forward(&[0, 3, 1, 4, 2], None).unwrap();
        let b = m.forward(&[0, 3, 1, 4, 2], None).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let t = m.forward(&[0, 3, 1, 4, 2], Some(&mut rng)).unwrap();
        assert_ne!(a, t, "dropout should perturb training-mode outputs");
    }

    #[test]
    fn out_of_range_unit() {
        let m = DurationModel::zeros(toy(2)).unwrap();
        assert!(matches!(m.forward(&[0, 2], None), Err(Error::Validation(_))));
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let m = DurationModel::zeros(DurationModelConfig { dropout_rate: 0.0, ..DurationModelConfig::new(4) }).unwrap();
        let batch = vec![TrainingExample::new(vec![0, 1, 3], vec![1, 1, 1]).unwrap()];
        let (loss, grads) = loss_and_gradients(&m, &batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_example_keeps_mean_loss() {
        let cfg = DurationModelConfig { embed_dim: 3, filter_size: 4, dropout_rate: 0.0, ..DurationModelConfig::new(4) };
        let m = DurationModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(1), 0.0).unwrap();
        let ex = TrainingExample::new(vec![0, 1, 3, 2], vec![1, 3, 2, 2]).unwrap();
        let (a, ga) = loss_and_gradients(&m, std::slice::from_ref(&ex), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (b, gb) = loss_and_gradients(&m, &[ex.clone(), ex], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
