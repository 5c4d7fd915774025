//! Independent references for the forecaster: a naive forward pass written
//! straight from the documented parameter layout and a central-difference
//! gradient probe.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wigig_core::predictor::{mse, Architecture, ConvLayer, Model};

pub fn random_arch(rng: &mut ChaCha8Rng) -> Architecture {
    let features = rng.random_range(1..=4);
    let input_slots = rng.random_range(6..=12);
    let output_slots = rng.random_range(1..=3);
    let mut conv = Vec::new();
    let mut len = input_slots;
    for _ in 0..rng.random_range(0..=2) {
        let kernel = rng.random_range(1..=3.min(len));
        let stride = rng.random_range(1..=2);
        let out_len = (len - kernel) / stride + 1;
        let pool = if out_len >= 2 { rng.random_range(1..=2) } else { 1 };
        conv.push(ConvLayer {
            filters: rng.random_range(1..=4),
            kernel,
            stride,
            pool,
        });
        len = out_len / pool;
    }
    let mut dense: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=6)).collect();
    dense.push(output_slots * features);
    Architecture {
        input_slots,
        features,
        output_slots,
        conv,
        dense,
    }
}

/// Straight-line forward pass over the flat parameter buffer.
pub fn naive_forward(arch: &Architecture, params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut off = 0;
    let mut take = |n: usize| {
        let s = &params[off..off + n];
        off += n;
        s.to_vec()
    };
    let n_layers = arch.conv.len() + arch.dense.len();
    let mut layer_idx = 0;
    // x[t][c]
    let mut x: Vec<Vec<f64>> = input.chunks(arch.features).map(|r| r.to_vec()).collect();
    for c in &arch.conv {
        layer_idx += 1;
        let last = layer_idx == n_layers;
        let ch = x[0].len();
        let w = take(c.filters * c.kernel * ch);
        let b = take(c.filters);
        let out_len = (x.len() - c.kernel) / c.stride + 1;
        let mut y = vec![vec![0.0; c.filters]; out_len];
        for (o, row) in y.iter_mut().enumerate() {
            for (f, v) in row.iter_mut().enumerate() {
                let mut s = b[f];
                for tap in 0..c.kernel {
                    for k in 0..ch {
                        s += w[(f * c.kernel + tap) * ch + k] * x[o * c.stride + tap][k];
                    }
                }
                *v = if last { s } else { s.max(0.0) };
            }
        }
        let pooled = out_len / c.pool;
        x = (0..pooled)
            .map(|q| {
                (0..c.filters)
                    .map(|f| {
                        (0..c.pool)
                            .map(|j| y[q * c.pool + j][f])
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect()
            })
            .collect();
    }
    let mut v: Vec<f64> = x.into_iter().flatten().collect();
    for &width in &arch.dense {
        layer_idx += 1;
        let last = layer_idx == n_layers;
        let w = take(width * v.len());
        let b = take(width);
        v = (0..width)
            .map(|o| {
                let s = b[o] + (0..v.len()).map(|i| w[o * v.len() + i] * v[i]).sum::<f64>();
                if last {
                    s
                } else {
                    s.max(0.0)
                }
            })
            .collect();
    }
    assert_eq!(off, params.len(), "layout consumed every parameter");
    v
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn with_random_biases(arch: Architecture, rng: &mut ChaCha8Rng) -> Model {
    // fresh models have zero biases; randomise everything for a sharper check
    let m = Model::init(arch.clone(), rng).unwrap();
    let params = random_vec(rng, m.param_count()).iter().map(|v| v * 0.5).collect();
    Model::from_parts(arch, params, vec![0.0; m.param_count()], 0).unwrap()
}

/// Largest relative disagreement between backprop and central differences.
pub fn worst_gradient_error(model: &Model, input: &[f64], target: &[f64], h: f64) -> f64 {
    let (_, grads) = model.backward(input, target).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, analytic) in grads.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = mse(&probe.forward(input).unwrap(), target).unwrap();
        probe.params[i] = orig - h;
        let down = mse(&probe.forward(input).unwrap(), target).unwrap();
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
