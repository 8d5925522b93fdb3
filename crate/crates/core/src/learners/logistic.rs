//! Multinomial logistic regression trained by seeded per-sample SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `num_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub epochs: usize,
    /// Step size in epoch `e` is `learning_rate / (1 + e)`.
    pub learning_rate: f64,
    pub l2: f64,
}

impl LogisticModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        LogisticModel {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    /// Class with the largest logit; ties go to the smaller class id.
    pub fn predict(&self, x: &[f64]) -> u32 {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best as u32
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2`, with its analytic gradient
/// `(dW, db)`.
pub fn loss_and_gradient(
    model: &LogisticModel,
    xs: &[Vec<f64>],
    ys: &[u32],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = vec![0.0; model.bias.len()];
    for (x, &y) in xs.iter().zip(ys) {
        let mut p = model.logits(x);
        softmax_in_place(&mut p);
        loss -= p[y as usize].ln();
        p[y as usize] -= 1.0;
        for (c, &g) in p.iter().enumerate() {
            gb[c] += g / n;
            for (w, &v) in gw[c * model.dim..(c + 1) * model.dim].iter_mut().zip(x) {
                *w += g * v / n;
            }
        }
    }
    loss /= n;
    loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g += l2 * w;
    }
    (loss, gw, gb)
}

/// Trains from zero weights. Items are visited in a fresh permutation every
/// epoch, drawn from a ChaCha8 stream seeded with `seed`; no early stopping.
pub fn train(
    xs: &[Vec<f64>],
    ys: &[u32],
    num_classes: usize,
    dim: usize,
    schedule: &SgdSchedule,
    seed: u64,
) -> LogisticModel {
    let mut model = LogisticModel::zeros(num_classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut p = vec![0.0; num_classes];
    for epoch in 0..schedule.epochs {
        let lr = schedule.learning_rate / (1.0 + epoch as f64);
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i];
            for (c, slot) in p.iter_mut().enumerate() {
                let w = &model.weights[c * dim..(c + 1) * dim];
                *slot = w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + model.bias[c];
            }
            softmax_in_place(&mut p);
            p[ys[i] as usize] -= 1.0;
            let shrink = 1.0 - lr * schedule.l2;
            for (c, &g) in p.iter().enumerate() {
                let step = lr * g;
                for (w, &v) in model.weights[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *w = *w * shrink - step * v;
                }
                model.bias[c] -= step;
            }
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let xs = vec![vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.75, 2.0]];
        let ys = vec![0, 2, 1];
        let mut model = LogisticModel::zeros(3, 2);
        for (i, w) in model.weights.iter_mut().enumerate() {
            *w = 0.1 * i as f64 - 0.2;
        }
        model.bias = vec![0.05, -0.1, 0.2];
        let l2 = 0.01;
        let (_, gw, gb) = loss_and_gradient(&model, &xs, &ys, l2);

        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[i] += h;
            let mut minus = model.clone();
            minus.weights[i] -= h;
            let fd = (loss_and_gradient(&plus, &xs, &ys, l2).0
                - loss_and_gradient(&minus, &xs, &ys, l2).0)
                / (2.0 * h);
            assert!(rel(fd, gw[i]) <= 1e-5, "w[{i}]: fd {fd} vs {}", gw[i]);
        }
        for i in 0..model.bias.len() {
            let mut plus = model.clone();
            plus.bias[i] += h;
            let mut minus = model.clone();
            minus.bias[i] -= h;
            let fd = (loss_and_gradient(&plus, &xs, &ys, l2).0
                - loss_and_gradient(&minus, &xs, &ys, l2).0)
                / (2.0 * h);
            assert!(rel(fd, gb[i]) <= 1e-5, "b[{i}]: fd {fd} vs {}", gb[i]);
        }
    }

    #[test]
    fn sgd_reduces_loss_and_separates() {
        let xs = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![1.0, 1.0], vec![0.9, 1.0]];
        let ys = vec![0, 0, 1, 1];
        let sched = SgdSchedule { epochs: 20, learning_rate: 0.5, l2: 0.0 };
        let start = loss_and_gradient(&LogisticModel::zeros(2, 2), &xs, &ys, 0.0).0;
        let model = train(&xs, &ys, 2, 2, &sched, 7);
        let end = loss_and_gradient(&model, &xs, &ys, 0.0).0;
        assert!(end < start);
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(model.predict(x), y);
        }
        assert_eq!(model, train(&xs, &ys, 2, 2, &sched, 7));
    }

    #[test]
    fn zero_model_ties_to_class_zero() {
        assert_eq!(LogisticModel::zeros(4, 3).predict(&[1.0, 2.0, 3.0]), 0);
    }
}
