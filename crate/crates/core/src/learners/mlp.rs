//! Single-hidden-layer tanh network trained by mini-batch Adam.
//!
//! Inputs and target are z-scored internally. Parameters are stored flat in
//! the order `W1 (hidden x p, row-major) | b1 (hidden) | w2 (hidden) | b2`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    /// Adam step size.
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per step; 0 means full batch.
    pub batch_size: usize,
    /// L2 penalty on the weights (not the biases).
    pub weight_decay: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            learning_rate: 0.005,
            epochs: 200,
            batch_size: 64,
            weight_decay: 1e-4,
        }
    }
}

pub fn n_params(p: usize, hidden: usize) -> usize {
    hidden * p + 2 * hidden + 1
}

/// Mean half squared error `(1/2n) sum (f(x_i) - y_i)^2` and its gradient.
///
/// `x` is row-major `n x p`.
pub fn loss_and_gradient(params: &[f64], x: &[f64], y: &[f64], p: usize, hidden: usize) -> (f64, Vec<f64>) {
    let n = y.len();
    assert_eq!(x.len(), n * p);
    assert_eq!(params.len(), n_params(p, hidden));
    let (w1, rest) = params.split_at(hidden * p);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let b2 = b2[0];

    let mut grad = vec![0.0; params.len()];
    let mut act = vec![0.0; hidden];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (row, &target) in x.chunks_exact(p).zip(y) {
        let mut out = b2;
        for h in 0..hidden {
            let w = &w1[h * p..(h + 1) * p];
            let z = b1[h] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            act[h] = z.tanh();
            out += w2[h] * act[h];
        }
        let err = out - target;
        loss += 0.5 * err * err;
        let d_out = err * inv_n;
        let (g_w1, g_rest) = grad.split_at_mut(hidden * p);
        let (g_b1, g_rest) = g_rest.split_at_mut(hidden);
        let (g_w2, g_b2) = g_rest.split_at_mut(hidden);
        g_b2[0] += d_out;
        for h in 0..hidden {
            g_w2[h] += d_out * act[h];
            let d_z = d_out * w2[h] * (1.0 - act[h] * act[h]);
            g_b1[h] += d_z;
            for (g, v) in g_w1[h * p..(h + 1) * p].iter_mut().zip(row) {
                *g += d_z * v;
            }
        }
    }
    (loss * inv_n, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    hidden: usize,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    params: Vec<f64>,
    final_loss: f64,
}

fn mean_and_scale(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let sd = (v.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Mlp {
    pub(crate) fn fit(x: &FeatureMatrix, y: &[f64], params: &MlpParams, seed: u64) -> Self {
        let p = x.n_features();
        let hidden = params.hidden.max(1);
        let (x_mean, x_scale): (Vec<f64>, Vec<f64>) =
            (0..p).map(|j| mean_and_scale(x.column(j).iter().copied())).unzip();
        let (y_mean, y_scale) = mean_and_scale(y.iter().copied());
        let rows = Self::standardize(x, &x_mean, &x_scale);
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let mut rng = rng_from_seed(seed);
        let mut theta = vec![0.0; n_params(p, hidden)];
        let lim1 = (6.0 / (p + hidden) as f64).sqrt();
        let lim2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut theta[..hidden * p] {
            *w = rng.gen_range(-lim1..lim1);
        }
        for w in &mut theta[hidden * p + hidden..hidden * p + 2 * hidden] {
            *w = rng.gen_range(-lim2..lim2);
        }

        let n = ys.len();
        let batch = if params.batch_size == 0 { n } else { params.batch_size.min(n) };
        let decay_to = hidden * p + hidden..hidden * p + 2 * hidden;
        let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..n).collect();
        let mut bx = Vec::with_capacity(batch * p);
        let mut by = Vec::with_capacity(batch);
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(batch) {
                bx.clear();
                by.clear();
                for &i in idx {
                    bx.extend_from_slice(&rows[i * p..(i + 1) * p]);
                    by.push(ys[i]);
                }
                let (_, mut grad) = loss_and_gradient(&theta, &bx, &by, p, hidden);
                for k in (0..hidden * p).chain(decay_to.clone()) {
                    grad[k] += params.weight_decay * theta[k];
                }
                step += 1;
                let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
                for k in 0..theta.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                    theta[k] -= params.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
        }
        let final_loss = loss_and_gradient(&theta, &rows, &ys, p, hidden).0;
        Self {
            hidden,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
            params: theta,
            final_loss,
        }
    }

    fn standardize(x: &FeatureMatrix, mean: &[f64], scale: &[f64]) -> Vec<f64> {
        let p = x.n_features();
        let mut rows = vec![0.0; x.n_rows() * p];
        for j in 0..p {
            for (i, v) in x.column(j).iter().enumerate() {
                rows[i * p + j] = (v - mean[j]) / scale[j];
            }
        }
        rows
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Training loss on the standardised target after the last epoch.
    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let p = x.n_features();
        let h = self.hidden;
        let rows = Self::standardize(x, &self.x_mean, &self.x_scale);
        let (w1, rest) = self.params.split_at(h * p);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        rows.chunks_exact(p)
            .map(|row| {
                let out = b2[0]
                    + (0..h)
                        .map(|k| {
                            let z = b1[k] + w1[k * p..(k + 1) * p].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                            w2[k] * z.tanh()
                        })
                        .sum::<f64>();
                self.y_mean + self.y_scale * out
            })
            .collect()
    }
}
