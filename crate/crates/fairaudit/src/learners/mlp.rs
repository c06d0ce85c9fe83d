//! Two-hidden-layer ReLU network with softmax output, trained with Adam,
//! minibatches, and early stopping on a held-out tail of the shuffled rows.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{canonical_order, check_inputs, softmax_in_place, Classifier};
use crate::error::{AuditError, Result};

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub hidden: (usize, usize),
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: (128, 64),
            alpha: 1e-4,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// Dense layer weights stored row-major: `w[out * n_in + in]`.
#[derive(Debug, Clone)]
struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Layer {
    fn glorot(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            w,
            b: vec![0.0; n_out],
            n_in,
            n_out,
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut z = self.b[o];
            for (wi, xi) in row.iter().zip(x.iter()) {
                z += wi * xi;
            }
            out.push(z);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Layer>,
    pub n_classes: usize,
}

impl MlpModel {
    pub fn probabilities(&self, row: &[f64]) -> Vec<f64> {
        let mut cur = row.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        softmax_in_place(&mut cur);
        cur
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for layer in &mut self.layers {
            let w_len = layer.w.len();
            layer.w.copy_from_slice(&flat[pos..pos + w_len]);
            pos += w_len;
            let b_len = layer.b.len();
            layer.b.copy_from_slice(&flat[pos..pos + b_len]);
            pos += b_len;
        }
    }
}

impl Classifier for MlpModel {
    fn predict(&self, row: &[f64]) -> usize {
        let p = self.probabilities(row);
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

struct BatchGrads {
    // One (dw, db) pair per layer, same shapes as the layer parameters.
    dw: Vec<Vec<f64>>,
    db: Vec<Vec<f64>>,
}

/// Forward + backward over a batch; returns the mean data loss (no penalty)
/// and accumulates mean gradients of (data loss + alpha/2 * ||W||^2).
fn batch_gradients(
    model: &MlpModel,
    x: &[&[f64]],
    y: &[usize],
    alpha: f64,
    grads: &mut BatchGrads,
) -> f64 {
    let n_layers = model.layers.len();
    for g in grads.dw.iter_mut().chain(grads.db.iter_mut()) {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut loss = 0.0;
    let mut activations: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
    let mut deltas: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.n_out]).collect();
    for (row, &label) in x.iter().zip(y.iter()) {
        activations[0] = row.to_vec();
        for (i, layer) in model.layers.iter().enumerate() {
            let (head, tail) = activations.split_at_mut(i + 1);
            layer.forward(&head[i], &mut tail[0]);
            if i < n_layers - 1 {
                for v in tail[0].iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        let mut probs = activations[n_layers].clone();
        softmax_in_place(&mut probs);
        loss -= (probs[label].max(1e-300)).ln();

        // Output delta: p - onehot.
        for (k, d) in deltas[n_layers - 1].iter_mut().enumerate() {
            *d = probs[k] - if k == label { 1.0 } else { 0.0 };
        }
        for i in (0..n_layers).rev() {
            let layer = &model.layers[i];
            let input = &activations[i];
            for o in 0..layer.n_out {
                let d = deltas[i][o];
                if d == 0.0 {
                    continue;
                }
                let dw_row = &mut grads.dw[i][o * layer.n_in..(o + 1) * layer.n_in];
                for (g, xi) in dw_row.iter_mut().zip(input.iter()) {
                    *g += d * xi;
                }
                grads.db[i][o] += d;
            }
            if i > 0 {
                let (prev_deltas, cur_deltas) = deltas.split_at_mut(i);
                let prev = &mut prev_deltas[i - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layer.n_out {
                    let d = cur_deltas[0][o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    for (p, wi) in prev.iter_mut().zip(row.iter()) {
                        *p += d * wi;
                    }
                }
                // ReLU gate on the pre-activation of the previous layer.
                for (p, a) in prev.iter_mut().zip(activations[i].iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
    }
    let n = x.len() as f64;
    for (i, layer) in model.layers.iter().enumerate() {
        for (g, w) in grads.dw[i].iter_mut().zip(layer.w.iter()) {
            *g = *g / n + alpha * w;
        }
        for g in grads.db[i].iter_mut() {
            *g /= n;
        }
    }
    loss / n
}

fn penalized_loss(model: &MlpModel, x: &[&[f64]], y: &[usize], alpha: f64) -> f64 {
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y.iter()) {
        let p = model.probabilities(row);
        loss -= p[label].max(1e-300).ln();
    }
    loss /= x.len() as f64;
    let sq: f64 = model
        .layers
        .iter()
        .flat_map(|l| l.w.iter())
        .map(|w| w * w)
        .sum();
    loss + 0.5 * alpha * sq
}

pub fn fit_mlp(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: &MlpParams) -> Result<MlpModel> {
    check_inputs(x, y, n_classes)?;
    if n_classes < 2 {
        return Err(AuditError::Input("need at least two classes".into()));
    }
    let d = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = MlpModel {
        layers: vec![
            Layer::glorot(d, params.hidden.0, &mut rng),
            Layer::glorot(params.hidden.0, params.hidden.1, &mut rng),
            Layer::glorot(params.hidden.1, n_classes, &mut rng),
        ],
        n_classes,
    };

    // Canonical order first so the validation split is permutation-invariant,
    // then a seeded shuffle so the split is not class-sorted.
    let canon = canonical_order(x, y);
    let mut order: Vec<usize> = canon;
    order.shuffle(&mut rng);
    let n_val = ((x.len() as f64) * 0.1).ceil() as usize;
    let n_val = n_val.clamp(1, x.len().saturating_sub(1).max(1));
    let (train_idx, val_idx) = order.split_at(order.len() - n_val);
    let val_x: Vec<&[f64]> = val_idx.iter().map(|&i| x[i].as_slice()).collect();
    let val_y: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();

    let mut grads = BatchGrads {
        dw: model.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
        db: model.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
    };
    let n_params: usize = model.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut t = 0u32;
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);

    let mut best_loss = f64::INFINITY;
    let mut best_params = model.flat_params();
    let mut stall = 0usize;
    let mut train_order: Vec<usize> = train_idx.to_vec();

    for _epoch in 0..params.max_epochs {
        train_order.shuffle(&mut rng);
        for chunk in train_order.chunks(params.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| x[i].as_slice()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            batch_gradients(&model, &bx, &by, params.alpha, &mut grads);
            t += 1;
            let mut flat = model.flat_params();
            let mut pos = 0;
            for layer_grads in grads.dw.iter().zip(grads.db.iter()) {
                for g in layer_grads.0.iter().chain(layer_grads.1.iter()) {
                    m[pos] = beta1 * m[pos] + (1.0 - beta1) * g;
                    v[pos] = beta2 * v[pos] + (1.0 - beta2) * g * g;
                    let m_hat = m[pos] / (1.0 - beta1.powi(t as i32));
                    let v_hat = v[pos] / (1.0 - beta2.powi(t as i32));
                    flat[pos] -= params.learning_rate * m_hat / (v_hat.sqrt() + eps);
                    pos += 1;
                }
            }
            model.set_flat_params(&flat);
        }
        let val_loss = penalized_loss(&model, &val_x, &val_y, params.alpha);
        if val_loss + 1e-6 < best_loss {
            best_loss = val_loss;
            best_params = model.flat_params();
            stall = 0;
        } else {
            stall += 1;
            if stall >= params.patience {
                break;
            }
        }
    }
    model.set_flat_params(&best_params);
    Ok(model)
}

/// Central finite-difference check of the analytic batch gradient; returns
/// the maximum relative error over all parameters. Used by the test suite to
/// certify the backpropagation implementation.
pub fn gradient_check(x: &[Vec<f64>], y: &[usize], n_classes: usize, alpha: f64, seed: u64) -> f64 {
    let d = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel {
        layers: vec![
            Layer::glorot(d, 5, &mut rng),
            Layer::glorot(5, 4, &mut rng),
            Layer::glorot(4, n_classes, &mut rng),
        ],
        n_classes,
    };
    let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
    let mut grads = BatchGrads {
        dw: model.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
        db: model.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
    };
    batch_gradients(&model, &rows, y, alpha, &mut grads);
    let analytic: Vec<f64> = grads
        .dw
        .iter()
        .zip(grads.db.iter())
        .flat_map(|(dw, db)| dw.iter().chain(db.iter()).copied().collect::<Vec<_>>())
        .collect();

    let flat = model.flat_params();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        model.set_flat_params(&plus);
        let lp = penalized_loss(&model, &rows, y, alpha);
        let mut minus = flat.clone();
        minus[i] -= h;
        model.set_flat_params(&minus);
        let lm = penalized_loss(&model, &rows, y, alpha);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    model.set_flat_params(&flat);
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &(a, b) in &[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for k in 0..10 {
                // Offset keeps every pre-activation away from the ReLU kink,
                // which would otherwise break the finite-difference check.
                let jitter = 0.01 + k as f64 * 0.005;
                x.push(vec![a + jitter, b - jitter]);
                y.push(((a as i32) ^ (b as i32)) as usize);
            }
        }
        (x, y)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (x, y) = xor_data();
        let max_rel = gradient_check(&x, &y, 2, 1e-3, 42);
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor_data();
        let params = MlpParams {
            hidden: (16, 8),
            learning_rate: 0.02,
            max_epochs: 2000,
            patience: 300,
            seed: 1,
            ..MlpParams::default()
        };
        let model = fit_mlp(&x, &y, 2, &params).unwrap();
        assert!(model.accuracy(&x, &y) > 0.9);
    }

    #[test]
    fn deterministic_under_row_permutation() {
        let (x, y) = xor_data();
        let params = MlpParams {
            hidden: (8, 4),
            max_epochs: 20,
            seed: 3,
            ..MlpParams::default()
        };
        let a = fit_mlp(&x, &y, 2, &params).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.reverse();
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        let b = fit_mlp(&xs, &ys, 2, &params).unwrap();
        for (pa, pb) in a.flat_params().iter().zip(b.flat_params().iter()) {
            assert!((pa - pb).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = xor_data();
        let params = MlpParams {
            hidden: (8, 4),
            max_epochs: 5,
            seed: 0,
            ..MlpParams::default()
        };
        let model = fit_mlp(&x, &y, 2, &params).unwrap();
        let p = model.probabilities(&[0.3, 0.7]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}
