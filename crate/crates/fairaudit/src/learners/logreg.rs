//! One-vs-rest L2-penalized logistic regression fitted by Newton's method.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{canonical_order, check_inputs, Classifier};
use crate::error::{AuditError, Result};

const MAX_NEWTON_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LogRegModel {
    /// One weight vector per class, laid out [w_0..w_{d-1}, intercept].
    pub weights: Vec<Vec<f64>>,
    pub n_classes: usize,
}

impl LogRegModel {
    pub fn decision(&self, row: &[f64], class: usize) -> f64 {
        let w = &self.weights[class];
        let mut z = w[row.len()];
        for (wi, xi) in w.iter().zip(row.iter()) {
            z += wi * xi;
        }
        z
    }
}

impl Classifier for LogRegModel {
    fn predict(&self, row: &[f64]) -> usize {
        if self.n_classes == 2 {
            return if self.decision(row, 1) > 0.0 { 1 } else { 0 };
        }
        (0..self.n_classes)
            .max_by(|&a, &b| self.decision(row, a).total_cmp(&self.decision(row, b)))
            .unwrap_or(0)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit one binary (class-vs-rest) problem, returning [w, b].
fn fit_binary(x: &[&[f64]], targets: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let p = d + 1;
    let mut w = DVector::<f64>::zeros(p);

    for _ in 0..MAX_NEWTON_ITERS {
        // Gradient of mean log-loss + (lambda/2)||w||^2, intercept included
        // in the penalty as documented.
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (row, &t) in x.iter().zip(targets.iter()) {
            let mut z = w[d];
            for (j, &xj) in row.iter().enumerate() {
                z += w[j] * xj;
            }
            let mu = sigmoid(z);
            let r = mu - t;
            let s = mu * (1.0 - mu);
            for (j, &xj) in row.iter().enumerate() {
                grad[j] += r * xj;
                for (k, &xk) in row.iter().enumerate().skip(j) {
                    hess[(j, k)] += s * xj * xk;
                }
                hess[(j, p - 1)] += s * xj;
            }
            grad[p - 1] += r;
            hess[(p - 1, p - 1)] += s;
        }
        let n_f = n as f64;
        for j in 0..p {
            grad[j] = grad[j] / n_f + lambda * w[j];
            for k in j..p {
                let mut h = hess[(j, k)] / n_f;
                if j == k {
                    h += lambda;
                }
                hess[(j, k)] = h;
                hess[(k, j)] = h;
            }
        }
        if grad.norm() < GRAD_TOL {
            break;
        }
        let step = Cholesky::new(hess)
            .map(|c| c.solve(&grad))
            .ok_or_else(|| {
                AuditError::Optimization("logistic regression Hessian not positive definite".into())
            })?;
        w -= step;
    }
    Ok(w.iter().copied().collect())
}

/// `c` is the inverse regularization strength; the penalty is `1/c * ||w||^2 / 2`.
pub fn fit_logreg(x: &[Vec<f64>], y: &[usize], n_classes: usize, c: f64) -> Result<LogRegModel> {
    check_inputs(x, y, n_classes)?;
    if n_classes < 2 {
        return Err(AuditError::Input("need at least two classes".into()));
    }
    if c <= 0.0 {
        return Err(AuditError::Input("regularization C must be positive".into()));
    }
    let order = canonical_order(x, y);
    let rows: Vec<&[f64]> = order.iter().map(|&i| x[i].as_slice()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let lambda = 1.0 / c;

    let mut weights = Vec::with_capacity(n_classes);
    if n_classes == 2 {
        let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let w1 = fit_binary(&rows, &targets, lambda)?;
        weights.push(w1.iter().map(|v| -v).collect());
        weights.push(w1);
    } else {
        for class in 0..n_classes {
            let targets: Vec<f64> = labels
                .iter()
                .map(|&l| if l == class { 1.0 } else { 0.0 })
                .collect();
            weights.push(fit_binary(&rows, &targets, lambda)?);
        }
    }
    Ok(LogRegModel { weights, n_classes })
}
