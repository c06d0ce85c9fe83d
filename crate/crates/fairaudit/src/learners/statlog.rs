//! Unpenalized multinomial logistic regression fitted by Newton's method
//! with step halving. Standard errors come from the inverse observed
//! information; Wald z-tests give per-coefficient p-values.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{canonical_order, check_inputs, softmax_in_place, QUASI_SEPARATION_BETA};
use crate::error::{AuditError, Result};

const MAX_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone)]
pub struct StatModelFit {
    /// `beta[c][j]`: coefficient of feature j for non-reference class c
    /// (class index c + 1); `beta[c][d]` is the intercept. The reference
    /// class (index 0) is pinned at zero.
    pub beta: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub p_values: Vec<Vec<f64>>,
    pub n_classes: usize,
    pub n_features: usize,
    pub converged: bool,
    /// True when any coefficient exceeds the quasi-separation bound; Wald
    /// statistics are unreliable for flagged fits.
    pub quasi_separated: bool,
    pub log_likelihood: f64,
}

impl StatModelFit {
    pub fn class_probabilities(&self, row: &[f64]) -> Vec<f64> {
        let d = self.n_features;
        let mut z = vec![0.0; self.n_classes];
        for (c, b) in self.beta.iter().enumerate() {
            let mut v = b[d];
            for (bj, xj) in b.iter().zip(row.iter()) {
                v += bj * xj;
            }
            z[c + 1] = v;
        }
        softmax_in_place(&mut z);
        z
    }
}

fn log_likelihood(x: &[&[f64]], y: &[usize], beta: &DVector<f64>, n_classes: usize, p: usize) -> f64 {
    let d = p - 1;
    let mut ll = 0.0;
    let mut z = vec![0.0; n_classes];
    for (row, &label) in x.iter().zip(y.iter()) {
        z[0] = 0.0;
        for c in 1..n_classes {
            let base = (c - 1) * p;
            let mut v = beta[base + d];
            for (j, &xj) in row.iter().enumerate() {
                v += beta[base + j] * xj;
            }
            z[c] = v;
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ll += z[label] - lse;
    }
    ll
}

/// Fit with class 0 as the reference. Rows are reordered canonically inside,
/// so the result is invariant to the caller's row permutation.
pub fn fit_stat_logreg(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<StatModelFit> {
    check_inputs(x, y, n_classes)?;
    if n_classes < 2 {
        return Err(AuditError::Input("need at least two classes".into()));
    }
    let order = canonical_order(x, y);
    let rows: Vec<&[f64]> = order.iter().map(|&i| x[i].as_slice()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let d = rows[0].len();
    let p = d + 1;
    let n_free = (n_classes - 1) * p;

    let mut beta = DVector::<f64>::zeros(n_free);
    let mut ll = log_likelihood(&rows, &labels, &beta, n_classes, p);
    let mut converged = false;
    let mut info = DMatrix::<f64>::zeros(n_free, n_free);

    for _ in 0..MAX_ITERS {
        let mut grad = DVector::<f64>::zeros(n_free);
        info.fill(0.0);
        let mut probs = vec![0.0; n_classes];
        let mut xrow = vec![0.0; p];
        for (row, &label) in rows.iter().zip(labels.iter()) {
            probs[0] = 0.0;
            for c in 1..n_classes {
                let base = (c - 1) * p;
                let mut v = beta[base + d];
                for (j, &xj) in row.iter().enumerate() {
                    v += beta[base + j] * xj;
                }
                probs[c] = v;
            }
            softmax_in_place(&mut probs);
            xrow[..d].copy_from_slice(row);
            xrow[d] = 1.0;
            for c in 1..n_classes {
                let rc = probs[c] - if label == c { 1.0 } else { 0.0 };
                let base_c = (c - 1) * p;
                for (j, &xj) in xrow.iter().enumerate() {
                    grad[base_c + j] += rc * xj;
                }
                for c2 in c..n_classes {
                    let w = if c == c2 {
                        probs[c] * (1.0 - probs[c])
                    } else {
                        -probs[c] * probs[c2]
                    };
                    if w == 0.0 {
                        continue;
                    }
                    let base_c2 = (c2 - 1) * p;
                    for (j, &xj) in xrow.iter().enumerate() {
                        let wx = w * xj;
                        for (k, &xk) in xrow.iter().enumerate() {
                            info[(base_c + j, base_c2 + k)] += wx * xk;
                        }
                    }
                }
            }
        }
        // Mirror the upper block triangle.
        for c in 1..n_classes {
            for c2 in (c + 1)..n_classes {
                let (bc, bc2) = ((c - 1) * p, (c2 - 1) * p);
                for j in 0..p {
                    for k in 0..p {
                        info[(bc2 + k, bc + j)] = info[(bc + j, bc2 + k)];
                    }
                }
            }
        }
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let ridge_attempt = |mu: f64| -> Option<DVector<f64>> {
            let mut m = info.clone();
            for i in 0..n_free {
                m[(i, i)] += mu;
            }
            Cholesky::new(m).map(|c| c.solve(&grad))
        };
        let step = ridge_attempt(0.0)
            .or_else(|| ridge_attempt(1e-8))
            .or_else(|| ridge_attempt(1e-4))
            .ok_or_else(|| AuditError::Optimization("information matrix is singular".into()))?;
        // Step halving: accept the first scale that does not decrease the
        // log-likelihood (full Newton steps can overshoot early on).
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &beta - scale * &step;
            let trial_ll = log_likelihood(&rows, &labels, &trial, n_classes, p);
            if trial_ll >= ll - 1e-12 {
                beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // Covariance = inverse observed information at the optimum; fall back to
    // the SVD pseudo-inverse when the information matrix is singular.
    let cov = Cholesky::new(info.clone())
        .map(|c| c.inverse())
        .unwrap_or_else(|| SVD::new(info.clone(), true, true).pseudo_inverse(1e-12).unwrap());

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out_beta = Vec::with_capacity(n_classes - 1);
    let mut out_se = Vec::with_capacity(n_classes - 1);
    let mut out_p = Vec::with_capacity(n_classes - 1);
    let mut quasi = false;
    for c in 0..n_classes - 1 {
        let base = c * p;
        let mut bs = Vec::with_capacity(p);
        let mut ses = Vec::with_capacity(p);
        let mut ps = Vec::with_capacity(p);
        for j in 0..p {
            let b = beta[base + j];
            if b.abs() > QUASI_SEPARATION_BETA {
                quasi = true;
            }
            let var = cov[(base + j, base + j)].max(0.0);
            let se = var.sqrt();
            let pval = if se > 0.0 && se.is_finite() {
                2.0 * (1.0 - normal.cdf((b / se).abs()))
            } else {
                1.0
            };
            bs.push(b);
            ses.push(se);
            ps.push(pval);
        }
        out_beta.push(bs);
        out_se.push(ses);
        out_p.push(ps);
    }

    Ok(StatModelFit {
        beta: out_beta,
        std_err: out_se,
        p_values: out_p,
        n_classes,
        n_features: d,
        converged,
        quasi_separated: quasi,
        log_likelihood: ll,
    })
}
