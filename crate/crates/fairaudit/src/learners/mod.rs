//! Diagnostic classifiers (logistic regression, MLP, gradient-boosted trees)
//! and the unpenalized statistical logistic regression, all trained by
//! in-repo numerical optimization.

mod gbt;
mod logreg;
mod mlp;
mod statlog;

pub use gbt::{fit_gbt, shrunken_leaf_weight, GbtModel, GbtParams};
pub use logreg::{fit_logreg, LogRegModel};
pub use mlp::{fit_mlp, gradient_check, MlpModel, MlpParams};
pub use statlog::{fit_stat_logreg, StatModelFit};

use crate::error::{AuditError, Result};

/// Coefficients beyond this magnitude are flagged as quasi-separated.
pub const QUASI_SEPARATION_BETA: f64 = 15.0;

pub trait Classifier {
    fn predict(&self, row: &[f64]) -> usize;

    fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x
            .iter()
            .zip(y)
            .filter(|(row, &label)| self.predict(row) == label)
            .count();
        hits as f64 / x.len() as f64
    }
}

pub(crate) fn check_inputs(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(AuditError::Input(format!(
            "feature matrix ({} rows) and labels ({}) disagree",
            x.len(),
            y.len()
        )));
    }
    let width = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(AuditError::Input(format!("ragged row {i}")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::Input(format!("non-finite feature in row {i}")));
        }
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(AuditError::Input(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

/// Canonical training order: sort row indices by (label, feature bytes).
/// Fitting over this order makes every reduction independent of the caller's
/// row permutation, which the determinism invariants require exactly.
pub(crate) fn canonical_order(x: &[Vec<f64>], y: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        y[a].cmp(&y[b]).then_with(|| {
            for (va, vb) in x[a].iter().zip(x[b].iter()) {
                match va.total_cmp(vb) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    idx
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}
