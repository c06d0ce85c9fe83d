//! Audit statistics: leakage detection by run-as-fold cross-validated
//! classifiers with one-sample t-tests against chance, Bonferroni control,
//! and coefficient-level salience from an unpenalized multinomial model.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Axis, Corpus};
use crate::error::{AuditError, Result};
use crate::features::{self, TfidfModel};
use crate::learners::{
    fit_gbt, fit_logreg, fit_mlp, fit_stat_logreg, Classifier, GbtParams, MlpParams,
};
use crate::persona::{PatronType, Race, Sex};

/// Number of simultaneous leakage tests controlled by default: three axes,
/// three classifier families, two audited generation settings.
pub const DEFAULT_TEST_FAMILY_SIZE: usize = 18;

pub const MIN_FOLDS: usize = 2;

/// Salience requires the coefficient to at least double the odds.
pub const EFFECT_SIZE_FLOOR: f64 = std::f64::consts::LN_2;
pub const SALIENCE_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogisticRegression,
    Mlp,
    GradientBoosting,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [
        ClassifierKind::LogisticRegression,
        ClassifierKind::Mlp,
        ClassifierKind::GradientBoosting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "logreg",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::GradientBoosting => "gbt",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TTestOutcome {
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: usize,
    /// Set when every fold produced the same accuracy, which makes the
    /// t statistic degenerate (p is 0 or 1 by direct comparison).
    pub degenerate: bool,
}

/// Two-sided one-sample t-test of `samples` against `mu0`. With zero sample
/// variance the statistic is undefined; we report p = 1 when the common value
/// equals `mu0` and p = 0 otherwise, flagged as degenerate.
pub fn one_sample_t(samples: &[f64], mu0: f64) -> Result<TTestOutcome> {
    if samples.len() < 2 {
        return Err(AuditError::Input(
            "t-test needs at least two samples".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = samples.len() - 1;
    let all_equal = samples.windows(2).all(|w| w[0] == w[1]);
    if var == 0.0 || all_equal {
        let same = (samples[0] - mu0).abs() < 1e-12;
        return Ok(TTestOutcome {
            t_statistic: if same { 0.0 } else { f64::INFINITY },
            p_value: if same { 1.0 } else { 0.0 },
            df,
            degenerate: true,
        });
    }
    let se = (var / n).sqrt();
    let t = (mean - mu0) / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestOutcome {
        t_statistic: t,
        p_value: p,
        df,
        degenerate: false,
    })
}

/// Per-comparison threshold `alpha / m`.
pub fn bonferroni(alpha: f64, m: usize) -> f64 {
    alpha / m as f64
}

/// Mean with a t-based confidence interval (df = n - 1).
pub fn mean_confidence_interval(samples: &[f64], level: f64) -> (f64, (f64, f64)) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, (mean, mean));
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        return (mean, (mean, mean));
    }
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution");
    let t = dist.inverse_cdf(0.5 + level / 2.0);
    (mean, (mean - t * se, mean + t * se))
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditVerdict {
    pub axis: Axis,
    pub classifier: ClassifierKind,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub accuracy_ci: (f64, f64),
    pub chance_level: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: usize,
    pub alpha_per_test: f64,
    pub leakage_detected: bool,
    pub degenerate: bool,
    pub skipped_folds: usize,
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub alpha: f64,
    pub test_family_size: usize,
    pub vocab_k: Option<usize>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            test_family_size: DEFAULT_TEST_FAMILY_SIZE,
            vocab_k: None,
            seed: 0,
        }
    }
}

pub fn chance_level(axis: Axis) -> f64 {
    1.0 / axis.labels().len() as f64
}

pub(crate) fn class_index(axis: Axis, record_label: &str) -> usize {
    axis.labels()
        .iter()
        .position(|l| *l == record_label)
        .expect("label drawn from axis")
}

struct Fold {
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Run-as-fold partition: each distinct generation seed is one test fold.
fn run_folds(corpus: &Corpus) -> Result<Vec<Fold>> {
    let seeds: Vec<u64> = corpus.per_seed_counts.keys().copied().collect();
    if seeds.len() < MIN_FOLDS {
        return Err(AuditError::Input(format!(
            "cross-validation needs at least {MIN_FOLDS} generation runs, got {}",
            seeds.len()
        )));
    }
    Ok(seeds
        .iter()
        .map(|&seed| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..corpus.records.len()).partition(|&i| corpus.records[i].run_seed == seed);
            Fold { train, test }
        })
        .collect())
}

fn fit_kind(
    kind: ClassifierKind,
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Box<dyn Classifier>> {
    Ok(match kind {
        // The penalty applies to the mean log-loss, so scale C by n to keep
        // the per-sample regularization constant across fold sizes.
        ClassifierKind::LogisticRegression => {
            Box::new(fit_logreg(x, y, n_classes, x.len() as f64)?)
        }
        ClassifierKind::Mlp => {
            let params = MlpParams {
                max_epochs: 60,
                seed,
                ..MlpParams::default()
            };
            Box::new(fit_mlp(x, y, n_classes, &params)?)
        }
        ClassifierKind::GradientBoosting => {
            // Shallow trees: sparse high-dimensional text features overfit
            // quickly at the default depth.
            // Full-sample fits keep fold-to-fold variance down, which the
            // small-df t-test depends on.
            let params = GbtParams {
                max_depth: 2,
                n_rounds: 60,
                learning_rate: 0.3,
                subsample: 1.0,
                colsample: 1.0,
                lambda: 5.0,
                seed,
                ..GbtParams::default()
            };
            Box::new(fit_gbt(x, y, n_classes, &params)?)
        }
    })
}

/// Cross-validated leakage audit for one demographic axis. Features are
/// refit inside every fold (vocabulary, document frequencies, and the k
/// selection all come from the training split only). Folds whose training
/// split is missing a class are skipped, reducing the t-test df.
pub fn cross_validate(corpus: &Corpus, axis: Axis, config: &CvConfig) -> Result<Vec<AuditVerdict>> {
    let folds = run_folds(corpus)?;
    let docs = features::masked_docs(&corpus.records);
    let labels: Vec<usize> = corpus
        .records
        .iter()
        .map(|r| class_index(axis, axis.label_of(r)))
        .collect();
    let n_classes = axis.labels().len();
    let chance = chance_level(axis);

    let mut fold_accuracies: Vec<Vec<f64>> = vec![Vec::new(); ClassifierKind::ALL.len()];
    let mut skipped = 0usize;
    for (fold_no, fold) in folds.iter().enumerate() {
        let mut present = vec![false; n_classes];
        for &i in &fold.train {
            present[labels[i]] = true;
        }
        if present.iter().any(|p| !p) || fold.test.is_empty() {
            skipped += 1;
            continue;
        }
        let train_docs: Vec<String> = fold.train.iter().map(|&i| docs[i].clone()).collect();
        let test_docs: Vec<String> = fold.test.iter().map(|&i| docs[i].clone()).collect();
        let train_words: f64 = fold
            .train
            .iter()
            .map(|&i| corpus.records[i].word_count as f64)
            .sum::<f64>()
            / fold.train.len() as f64;
        let k = features::select_k(train_words, config.vocab_k);
        let tfidf: TfidfModel = features::fit_tfidf(&train_docs, k);
        let x_train = tfidf.apply(&train_docs);
        let x_test = tfidf.apply(&test_docs);
        let y_train: Vec<usize> = fold.train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<usize> = fold.test.iter().map(|&i| labels[i]).collect();

        for (slot, kind) in ClassifierKind::ALL.iter().enumerate() {
            let model = fit_kind(
                *kind,
                &x_train,
                &y_train,
                n_classes,
                config.seed ^ fold_no as u64,
            )?;
            fold_accuracies[slot].push(model.accuracy(&x_test, &y_test));
        }
    }

    let alpha_per_test = bonferroni(config.alpha, config.test_family_size);
    let mut verdicts = Vec::new();
    for (slot, kind) in ClassifierKind::ALL.iter().enumerate() {
        let accs = &fold_accuracies[slot];
        if accs.len() < MIN_FOLDS {
            return Err(AuditError::Input(format!(
                "axis {}: only {} usable folds after skipping",
                axis.name(),
                accs.len()
            )));
        }
        let test = one_sample_t(accs, chance)?;
        let (mean_accuracy, accuracy_ci) = mean_confidence_interval(accs, 0.95);
        verdicts.push(AuditVerdict {
            axis,
            classifier: *kind,
            fold_accuracies: accs.clone(),
            mean_accuracy,
            accuracy_ci,
            chance_level: chance,
            t_statistic: test.t_statistic,
            p_value: test.p_value,
            df: test.df,
            alpha_per_test,
            leakage_detected: test.p_value < alpha_per_test && mean_accuracy > chance,
            degenerate: test.degenerate,
            skipped_folds: skipped,
        });
    }
    Ok(verdicts)
}

pub fn audit_all_axes(corpus: &Corpus, config: &CvConfig) -> Result<Vec<AuditVerdict>> {
    let mut out = Vec::new();
    for axis in Axis::ALL {
        out.extend(cross_validate(corpus, axis, config)?);
    }
    Ok(out)
}

pub fn verdicts_csv(verdicts: &[AuditVerdict]) -> String {
    let mut out = String::from(
        "axis,classifier,mean_accuracy,ci_low,ci_high,chance,t,p,df,alpha_per_test,leakage,degenerate,skipped_folds\n",
    );
    for v in verdicts {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.6e},{},{:.6e},{},{},{}\n",
            v.axis.name(),
            v.classifier.name(),
            v.mean_accuracy,
            v.accuracy_ci.0,
            v.accuracy_ci.1,
            v.chance_level,
            v.t_statistic,
            v.p_value,
            v.df,
            v.alpha_per_test,
            v.leakage_detected,
            v.degenerate,
            v.skipped_folds
        ));
    }
    out
}

/// Reference class pinned at zero in the salience model, per axis.
pub fn reference_label(axis: Axis) -> &'static str {
    match axis {
        Axis::Sex => Sex::Female.label(),
        Axis::Race => Race::White.label(),
        Axis::PatronType => PatronType::Undergraduate.label(),
    }
}

/// Class labels with the reference first; remaining labels keep axis order.
pub fn salience_classes(axis: Axis) -> Vec<&'static str> {
    let reference = reference_label(axis);
    let mut out = vec![reference];
    out.extend(axis.labels().into_iter().filter(|l| *l != reference));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SalientTerm {
    pub term: String,
    pub class_label: String,
    pub beta: f64,
    pub std_err: f64,
    pub p_value: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SalienceReport {
    pub axis: Axis,
    pub reference: String,
    /// All (term, non-reference class) coefficients, passing entries first,
    /// each group sorted by descending |beta|.
    pub terms: Vec<SalientTerm>,
    pub comparisons: usize,
    pub alpha_per_test: f64,
    pub quasi_separated: bool,
    pub converged: bool,
    pub vocabulary: Vec<String>,
}

/// Phase-two salience: fit the unpenalized multinomial model on full-corpus
/// TF-IDF features and keep coefficients passing both the Bonferroni-adjusted
/// Wald test (m = k * (C - 1) comparisons) and the effect-size floor.
pub fn detect_salient(
    corpus: &Corpus,
    axis: Axis,
    vocab_k: Option<usize>,
) -> Result<SalienceReport> {
    let matrix = features::featurize(corpus, vocab_k);
    let classes = salience_classes(axis);
    let labels: Vec<usize> = corpus
        .records
        .iter()
        .map(|r| {
            let label = axis.label_of(r);
            classes.iter().position(|c| *c == label).expect("class")
        })
        .collect();
    let fit = fit_stat_logreg(&matrix.rows, &labels, classes.len())?;
    let comparisons = matrix.vocabulary.len() * (classes.len() - 1);
    let alpha_per_test = bonferroni(SALIENCE_ALPHA, comparisons.max(1));

    let mut terms = Vec::new();
    for (c, class_label) in classes.iter().enumerate().skip(1) {
        for (j, term) in matrix.vocabulary.iter().enumerate() {
            let beta = fit.beta[c - 1][j];
            let p_value = fit.p_values[c - 1][j];
            let passes = p_value < alpha_per_test && beta.abs() >= EFFECT_SIZE_FLOOR;
            terms.push(SalientTerm {
                term: term.clone(),
                class_label: class_label.to_string(),
                beta,
                std_err: fit.std_err[c - 1][j],
                p_value,
                passes,
            });
        }
    }
    terms.sort_by(|a, b| {
        b.passes
            .cmp(&a.passes)
            .then(b.beta.abs().total_cmp(&a.beta.abs()))
            .then(a.term.cmp(&b.term))
            .then(a.class_label.cmp(&b.class_label))
    });
    Ok(SalienceReport {
        axis,
        reference: reference_label(axis).to_string(),
        terms,
        comparisons,
        alpha_per_test,
        quasi_separated: fit.quasi_separated,
        converged: fit.converged,
        vocabulary: matrix.vocabulary,
    })
}

pub fn salience_csv(report: &SalienceReport) -> String {
    let mut out = String::from("axis,reference,term,class,beta,std_err,p_value,passes\n");
    for t in &report.terms {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6e},{}\n",
            report.axis.name(),
            report.reference,
            t.term,
            t.class_label,
            t.beta,
            t.std_err,
            t.p_value,
            t.passes
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_statistic_matches_hand_computation() {
        // Mean 0.55, sd 0.00707..., against 0.50: t = 15.81 with df 4.
        let samples = [0.55, 0.54, 0.56, 0.55, 0.55];
        let out = one_sample_t(&samples, 0.50).unwrap();
        assert_eq!(out.df, 4);
        assert!((out.t_statistic - 15.81).abs() < 0.01, "t={}", out.t_statistic);
        assert!(out.p_value < 1e-3);
        assert!(!out.degenerate);
    }

    #[test]
    fn t_test_is_symmetric() {
        let samples = [0.45, 0.46, 0.44, 0.45, 0.45];
        let above = one_sample_t(&[0.55, 0.54, 0.56, 0.55, 0.55], 0.50).unwrap();
        let below = one_sample_t(&samples, 0.50).unwrap();
        assert!((above.t_statistic + below.t_statistic).abs() < 1e-9);
        assert!((above.p_value - below.p_value).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_cases() {
        let at_chance = one_sample_t(&[0.5, 0.5, 0.5], 0.5).unwrap();
        assert!(at_chance.degenerate);
        assert_eq!(at_chance.p_value, 1.0);
        let off_chance = one_sample_t(&[0.7, 0.7, 0.7], 0.5).unwrap();
        assert!(off_chance.degenerate);
        assert_eq!(off_chance.p_value, 0.0);
    }

    #[test]
    fn bonferroni_default_family() {
        let threshold = bonferroni(0.05, DEFAULT_TEST_FAMILY_SIZE);
        assert!((threshold - 0.002778).abs() < 1e-6);
    }

    #[test]
    fn confidence_interval_matches_hand_computation() {
        // {8, 10, 12}: mean 10, se = 2/sqrt(3), t(0.975, df 2) = 4.3027.
        let (mean, (lo, hi)) = mean_confidence_interval(&[8.0, 10.0, 12.0], 0.95);
        assert_eq!(mean, 10.0);
        assert!((hi - 10.0 - 4.97).abs() < 0.01, "hi={hi}");
        assert!((10.0 - lo - 4.97).abs() < 0.01);
    }

    #[test]
    fn chance_levels_per_axis() {
        assert_eq!(chance_level(Axis::Sex), 0.5);
        assert!((chance_level(Axis::Race) - 1.0 / 6.0).abs() < 1e-12);
        assert!((chance_level(Axis::PatronType) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn salience_class_ordering_puts_reference_first() {
        assert_eq!(salience_classes(Axis::Sex), vec!["female", "male"]);
        let patron = salience_classes(Axis::PatronType);
        assert_eq!(patron[0], "Undergraduate");
        assert_eq!(patron.len(), 6);
        let race = salience_classes(Axis::Race);
        assert_eq!(race[0], "White");
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(one_sample_t(&[0.5], 0.5).is_err());
    }
}
