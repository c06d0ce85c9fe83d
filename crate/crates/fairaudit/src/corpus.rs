//! Corpus persistence, deduplication, and class-balance diagnostics.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{AuditError, Result};
use crate::gateway::{InteractionRecord, RecordStatus};
use crate::persona::{PatronType, Race, Sex};

/// Imbalance ratios above this are flagged.
pub const IMBALANCE_THRESHOLD: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<InteractionRecord>,
    pub model_id: String,
    pub per_seed_counts: BTreeMap<u64, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Sex,
    Race,
    PatronType,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Sex, Axis::Race, Axis::PatronType];

    pub fn labels(self) -> Vec<&'static str> {
        match self {
            Axis::Sex => Sex::ALL.iter().map(|s| s.label()).collect(),
            Axis::Race => Race::ALL.iter().map(|r| r.label()).collect(),
            Axis::PatronType => PatronType::ALL.iter().map(|p| p.label()).collect(),
        }
    }

    pub fn label_of(self, record: &InteractionRecord) -> &'static str {
        match self {
            Axis::Sex => record.query.patron.sex.label(),
            Axis::Race => record.query.patron.race.label(),
            Axis::PatronType => record.query.patron.patron_type.label(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Sex => "sex",
            Axis::Race => "race",
            Axis::PatronType => "patron_type",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub axis: Axis,
    pub class_proportions: BTreeMap<String, f64>,
    pub imbalance_ratio: f64,
    pub imbalanced: bool,
}

/// Drops failed placeholders, collapses exact-duplicate response texts
/// (trailing whitespace ignored) keeping the earliest record in (seed, index)
/// order, and recomputes per-seed counts.
pub fn finalize(raw: Vec<InteractionRecord>) -> Result<Corpus> {
    let model_id = raw
        .first()
        .map(|r| r.model_id.clone())
        .ok_or_else(|| AuditError::Corpus("no records supplied".to_string()))?;
    if raw.iter().any(|r| r.model_id != model_id) {
        return Err(AuditError::Corpus(
            "records span multiple model ids".to_string(),
        ));
    }

    let mut ordered = raw;
    // Stable sort keeps intra-seed order, so survivors preserve per-seed order.
    ordered.sort_by_key(|r| r.run_seed);

    let mut seen: HashSet<String> = HashSet::new();
    let mut records = Vec::new();
    for record in ordered {
        if record.status != RecordStatus::Ok {
            continue;
        }
        let key = record.response_text.trim_end().to_string();
        if seen.insert(key) {
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(AuditError::Corpus(
            "corpus is empty after filtering failures and duplicates".to_string(),
        ));
    }
    let mut per_seed_counts = BTreeMap::new();
    for record in &records {
        *per_seed_counts.entry(record.run_seed).or_insert(0) += 1;
    }
    Ok(Corpus {
        records,
        model_id,
        per_seed_counts,
    })
}

/// Class proportions and max/min imbalance ratio over one axis. A label with
/// zero count makes the ratio infinite.
pub fn balance(corpus: &Corpus, axis: Axis) -> Result<BalanceReport> {
    if corpus.records.is_empty() {
        return Err(AuditError::Corpus("empty corpus".to_string()));
    }
    let n = corpus.records.len() as f64;
    let mut class_proportions = BTreeMap::new();
    for label in axis.labels() {
        let count = corpus
            .records
            .iter()
            .filter(|r| axis.label_of(r) == label)
            .count();
        class_proportions.insert(label.to_string(), count as f64 / n);
    }
    let max = class_proportions.values().cloned().fold(0.0f64, f64::max);
    let min = class_proportions
        .values()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let imbalance_ratio = if min > 0.0 { max / min } else { f64::INFINITY };
    Ok(BalanceReport {
        axis,
        class_proportions,
        imbalance_ratio,
        imbalanced: imbalance_ratio > IMBALANCE_THRESHOLD,
    })
}

/// Mean response length in words with a t-based 95% CI (df = n - 1).
pub fn length_stats(corpus: &Corpus) -> (f64, (f64, f64)) {
    let n = corpus.records.len();
    let counts: Vec<f64> = corpus.records.iter().map(|r| r.word_count as f64).collect();
    let mean = counts.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, (mean, mean));
    }
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        return (mean, (mean, mean));
    }
    let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
        .unwrap()
        .inverse_cdf(0.975);
    (mean, (mean - t * se, mean + t * se))
}

pub fn mean_word_count(corpus: &Corpus) -> f64 {
    length_stats(corpus).0
}

pub fn write_jsonl<P: AsRef<Path>>(records: &[InteractionRecord], path: P) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<InteractionRecord>> {
    let content = std::fs::read_to_string(path)?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(AuditError::from))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub model_id: String,
    pub config_hash: String,
    pub record_count: usize,
    pub per_seed_counts: BTreeMap<u64, usize>,
}

pub fn write_manifest<P: AsRef<Path>>(
    corpus: &Corpus,
    config_hash: &str,
    path: P,
) -> Result<()> {
    let manifest = CorpusManifest {
        model_id: corpus.model_id.clone(),
        config_hash: config_hash.to_string(),
        record_count: corpus.records.len(),
        per_seed_counts: corpus.per_seed_counts.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Balance reports as CSV: axis, label, proportion, ratio.
pub fn balance_csv(reports: &[BalanceReport]) -> String {
    let mut out = String::from("axis,label,proportion,imbalance_ratio,imbalanced\n");
    for report in reports {
        for (label, proportion) in &report.class_proportions {
            out.push_str(&format!(
                "{},{},{:.6},{:.4},{}\n",
                report.axis.name(),
                label,
                proportion,
                report.imbalance_ratio,
                report.imbalanced
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::SyntheticPatron;
    use crate::query::{bundled_roster, fill_template, ReferenceQuery, TemplateId};

    fn record(text: &str, seed: u64, sex: Sex, ptype: PatronType) -> InteractionRecord {
        let patron = SyntheticPatron {
            first_name: "Pat".to_string(),
            surname: "Smith".to_string(),
            sex,
            race: Race::White,
            patron_type: ptype,
        };
        let query: ReferenceQuery =
            fill_template(TemplateId::Subject, &bundled_roster()[0], &patron).unwrap();
        InteractionRecord {
            query,
            model_id: "m".to_string(),
            run_seed: seed,
            response_text: text.to_string(),
            status: if text.is_empty() {
                RecordStatus::FailedPlaceholder
            } else {
                RecordStatus::Ok
            },
            word_count: text.split_whitespace().count(),
            error: None,
        }
    }

    #[test]
    fn duplicates_collapse_to_earliest() {
        let raw = vec![
            record("same text", 1, Sex::Female, PatronType::Staff),
            record("same text  ", 1, Sex::Male, PatronType::Staff),
            record("same text", 2, Sex::Male, PatronType::Staff),
        ];
        let corpus = finalize(raw).unwrap();
        assert_eq!(corpus.records.len(), 1);
        assert_eq!(corpus.records[0].run_seed, 1);
        assert_eq!(corpus.records[0].query.patron.sex, Sex::Female);
    }

    #[test]
    fn placeholders_are_dropped() {
        let raw = vec![
            record("a response", 1, Sex::Female, PatronType::Staff),
            record("", 1, Sex::Male, PatronType::Staff),
        ];
        let corpus = finalize(raw).unwrap();
        assert_eq!(corpus.records.len(), 1);
    }

    #[test]
    fn empty_after_filtering_is_fatal() {
        let raw = vec![record("", 1, Sex::Female, PatronType::Staff)];
        assert!(matches!(finalize(raw), Err(AuditError::Corpus(_))));
    }

    #[test]
    fn finalize_is_idempotent() {
        let raw = vec![
            record("one", 1, Sex::Female, PatronType::Staff),
            record("two", 1, Sex::Male, PatronType::Faculty),
            record("one", 2, Sex::Male, PatronType::Staff),
        ];
        let once = finalize(raw).unwrap();
        let twice = finalize(once.records.clone()).unwrap();
        assert_eq!(once.records.len(), twice.records.len());
        assert_eq!(once.per_seed_counts, twice.per_seed_counts);
    }

    #[test]
    fn balance_ratio_basics() {
        let mut raw = Vec::new();
        for i in 0..300 {
            raw.push(record(&format!("f {i}"), 1, Sex::Female, PatronType::Staff));
        }
        for i in 0..250 {
            raw.push(record(&format!("m {i}"), 1, Sex::Male, PatronType::Staff));
        }
        let corpus = finalize(raw).unwrap();
        let report = balance(&corpus, Axis::Sex).unwrap();
        assert!((report.imbalance_ratio - 1.2).abs() < 1e-9);
        assert!(!report.imbalanced);
    }

    #[test]
    fn perfectly_balanced_ratio_is_one() {
        let mut raw = Vec::new();
        for i in 0..50 {
            raw.push(record(&format!("f {i}"), 1, Sex::Female, PatronType::Staff));
            raw.push(record(&format!("m {i}"), 1, Sex::Male, PatronType::Staff));
        }
        let corpus = finalize(raw).unwrap();
        let report = balance(&corpus, Axis::Sex).unwrap();
        assert_eq!(report.imbalance_ratio, 1.0);
    }

    #[test]
    fn zero_count_class_reports_infinite_ratio() {
        let raw = vec![record("only female", 1, Sex::Female, PatronType::Staff)];
        let corpus = finalize(raw).unwrap();
        let report = balance(&corpus, Axis::Sex).unwrap();
        assert!(report.imbalance_ratio.is_infinite());
        assert!(report.imbalanced);
    }

    #[test]
    fn length_ci_matches_hand_computation() {
        let raw = vec![
            record("1 2 3 4 5 6 7 8", 1, Sex::Female, PatronType::Staff),
            record("1 2 3 4 5 6 7 8 9 10", 1, Sex::Male, PatronType::Staff),
            record("1 2 3 4 5 6 7 8 9 10 11 12", 1, Sex::Female, PatronType::Faculty),
        ];
        let corpus = finalize(raw).unwrap();
        let (mean, (lo, hi)) = length_stats(&corpus);
        assert!((mean - 10.0).abs() < 1e-12);
        assert!((hi - mean - 4.97).abs() < 0.01, "hi-mean={}", hi - mean);
        assert!((mean - lo - 4.97).abs() < 0.01);
    }

    #[test]
    fn constant_lengths_have_zero_width_ci() {
        let raw = vec![
            record("a b c", 1, Sex::Female, PatronType::Staff),
            record("d e f", 1, Sex::Male, PatronType::Staff),
        ];
        let corpus = finalize(raw).unwrap();
        let (mean, (lo, hi)) = length_stats(&corpus);
        assert_eq!(mean, 3.0);
        assert_eq!(lo, hi);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let raw = vec![
            record("first response", 1, Sex::Female, PatronType::Staff),
            record("second response", 2, Sex::Male, PatronType::Faculty),
        ];
        write_jsonl(&raw, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].response_text, "first response");
    }
}
