//! TF-IDF features over a frozen top-k vocabulary, with gendered-honorific
//! and patron-name masking applied before any token ever reaches the
//! vocabulary.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::Corpus;
use crate::gateway::InteractionRecord;
use crate::parallel;
use crate::persona::{PatronType, Race, Sex};

/// Default vocabulary size, reduced for short-response corpora.
pub const DEFAULT_K: usize = 120;
pub const SHORT_CORPUS_K: usize = 60;
/// Corpora with mean response length below this use the reduced vocabulary.
pub const SHORT_CORPUS_MEAN_WORDS: f64 = 170.0;

/// Replacement for masked tokens; never enters the vocabulary.
pub const MASK_SENTINEL: &str = "zzmaskzz";

static HONORIFICS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(mr|mrs|ms|miss|mx|sir|madam|ma'am)\b\.?").expect("honorific pattern")
});

#[derive(Debug, Clone, PartialEq)]
pub struct RowLabels {
    pub sex: Sex,
    pub race: Race,
    pub patron_type: PatronType,
    pub run_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub vocabulary: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<RowLabels>,
}

/// Masks gendered honorifics and the patron's own name tokens.
pub fn mask(response_text: &str, record: &InteractionRecord) -> String {
    let masked = HONORIFICS.replace_all(response_text, MASK_SENTINEL);
    let patron = &record.query.patron;
    let mut name_tokens: Vec<&str> = Vec::new();
    name_tokens.extend(patron.first_name.split_whitespace());
    name_tokens.extend(patron.surname.split_whitespace());
    let escaped: Vec<String> = name_tokens
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| regex::escape(t))
        .collect();
    if escaped.is_empty() {
        return masked.into_owned();
    }
    let name_pattern = Regex::new(&format!(r"(?i)\b({})\b", escaped.join("|")))
        .expect("name pattern");
    name_pattern.replace_all(&masked, MASK_SENTINEL).into_owned()
}

/// Lowercase tokens split on non-alphabetic characters; single characters
/// are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().count() >= 2)
        .map(|t| t.to_string())
        .collect()
}

/// Top-k tokens by total corpus term frequency, ties broken lexicographically.
/// The mask sentinel is excluded. Returns everything available when fewer
/// than k distinct tokens exist.
pub fn fit_vocabulary(masked_docs: &[String], k: usize) -> Vec<String> {
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for doc in masked_docs {
        for token in tokenize(doc) {
            if token == MASK_SENTINEL {
                continue;
            }
            *freq.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    // BTreeMap iteration is lexicographic, so a stable sort by descending
    // frequency leaves ties in lexicographic order.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.into_iter().take(k).map(|(t, _)| t).collect()
}

/// TF-IDF rows over a frozen vocabulary:
/// weight(t, d) = tf(t, d) * (ln((1 + n) / (1 + df(t))) + 1), L2-normalized
/// per row. Documents with no vocabulary terms become zero rows.
pub fn transform(masked_docs: &[String], vocabulary: &[String]) -> Vec<Vec<f64>> {
    transform_impl(masked_docs, vocabulary, true)
}

/// Sequential variant kept for benchmark comparison.
pub fn transform_seq(masked_docs: &[String], vocabulary: &[String]) -> Vec<Vec<f64>> {
    transform_impl(masked_docs, vocabulary, false)
}

fn transform_impl(
    masked_docs: &[String],
    vocabulary: &[String],
    parallel_counts: bool,
) -> Vec<Vec<f64>> {
    let index: BTreeMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n = masked_docs.len() as f64;

    let count_row = |doc: &String| {
        let mut row = vec![0.0; vocabulary.len()];
        for token in tokenize(doc) {
            if let Some(&i) = index.get(token.as_str()) {
                row[i] += 1.0;
            }
        }
        row
    };
    let counts: Vec<Vec<f64>> = if parallel_counts {
        parallel::par_map(masked_docs, count_row)
    } else {
        parallel::seq_map(masked_docs, count_row)
    };

    let mut df = vec![0.0f64; vocabulary.len()];
    for row in &counts {
        for (i, &c) in row.iter().enumerate() {
            if c > 0.0 {
                df[i] += 1.0;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d)).ln() + 1.0)
        .collect();

    counts
        .into_iter()
        .map(|mut row| {
            for (i, v) in row.iter_mut().enumerate() {
                *v *= idf[i];
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
            row
        })
        .collect()
}

/// A fitted TF-IDF transform with a frozen vocabulary and document
/// frequencies, so held-out documents can be projected into the training
/// feature space.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
}

pub fn fit_tfidf(masked_docs: &[String], k: usize) -> TfidfModel {
    let vocabulary = fit_vocabulary(masked_docs, k);
    let index: BTreeMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n = masked_docs.len() as f64;
    let mut df = vec![0.0f64; vocabulary.len()];
    for doc in masked_docs {
        let mut seen = vec![false; vocabulary.len()];
        for token in tokenize(doc) {
            if let Some(&i) = index.get(token.as_str()) {
                seen[i] = true;
            }
        }
        for (i, s) in seen.iter().enumerate() {
            if *s {
                df[i] += 1.0;
            }
        }
    }
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d)).ln() + 1.0)
        .collect();
    TfidfModel { vocabulary, idf }
}

impl TfidfModel {
    pub fn apply(&self, masked_docs: &[String]) -> Vec<Vec<f64>> {
        let index: BTreeMap<&str, usize> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        parallel::par_map(masked_docs, |doc| {
            let mut row = vec![0.0; self.vocabulary.len()];
            for token in tokenize(doc) {
                if let Some(&i) = index.get(token.as_str()) {
                    row[i] += 1.0;
                }
            }
            for (v, idf) in row.iter_mut().zip(self.idf.iter()) {
                *v *= idf;
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
            row
        })
    }
}

/// Chooses k from the corpus mean response length unless overridden.
pub fn select_k(mean_words: f64, override_k: Option<usize>) -> usize {
    override_k.unwrap_or(if mean_words < SHORT_CORPUS_MEAN_WORDS {
        SHORT_CORPUS_K
    } else {
        DEFAULT_K
    })
}

pub fn masked_docs(records: &[InteractionRecord]) -> Vec<String> {
    parallel::par_map(records, |r| mask(&r.response_text, r))
}

pub fn row_labels(records: &[InteractionRecord]) -> Vec<RowLabels> {
    records
        .iter()
        .map(|r| RowLabels {
            sex: r.query.patron.sex,
            race: r.query.patron.race,
            patron_type: r.query.patron.patron_type,
            run_seed: r.run_seed,
        })
        .collect()
}

/// Masks, fits a vocabulary on the whole corpus, and transforms it. Used by
/// the salience phase; cross-validation fits fold-local vocabularies instead.
pub fn featurize(corpus: &Corpus, override_k: Option<usize>) -> FeatureMatrix {
    let docs = masked_docs(&corpus.records);
    let k = select_k(crate::corpus::mean_word_count(corpus), override_k);
    let vocabulary = fit_vocabulary(&docs, k);
    let rows = transform(&docs, &vocabulary);
    FeatureMatrix {
        vocabulary,
        rows,
        labels: row_labels(&corpus.records),
    }
}

/// Vocabulary export: one term per line, rank order.
pub fn vocabulary_to_text(vocabulary: &[String]) -> String {
    let mut out = vocabulary.join("\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::RecordStatus;
    use crate::persona::SyntheticPatron;
    use crate::query::{bundled_roster, fill_template, TemplateId};

    fn record_for(first: &str, last: &str) -> InteractionRecord {
        let patron = SyntheticPatron {
            first_name: first.to_string(),
            surname: last.to_string(),
            sex: Sex::Female,
            race: Race::AsianPacificIslander,
            patron_type: PatronType::Graduate,
        };
        let query = fill_template(TemplateId::Subject, &bundled_roster()[0], &patron).unwrap();
        InteractionRecord {
            query,
            model_id: "m".to_string(),
            run_seed: 1,
            response_text: String::new(),
            status: RecordStatus::Ok,
            word_count: 0,
            error: None,
        }
    }

    #[test]
    fn honorific_and_surname_are_masked() {
        let rec = record_for("Lin", "Chen");
        let masked = mask("Dear Ms. Chen, thank you for writing.", &rec);
        assert_eq!(
            masked,
            format!("Dear {MASK_SENTINEL} {MASK_SENTINEL}, thank you for writing.")
        );
    }

    #[test]
    fn text_without_targets_is_unchanged() {
        let rec = record_for("Lin", "Chen");
        let text = "Thank you for your question about the archive.";
        assert_eq!(mask(text, &rec), text);
    }

    #[test]
    fn first_name_alone_is_masked() {
        let rec = record_for("Malik", "Robinson");
        assert_eq!(mask("Dear Malik,", &rec), format!("Dear {MASK_SENTINEL},"));
    }

    #[test]
    fn all_honorific_variants_are_masked() {
        let rec = record_for("Pat", "Lee");
        for text in [
            "Mr. Lee", "Mrs. Lee", "Ms. Lee", "Miss Lee", "Mx. Lee", "Sir,", "Madam,",
            "Ma'am,", "mr lee", "MS. LEE",
        ] {
            let masked = mask(text, &rec);
            for token in tokenize(&masked) {
                assert!(
                    !["mr", "mrs", "ms", "miss", "mx", "sir", "madam", "ma", "lee"]
                        .contains(&token.as_str()),
                    "`{text}` left `{token}`"
                );
            }
        }
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_lexicographic() {
        let docs = vec!["aa bb bb".to_string(), "bb cc".to_string()];
        assert_eq!(fit_vocabulary(&docs, 2), vec!["bb", "aa"]);
    }

    #[test]
    fn vocabulary_smaller_than_k_returns_all() {
        let docs = vec!["aa bb".to_string()];
        assert_eq!(fit_vocabulary(&docs, 10).len(), 2);
    }

    #[test]
    fn sentinel_never_enters_vocabulary() {
        let docs = vec![format!("{MASK_SENTINEL} {MASK_SENTINEL} hello")];
        let vocab = fit_vocabulary(&docs, 10);
        assert_eq!(vocab, vec!["hello"]);
    }

    #[test]
    fn transform_matches_formula_by_hand() {
        // docs {"x x y", "y"} with >=2-char tokens: {"xx xx yy", "yy"}.
        // n=2, df(xx)=1, df(yy)=2; idf(xx)=ln(3/2)+1, idf(yy)=ln(1)+1=1.
        let docs = vec!["xx xx yy".to_string(), "yy".to_string()];
        let vocab = vec!["xx".to_string(), "yy".to_string()];
        let rows = transform(&docs, &vocab);
        let idf_x = (3.0f64 / 2.0).ln() + 1.0;
        let raw = [2.0 * idf_x, 1.0];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert!((rows[0][0] - raw[0] / norm).abs() < 1e-12);
        assert!((rows[0][1] - raw[1] / norm).abs() < 1e-12);
        assert!((rows[1][0] - 0.0).abs() < 1e-12);
        assert!((rows[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_term_document_is_zero_row() {
        let docs = vec!["qq ww".to_string(), "rr".to_string()];
        let vocab = vec!["qq".to_string(), "ww".to_string()];
        let rows = transform(&docs, &vocab);
        assert!(rows[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_documents_get_identical_rows() {
        let docs = vec!["aa bb cc".to_string(), "aa bb cc".to_string()];
        let vocab = fit_vocabulary(&docs, 3);
        let rows = transform(&docs, &vocab);
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn rows_are_unit_or_zero_norm() {
        let docs = vec![
            "aa bb cc dd".to_string(),
            "aa aa bb".to_string(),
            "zz".to_string(),
        ];
        let vocab = vec!["aa".to_string(), "bb".to_string(), "cc".to_string()];
        for row in transform(&docs, &vocab) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9, "norm={norm}");
        }
    }

    #[test]
    fn fitted_model_applied_to_training_docs_matches_transform() {
        let docs = vec![
            "aa bb bb cc".to_string(),
            "bb cc dd".to_string(),
            "aa aa dd".to_string(),
        ];
        let model = fit_tfidf(&docs, 4);
        let direct = transform(&docs, &model.vocabulary);
        let applied = model.apply(&docs);
        for (a, b) in direct.iter().flatten().zip(applied.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_idf_projects_unseen_documents() {
        let train = vec!["aa bb".to_string(), "aa cc".to_string()];
        let model = fit_tfidf(&train, 3);
        // "dd" is out of vocabulary; "aa" appears in both training docs.
        let rows = model.apply(&["aa dd".to_string()]);
        let aa = model.vocabulary.iter().position(|t| t == "aa").unwrap();
        assert!((rows[0][aa] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_corpus_selects_reduced_k() {
        assert_eq!(select_k(165.0, None), 60);
        assert_eq!(select_k(222.0, None), 120);
        assert_eq!(select_k(165.0, Some(80)), 80);
    }
}
