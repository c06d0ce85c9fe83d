//! Cross-model consensus: terms salient for two or more audited models,
//! hierarchical (Ward) clustering of their effect profiles, and averaged
//! effect sizes per patron class.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::stats::SalienceReport;

/// A term must pass the dual salience threshold in at least this many models
/// to enter the consensus matrix.
pub const MIN_CONSENSUS_MODELS: usize = 2;

#[derive(Debug, Clone, Serialize)]
pub struct ConsensusMatrix {
    pub terms: Vec<String>,
    pub models: Vec<String>,
    /// `values[t][m]` = max |beta| over that model's passing classes for the
    /// term, 0 when the term passes nowhere in that model.
    pub values: Vec<Vec<f64>>,
    /// Each row divided by its largest entry, for scale-free comparison.
    pub normalized: Vec<Vec<f64>>,
    pub empty: bool,
}

/// Builds the consensus matrix from one salience report per model (all for
/// the same demographic axis).
pub fn consensus_matrix(reports: &[(String, SalienceReport)]) -> Result<ConsensusMatrix> {
    if reports.is_empty() {
        return Err(AuditError::Input("no salience reports supplied".into()));
    }
    let axis = reports[0].1.axis;
    if reports.iter().any(|(_, r)| r.axis != axis) {
        return Err(AuditError::Input(
            "consensus requires reports for a single axis".into(),
        ));
    }
    let models: Vec<String> = reports.iter().map(|(m, _)| m.clone()).collect();

    // term -> per-model max passing |beta|
    let mut per_term: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (slot, (_, report)) in reports.iter().enumerate() {
        for term in &report.terms {
            if !term.passes {
                continue;
            }
            let entry = per_term
                .entry(term.term.clone())
                .or_insert_with(|| vec![0.0; reports.len()]);
            entry[slot] = entry[slot].max(term.beta.abs());
        }
    }

    let mut terms = Vec::new();
    let mut values = Vec::new();
    for (term, row) in per_term {
        let support = row.iter().filter(|v| **v > 0.0).count();
        if support >= MIN_CONSENSUS_MODELS {
            terms.push(term);
            values.push(row);
        }
    }
    let normalized = values
        .iter()
        .map(|row| {
            let max = row.iter().cloned().fold(0.0f64, f64::max);
            row.iter()
                .map(|v| if max > 0.0 { v / max } else { 0.0 })
                .collect()
        })
        .collect();
    let empty = terms.is_empty();
    Ok(ConsensusMatrix {
        terms,
        models,
        values,
        normalized,
        empty,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Merge {
    /// Cluster ids: 0..n-1 are leaves; merge i creates cluster n + i.
    pub a: usize,
    pub b: usize,
    /// Increase in within-cluster sum of squares caused by the merge.
    pub height: f64,
    pub size: usize,
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Agglomerative Ward clustering via the Lance-Williams recurrence over
/// squared Euclidean distances. Reported heights are the sum-of-squares
/// increase of each merge (half the Ward distance), which is nondecreasing.
/// Ties break toward the pair with the lexicographically smallest sorted
/// leaf-member lists.
pub fn ward_cluster(rows: &[Vec<f64>]) -> Vec<Merge> {
    let n = rows.len();
    if n < 2 {
        return Vec::new();
    }
    #[derive(Clone)]
    struct Cluster {
        id: usize,
        size: usize,
        members: Vec<usize>, // sorted leaf indices
    }
    let mut clusters: Vec<Cluster> = (0..n)
        .map(|i| Cluster {
            id: i,
            size: 1,
            members: vec![i],
        })
        .collect();
    // dist[i][j] for i < j over current cluster list positions.
    let mut dist: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_euclidean(&rows[i], &rows[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    let mut next_id = n;

    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let d = dist[i][j];
                let candidate_better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        d < bd - 1e-12
                            || ((d - bd).abs() <= 1e-12
                                && (&clusters[i].members, &clusters[j].members)
                                    < (&clusters[bi].members, &clusters[bj].members))
                    }
                };
                if candidate_better {
                    best = Some((d, i, j));
                }
            }
        }
        let (d_ij, i, j) = best.expect("at least one pair");
        let (ni, nj) = (clusters[i].size as f64, clusters[j].size as f64);
        merges.push(Merge {
            a: clusters[i].id,
            b: clusters[j].id,
            height: d_ij / 2.0,
            size: clusters[i].size + clusters[j].size,
        });

        // Lance-Williams update of Ward distances to the merged cluster.
        let mut new_dist = Vec::with_capacity(clusters.len() - 2);
        for k in 0..clusters.len() {
            if k == i || k == j {
                continue;
            }
            let nk = clusters[k].size as f64;
            let d = ((ni + nk) * dist[i][k] + (nj + nk) * dist[j][k] - nk * d_ij)
                / (ni + nj + nk);
            new_dist.push(d);
        }

        let mut members = clusters[i].members.clone();
        members.extend_from_slice(&clusters[j].members);
        members.sort_unstable();
        let merged = Cluster {
            id: next_id,
            size: clusters[i].size + clusters[j].size,
            members,
        };
        next_id += 1;

        // Rebuild the distance matrix without rows i and j, appending the
        // merged cluster at the end.
        let keep: Vec<usize> = (0..clusters.len()).filter(|&k| k != i && k != j).collect();
        let m = keep.len();
        let mut rebuilt = vec![vec![0.0; m + 1]; m + 1];
        for (a_new, &a_old) in keep.iter().enumerate() {
            for (b_new, &b_old) in keep.iter().enumerate().skip(a_new + 1) {
                rebuilt[a_new][b_new] = dist[a_old][b_old];
                rebuilt[b_new][a_new] = dist[a_old][b_old];
            }
            rebuilt[a_new][m] = new_dist[a_new];
            rebuilt[m][a_new] = new_dist[a_new];
        }
        dist = rebuilt;
        let mut next_clusters: Vec<Cluster> = keep.into_iter().map(|k| clusters[k].clone()).collect();
        next_clusters.push(merged);
        clusters = next_clusters;
    }
    merges
}

pub fn merges_csv(merges: &[Merge]) -> String {
    let mut out = String::from("cluster_a,cluster_b,height,size\n");
    for m in merges {
        out.push_str(&format!("{},{},{:.9},{}\n", m.a, m.b, m.height, m.size));
    }
    out
}

pub fn consensus_csv(matrix: &ConsensusMatrix) -> String {
    let mut out = String::from("term");
    for model in &matrix.models {
        out.push_str(&format!(",{model},{model}_normalized"));
    }
    out.push('\n');
    for (t, term) in matrix.terms.iter().enumerate() {
        out.push_str(term);
        for m in 0..matrix.models.len() {
            out.push_str(&format!(
                ",{:.6},{:.6}",
                matrix.values[t][m], matrix.normalized[t][m]
            ));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateCell {
    pub term: String,
    pub class_label: String,
    /// Mean beta over the models where this (term, class) passed.
    pub mean_beta: f64,
    pub n_models: usize,
}

/// Averages passing coefficients across models per (term, class), keeping
/// combinations that pass in at least `MIN_CONSENSUS_MODELS` models.
pub fn aggregate(reports: &[(String, SalienceReport)]) -> Result<Vec<AggregateCell>> {
    if reports.is_empty() {
        return Err(AuditError::Input("no salience reports supplied".into()));
    }
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (_, report) in reports {
        for term in &report.terms {
            if !term.passes {
                continue;
            }
            let entry = sums
                .entry((term.term.clone(), term.class_label.clone()))
                .or_insert((0.0, 0));
            entry.0 += term.beta;
            entry.1 += 1;
        }
    }
    let mut out: Vec<AggregateCell> = sums
        .into_iter()
        .filter(|(_, (_, n))| *n >= MIN_CONSENSUS_MODELS)
        .map(|((term, class_label), (sum, n))| AggregateCell {
            term,
            class_label,
            mean_beta: sum / n as f64,
            n_models: n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_beta
            .abs()
            .total_cmp(&a.mean_beta.abs())
            .then(a.term.cmp(&b.term))
            .then(a.class_label.cmp(&b.class_label))
    });
    Ok(out)
}

pub fn aggregation_csv(cells: &[AggregateCell]) -> String {
    let mut out = String::from("term,class,mean_beta,n_models\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{:.6},{}\n",
            c.term, c.class_label, c.mean_beta, c.n_models
        ));
    }
    out
}
