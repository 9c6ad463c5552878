//! Tuple-match scoring of predicted triples against gold triples.
//!
//! Matching is slot-wise on normalised tokens. Recall credits each gold
//! triple with its best-matching prediction; precision uses a one-to-one
//! assignment of predictions to gold triples that maximises the summed
//! precision parts. Metrics are kept in `[0, 1]` and only turned into
//! percentages at report boundaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::Role;
use crate::codec::Triple;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("domain error: {0}")]
    Domain(String),
}

/// Lower-cased whitespace tokens with punctuation stripped from both edges.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in b {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    a.iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Share of matched prediction tokens and matched gold tokens, comparing
/// each slot only with the same slot.
pub fn tuple_match(pred: &Triple, gold: &Triple) -> (f64, f64) {
    let mut matched = 0usize;
    let mut pred_total = 0usize;
    let mut gold_total = 0usize;
    for role in Role::ALL {
        let p = normalize_tokens(pred.field(role));
        let g = normalize_tokens(gold.field(role));
        matched += multiset_overlap(&p, &g);
        pred_total += p.len();
        gold_total += g.len();
    }
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    (ratio(matched, pred_total), ratio(matched, gold_total))
}

/// Maximum-weight one-to-one assignment of rows to columns.
///
/// Returns, for every row, the column it is assigned to (if any). Works on
/// rectangular matrices by padding with zero-weight dummies.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let max_w = weights.iter().flatten().copied().fold(0.0_f64, f64::max);
    // Minimisation form; 1-based with a virtual column 0.
    let cost = |i: usize, j: usize| -> f64 {
        if i <= rows && j <= cols {
            max_w - weights[i - 1][j - 1]
        } else {
            max_w
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![None; rows];
    for (j, &i) in owner.iter().enumerate().take(cols + 1).skip(1) {
        if (1..=rows).contains(&i) {
            assignment[i - 1] = Some(j - 1);
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gold: usize,
    pub precision_part: f64,
    pub recall_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub precision: f64,
    pub recall: f64,
    /// The precision assignment.
    pub matches: Vec<Match>,
    pub n_preds: usize,
    pub n_golds: usize,
}

/// Scores one sentence.
///
/// With no predictions precision is vacuously 1; with no gold triples recall
/// is vacuously 1.
pub fn score_sentence(preds: &[Triple], golds: &[Triple]) -> SentenceScore {
    let table: Vec<Vec<(f64, f64)>> = preds
        .iter()
        .map(|p| golds.iter().map(|g| tuple_match(p, g)).collect())
        .collect();

    let recall = if golds.is_empty() {
        1.0
    } else {
        let total: f64 = (0..golds.len())
            .map(|g| table.iter().map(|row| row[g].1).fold(0.0, f64::max))
            .sum();
        total / golds.len() as f64
    };

    let weights: Vec<Vec<f64>> = table
        .iter()
        .map(|row| row.iter().map(|(p, _)| *p).collect())
        .collect();
    let assignment = max_weight_assignment(&weights);
    let matches: Vec<Match> = assignment
        .iter()
        .enumerate()
        .filter_map(|(pred, gold)| {
            gold.map(|gold| Match {
                pred,
                gold,
                precision_part: table[pred][gold].0,
                recall_part: table[pred][gold].1,
            })
        })
        .collect();
    let precision = if preds.is_empty() {
        1.0
    } else {
        matches.iter().map(|m| m.precision_part).sum::<f64>() / preds.len() as f64
    };

    SentenceScore {
        precision,
        recall,
        matches,
        n_preds: preds.len(),
        n_golds: golds.len(),
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `x` rounded to one decimal.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// A metric in `[0, 1]` as a one-decimal percentage.
pub fn as_percent(x: f64) -> f64 {
    round1(100.0 * x)
}

/// F1 as a percentage of a reference full-data F1, to one decimal.
///
/// Both arguments must be in the same unit.
pub fn f1_percent(f1: f64, reference_f1: f64) -> Result<f64, EvalError> {
    if reference_f1.is_nan() || reference_f1 <= 0.0 {
        return Err(EvalError::Domain(format!(
            "reference F1 must be positive, got {reference_f1}"
        )));
    }
    Ok(round1(100.0 * f1 / reference_f1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportLabel {
    #[default]
    Final,
    AfterOneEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceReport {
    pub id: String,
    pub precision: f64,
    pub recall: f64,
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_percent: Option<f64>,
    pub label: ReportLabel,
    pub per_sentence: Vec<SentenceReport>,
}

impl ScoreReport {
    pub fn with_label(mut self, label: ReportLabel) -> Self {
        self.label = label;
        self
    }

    pub fn with_f1_percent(mut self, reference_f1: f64) -> Result<Self, EvalError> {
        self.f1_percent = Some(f1_percent(self.f1, reference_f1)?);
        Ok(self)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "P {:.1}  R {:.1}  F1 {:.1}",
            as_percent(self.precision),
            as_percent(self.recall),
            as_percent(self.f1)
        );
        if let Some(pct) = self.f1_percent {
            s.push_str(&format!("  F1% {pct:.1}"));
        }
        s
    }
}

/// Predictions and gold triples for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSentence {
    pub id: String,
    pub preds: Vec<Triple>,
    pub golds: Vec<Triple>,
}

/// Micro-averaged scores: sentence precision weighted by prediction count,
/// sentence recall weighted by gold count.
pub fn score_corpus(
    records: impl IntoIterator<Item = ScoredSentence>,
) -> Result<ScoreReport, EvalError> {
    let mut per_sentence = Vec::new();
    let (mut p_sum, mut p_weight, mut r_sum, mut r_weight) = (0.0, 0usize, 0.0, 0usize);
    for rec in records {
        let s = score_sentence(&rec.preds, &rec.golds);
        p_sum += s.precision * s.n_preds as f64;
        p_weight += s.n_preds;
        r_sum += s.recall * s.n_golds as f64;
        r_weight += s.n_golds;
        per_sentence.push(SentenceReport {
            id: rec.id,
            precision: s.precision,
            recall: s.recall,
            matches: s.matches,
        });
    }
    if per_sentence.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let precision = if p_weight == 0 {
        1.0
    } else {
        p_sum / p_weight as f64
    };
    let recall = if r_weight == 0 {
        1.0
    } else {
        r_sum / r_weight as f64
    };
    Ok(ScoreReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        f1_percent: None,
        label: ReportLabel::Final,
        per_sentence,
    })
}
