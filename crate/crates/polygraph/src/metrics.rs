//! Evaluation metrics: argmax accuracy and Mann-Whitney ROC AUC.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric mask selects no nodes")]
    EmptyMask,
    #[error("label {label} out of range for {classes} logit columns")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("lengths disagree: {logits} logit rows, {labels} labels, {mask} mask entries")]
    LengthMismatch { logits: usize, labels: usize, mask: usize },
    #[error("AUC undefined: mask holds a single class")]
    AucUndefined,
}

/// Fraction of masked nodes whose argmax logit matches the label. Ties break
/// toward the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<f64, MetricError> {
    if labels.len() != logits.rows() || mask.len() != logits.rows() {
        return Err(MetricError::LengthMismatch {
            logits: logits.rows(),
            labels: labels.len(),
            mask: mask.len(),
        });
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, (&label, &m)) in labels.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if label >= logits.cols() {
            return Err(MetricError::LabelOutOfRange { label, classes: logits.cols() });
        }
        let row = logits.row(i);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        total += 1;
        if best == label {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok(hits as f64 / total as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with midrank tie
/// handling: the probability a random positive outranks a random negative,
/// ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[usize], mask: &[bool]) -> Result<f64, MetricError> {
    if labels.len() != scores.len() || mask.len() != scores.len() {
        return Err(MetricError::LengthMismatch {
            logits: scores.len(),
            labels: labels.len(),
            mask: mask.len(),
        });
    }
    let mut pairs: Vec<(f64, usize)> = Vec::new();
    for ((&s, &label), &m) in scores.iter().zip(labels).zip(mask) {
        if !m {
            continue;
        }
        if label > 1 {
            return Err(MetricError::LabelOutOfRange { label, classes: 2 });
        }
        pairs.push((s, label));
    }
    if pairs.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let positives = pairs.iter().filter(|(_, l)| *l == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::AucUndefined);
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // Midranks: every member of a tie group gets the group's average rank.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            if pairs[k].1 == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}
