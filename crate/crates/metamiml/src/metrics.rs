//! Multi-label ranking metrics: macro AUROC, macro AUPRC (average
//! precision), top-K average F1, and 1 - Hamming loss.
//!
//! Conventions, stated because alternatives exist: AUROC counts tied
//! positive-negative pairs as 1/2 (midrank form); AUPRC is step-interpolated
//! average precision (Σ ΔR·P over descending-score prefixes, ties broken by
//! ascending row index); top-K ties break toward the lower label id; macro
//! averages skip labels whose truth column is degenerate and report how many
//! were skipped.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Scores paired with a same-shape 0/1 truth matrix. Rows are evaluated bags
/// (or instances), columns are labels.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub truth: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, truth: Array2<f64>) -> Result<ScoreMatrix> {
        if scores.dim() != truth.dim() {
            return Err(Error::ShapeMismatch(format!(
                "scores {:?} vs truth {:?}",
                scores.dim(),
                truth.dim()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(ScoreMatrix { scores, truth })
    }
}

/// AUROC of one score column: the probability that a random positive
/// outranks a random negative, ties counted 1/2. Computed by rank sums.
/// Requires at least one positive and one negative.
pub fn auroc(scores: &[f64], truth: &[f64]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t > 0.5).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Midranks: sort ascending, average ranks across tie groups.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = truth
        .iter()
        .zip(&ranks)
        .filter(|(&t, _)| t > 0.5)
        .map(|(_, &r)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Average precision of one score column via descending-rank enumeration:
/// Σ_i (R_i - R_{i-1}) · P_i. Requires at least one positive.
pub fn auprc(scores: &[f64], truth: &[f64]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t > 0.5).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending score; ties by ascending index.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (seen, &idx) in order.iter().enumerate() {
        if truth[idx] > 0.5 {
            tp += 1;
            let precision = tp as f64 / (seen + 1) as f64;
            ap += precision / n_pos as f64; // ΔR = 1/n_pos at each positive
        }
    }
    Some(ap)
}

/// Macro average of a per-column metric; returns (mean, n_labels_used,
/// n_labels_excluded). Degenerate columns (where the metric is undefined)
/// are excluded from the mean.
fn macro_over_labels<F>(s: &ScoreMatrix, f: F) -> (f64, usize, usize)
where
    F: Fn(&[f64], &[f64]) -> Option<f64>,
{
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for j in 0..s.scores.ncols() {
        let col: Vec<f64> = s.scores.column(j).to_vec();
        let t: Vec<f64> = s.truth.column(j).to_vec();
        match f(&col, &t) {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => excluded += 1,
        }
    }
    let mean = if used > 0 { sum / used as f64 } else { f64::NAN };
    (mean, used, excluded)
}

pub fn macro_auroc(s: &ScoreMatrix) -> (f64, usize, usize) {
    macro_over_labels(s, auroc)
}

pub fn macro_auprc(s: &ScoreMatrix) -> (f64, usize, usize) {
    macro_over_labels(s, auprc)
}

/// Top-K predictions per row: the K highest-scoring labels, ties broken by
/// the lower column index. Returns a 0/1 matrix.
pub fn topk_predictions(scores: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    if k < 1 {
        return Err(Error::InvalidConfig("top-K needs K >= 1".into()));
    }
    if k > scores.ncols() {
        return Err(Error::InvalidConfig(format!(
            "K = {k} exceeds the {} labels",
            scores.ncols()
        )));
    }
    let mut pred = Array2::zeros(scores.dim());
    for i in 0..scores.nrows() {
        let mut cols: Vec<usize> = (0..scores.ncols()).collect();
        cols.sort_by(|&a, &b| {
            scores[[i, b]]
                .partial_cmp(&scores[[i, a]])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &c in cols.iter().take(k) {
            pred[[i, c]] = 1.0;
        }
    }
    Ok(pred)
}

/// Default K: the mean number of positive labels per row, rounded half away
/// from zero, floored at 1.
pub fn default_k(truth: &Array2<f64>) -> usize {
    if truth.nrows() == 0 {
        return 1;
    }
    let mean = truth.sum() / truth.nrows() as f64;
    (mean.round() as usize).max(1)
}

/// Macro F1 of top-K predictions over labels that appear in truth or
/// prediction; labels absent from both are excluded.
pub fn avg_f1_topk(s: &ScoreMatrix, k: usize) -> Result<f64> {
    let pred = topk_predictions(&s.scores, k)?;
    Ok(macro_f1(&pred, &s.truth))
}

/// Macro F1 over labels, excluding labels with no truth and no predictions.
pub fn macro_f1(pred: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    let mut used = 0;
    for j in 0..truth.ncols() {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        for i in 0..truth.nrows() {
            let p = pred[[i, j]] > 0.5;
            let t = truth[[i, j]] > 0.5;
            match (p, t) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
        if tp + fp + fnn == 0.0 {
            continue;
        }
        sum += 2.0 * tp / (2.0 * tp + fp + fnn);
        used += 1;
    }
    if used == 0 {
        f64::NAN
    } else {
        sum / used as f64
    }
}

/// 1 - Hamming loss: the fraction of label cells predicted correctly.
pub fn one_minus_hl(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let total = pred.len() as f64;
    let mismatched = pred
        .iter()
        .zip(truth.iter())
        .filter(|(&p, &t)| (p > 0.5) != (t > 0.5))
        .count() as f64;
    Ok(1.0 - mismatched / total)
}

/// One aggregated report line.
#[derive(Debug, Clone)]
pub struct MetricLine {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
    pub k: Option<usize>,
    pub excluded_labels: usize,
}

/// Mean and sample standard deviation over repeated runs.
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Render report lines with fixed 4-decimal formatting. The output is a pure
/// function of its inputs, so reports are byte-stable.
pub fn render_report(lines: &[MetricLine]) -> String {
    let mut out = String::from("metric\tmean\tstd\tn_runs\tK\texcluded_labels\n");
    for l in lines {
        let k = l.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            l.metric, l.mean, l.std, l.n_runs, k, l.excluded_labels
        );
    }
    out
}
