//! Held-out evaluation metrics.

use crate::losses::sigmoid;

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / y.len() as f64
}

/// Mean log loss from link-scale scores.
pub fn log_loss(y: &[f64], link: &[f64]) -> f64 {
    crate::losses::mean_loss(y, link, crate::Task::Binary)
}

/// Area under the ROC curve by the rank-sum formula with tie midranks.
/// `None` when one class is absent.
pub fn auc(y: &[f64], score: &[f64]) -> Option<f64> {
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && score[idx[j]] == score[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j share the midrank
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += idx[i..j].iter().filter(|&&r| y[r] > 0.5).count() as f64 * mid;
        i = j;
    }
    let n_pos = y.iter().filter(|&&v| v > 0.5).count() as f64;
    let n_neg = n as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

pub fn probabilities(link: &[f64]) -> Vec<f64> {
    link.iter().map(|&g| sigmoid(g)).collect()
}
