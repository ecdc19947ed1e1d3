//! Accuracy and macro F1 for the downstream classification task.

use crate::error::{Error, Result};

/// Returns `(accuracy, macro_f1)`.
///
/// Macro F1 averages per-class F1 over the classes listed in `classes` that
/// actually occur in `labels`; a listed class never predicted correctly
/// contributes 0, a listed class absent from the labels is excluded from the
/// average.
pub fn classification_scores(
    preds: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<(f64, f64)> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "prediction/label length mismatch: {} vs {}",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("classification_scores needs at least one sample".into()));
    }

    let correct = preds.iter().zip(labels.iter()).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / preds.len() as f64;

    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for &class in classes {
        let tp = preds
            .iter()
            .zip(labels.iter())
            .filter(|&(&p, &l)| p == class && l == class)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(labels.iter())
            .filter(|&(&p, &l)| p == class && l != class)
            .count() as f64;
        let fn_ = preds
            .iter()
            .zip(labels.iter())
            .filter(|&(&p, &l)| p != class && l == class)
            .count() as f64;
        if tp + fn_ == 0.0 {
            // Class absent from the labels: excluded.
            continue;
        }
        let f1 = if 2.0 * tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        f1_sum += f1;
        f1_count += 1;
    }
    if f1_count == 0 {
        return Err(Error::Contract("no listed class occurs in the labels".into()));
    }
    Ok((accuracy, f1_sum / f1_count as f64))
}
