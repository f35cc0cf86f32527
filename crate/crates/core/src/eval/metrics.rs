use crate::error::{Error, Result};
use crate::math::argmax;

/// `K×K` counts; row = true class, column = predicted class.
pub type Confusion = Vec<Vec<u64>>;

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::IndexOutOfRange {
                index: p.max(y),
                len: classes,
            });
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// `trace / total`.
pub fn confusion_accuracy(m: &Confusion) -> Result<f64> {
    let total: u64 = m.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidConfusion("no samples".into()));
    }
    let trace: u64 = (0..m.len()).map(|i| m[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

/// Argmax of each probability vector, lowest index on ties.
pub fn predictions(probs: &[Vec<f64>]) -> Vec<usize> {
    probs.iter().map(|p| argmax(p)).collect()
}
