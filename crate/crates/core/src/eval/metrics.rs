use std::collections::BTreeSet;

use crate::error::Error;
use crate::tensor::Tensor;
use crate::Result;

/// Whether entry `target` of `row` ranks among the `k` largest, counting an
/// equal entry at a lower index as ranked higher.
fn in_top_k(row: &[f64], target: usize, k: usize) -> bool {
    let v = row[target];
    let ahead = row.iter().enumerate().filter(|&(j, &x)| x > v || (x == v && j < target)).count();
    ahead < k
}

/// Percentage of rows whose target is among the `k` largest logits.
/// Ties are broken toward the lower class index.
pub fn topk_accuracy(logits: &Tensor, targets: &[usize], k: usize) -> Result<f64> {
    let (rows, classes) = (logits.rows(), logits.cols());
    if targets.len() != rows || rows == 0 {
        return Err(Error::Invariant(format!("{} targets for {rows} rows", targets.len())));
    }
    if k < 1 || k > classes {
        return Err(Error::Config(format!("k={k} outside 1..={classes}")));
    }
    let mut hits = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::Invariant(format!("target {t} outside {classes} classes")));
        }
        hits += usize::from(in_top_k(logits.row(r), t, k));
    }
    Ok(100.0 * hits as f64 / rows as f64)
}

/// Percentage of rows `i` of a square similarity matrix whose diagonal entry
/// is among the row's `k` largest (ties toward the lower index). `k` above the
/// batch size counts every row.
pub fn retrieval_accuracy(similarity: &Tensor, k: usize) -> Result<f64> {
    let (rows, cols) = (similarity.rows(), similarity.cols());
    if rows != cols || rows == 0 {
        return Err(Error::Invariant(format!("similarity matrix is {rows}x{cols}, not square")));
    }
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let hits = (0..rows).filter(|&i| in_top_k(similarity.row(i), i, k)).count();
    Ok(100.0 * hits as f64 / rows as f64)
}

/// `5 * |P ∩ T| / |P ∪ T|`; an empty prediction scores 0.
pub fn keyword_score<S: AsRef<str>>(predicted: &[S], truth: &[S]) -> Result<f64> {
    let p: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    let t: BTreeSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    if t.is_empty() {
        return Err(Error::Invariant("empty ground-truth keyword set".into()));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let inter = p.intersection(&t).count();
    let union = p.union(&t).count();
    Ok(5.0 * inter as f64 / union as f64)
}
