use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, TemporalSample, TrajectoryRecord};

/// Every window of `t` consecutive frames: `len - t + 1` samples, window `i`
/// covering frames `i..=i+t-1` (1-based). Sample ids count from 0.
pub fn build_temporal_samples(trajectory: &TrajectoryRecord, t: usize) -> Result<Vec<TemporalSample>, DataError> {
    let len = trajectory.len();
    if t < 1 || t > len {
        return Err(DataError::InvalidArgument(format!("sequence length {t} must be within 1..={len}")));
    }
    Ok((0..=len - t)
        .map(|start| TemporalSample {
            sample_id: start,
            class_id: trajectory.material.class_id,
            frames: trajectory.frames[start..start + t].to_vec(),
            keywords: trajectory.material.keywords.clone(),
            source_trajectory: trajectory.trajectory_id,
            window_start: start + 1,
        })
        .collect())
}

/// Windows for a whole dataset, with sample ids renumbered consecutively.
pub fn build_dataset_samples(records: &[TrajectoryRecord], t: usize) -> Result<Vec<TemporalSample>, DataError> {
    let mut out = Vec::new();
    for r in records {
        out.extend(build_temporal_samples(r, t)?);
    }
    for (i, s) in out.iter_mut().enumerate() {
        s.sample_id = i;
    }
    Ok(out)
}

/// Picks the held-out trajectory ids: `round(fraction * n)` of them, clamped to
/// `1..n`, chosen by a seeded shuffle of the sorted ids.
pub fn trajectory_split(ids: &BTreeSet<usize>, test_fraction: f64, seed: u64) -> Result<BTreeSet<usize>, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = ids.len();
    if n < 2 {
        return Err(DataError::InvalidArgument(format!("need at least 2 trajectories to split, got {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = ids.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.into_iter().take(n_test).collect())
}

/// Splits samples into `(train, test)` by source trajectory, so no trajectory
/// contributes windows to both sides.
pub fn split_dataset(
    samples: &[TemporalSample],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<TemporalSample>, Vec<TemporalSample>), DataError> {
    let ids: BTreeSet<usize> = samples.iter().map(|s| s.source_trajectory).collect();
    let test_ids = trajectory_split(&ids, test_fraction, seed)?;
    let (test, train) = samples.iter().cloned().partition(|s| test_ids.contains(&s.source_trajectory));
    Ok((train, test))
}
