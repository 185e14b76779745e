use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{DataError, FramePair, GridSpec, MaterialCatalog, MaterialClass, Stage, StageMarks, TrajectoryRecord};

/// Decay constant of the unloading stage, in frames.
const WITHDRAW_DECAY: f64 = 0.6;

/// Sensor-model settings shared by every trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub grid: GridSpec,
    /// Standard deviation of the additive Gaussian noise (before clipping).
    pub noise_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { grid: GridSpec::default(), noise_std: 0.02 }
    }
}

/// Noise-free contact pressure at a 1-based frame.
///
/// Zero while approaching; during contact the pressure creeps as
/// `h (1 - exp(-dt/tau))`, normalized so the last contact frame reaches `h`;
/// held at `h` while sliding; decays exponentially after withdrawal.
pub fn pressure_envelope(material: &MaterialClass, marks: &StageMarks, frame: usize) -> f64 {
    let h = material.hardness;
    match marks.stage(frame) {
        Stage::Approach => 0.0,
        Stage::Contact => {
            let tau = material.relaxation_time;
            let dt = (frame + 1 - marks.contact) as f64;
            let span = (marks.slide - marks.contact) as f64;
            h * (1.0 - (-dt / tau).exp()) / (1.0 - (-span / tau).exp())
        }
        Stage::Slide => h,
        Stage::Withdraw => {
            let k = (frame + 1 - marks.withdraw) as f64;
            h * (-k / WITHDRAW_DECAY).exp()
        }
    }
}

/// Renders one trajectory. Deterministic in `(material, length, seed, config)`.
pub fn generate_trajectory(
    material: &MaterialClass,
    length: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<TrajectoryRecord, DataError> {
    let marks = StageMarks::for_length(length)?;
    let GridSpec { height, width } = config.grid;
    if height == 0 || width == 0 {
        return Err(DataError::InvalidArgument("grid dimensions must be positive".into()));
    }
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| DataError::InvalidArgument(format!("noise std {}: {e}", config.noise_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain: f64 = rng.gen_range(0.95..1.05);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let cx = (width as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5);
    let cy = (height as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5);
    let patch_sigma = 0.3 * width as f64;

    let mut frames = Vec::with_capacity(length);
    for t in 1..=length {
        let amp = gain * pressure_envelope(material, &marks, t);
        let slide_step = match marks.stage(t) {
            Stage::Slide => Some((t - marks.slide) as f64),
            _ => None,
        };
        let mut tactile = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let patch = (-r2 / (2.0 * patch_sigma * patch_sigma)).exp();
                let texture = slide_step.map_or(1.0, |k| {
                    let arg = 2.0 * PI * material.texture_frequency * x as f64 / width as f64 + phase + 0.9 * k;
                    0.75 + 0.25 * arg.sin()
                });
                let v = amp * patch * texture + noise.sample(&mut rng);
                tactile.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        let vis_sigma = width as f64 * (0.1 + 0.25 * amp);
        let mut visual = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let patch = amp * (-r2 / (2.0 * vis_sigma * vis_sigma)).exp();
                for c in 0..3 {
                    let v = 0.1 + material.tint[c] * (0.35 + 0.65 * patch) + noise.sample(&mut rng);
                    visual.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        frames.push(FramePair { visual, tactile, time_index: t });
    }
    Ok(TrajectoryRecord { trajectory_id: 0, material: material.clone(), frames, stage_marks: marks })
}

/// `count` trajectories cycling through the catalog's classes, ids `0..count`.
pub fn generate_dataset(
    catalog: &MaterialCatalog,
    count: usize,
    length: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<Vec<TrajectoryRecord>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.gen()).collect();
    seeds
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            let material = &catalog.classes()[i % catalog.len()];
            let mut record = generate_trajectory(material, length, s, config)?;
            record.trajectory_id = i;
            Ok(record)
        })
        .collect()
}
