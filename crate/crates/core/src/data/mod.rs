//! Synthetic visual/tactile trajectories, fixed-length temporal windows, and
//! the on-disk dataset layout.

mod generator;
pub(crate) mod io;
mod materials;
mod windows;

pub use generator::{generate_dataset, generate_trajectory, pressure_envelope, GeneratorConfig};
pub use io::{read_dataset, write_dataset, Dataset};
pub use materials::{MaterialCatalog, MaterialClass};
pub use windows::{build_dataset_samples, build_temporal_samples, split_dataset, trajectory_split};

use std::path::PathBuf;

use thiserror::Error;

/// Errors from data generation, windowing and dataset files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{file}: line {line}: {reason}")]
    Manifest { file: PathBuf, line: usize, reason: String },
    #[error("{file}: offset {offset}: {reason}")]
    Blob { file: PathBuf, offset: u64, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Height and width of every visual and tactile grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn tactile_len(&self) -> usize {
        self.height * self.width
    }

    pub fn visual_len(&self) -> usize {
        self.height * self.width * 3
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::new(8, 8)
    }
}

/// The four interaction stages of a trajectory, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Approach,
    Contact,
    Slide,
    Withdraw,
}

/// First frame (1-based) of the contact, slide and withdraw stages.
/// The approach stage always starts at frame 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageMarks {
    pub contact: usize,
    pub slide: usize,
    pub withdraw: usize,
}

impl StageMarks {
    /// Boundaries at 20% / 40% / 80% of the trajectory, adjusted so every stage
    /// spans at least two frames.
    pub fn for_length(length: usize) -> Result<Self, DataError> {
        if length < 8 {
            return Err(DataError::InvalidArgument(format!("trajectory length {length} is below the minimum of 8")));
        }
        let at = |f: f64| (f * length as f64).round() as usize;
        let contact0 = at(0.2).max(2);
        let slide0 = at(0.4).max(contact0 + 2);
        let withdraw0 = at(0.8).max(slide0 + 2).min(length - 2);
        Ok(Self { contact: contact0 + 1, slide: slide0 + 1, withdraw: withdraw0 + 1 })
    }

    /// Stage of a 1-based frame index.
    pub fn stage(&self, frame: usize) -> Stage {
        if frame < self.contact {
            Stage::Approach
        } else if frame < self.slide {
            Stage::Contact
        } else if frame < self.withdraw {
            Stage::Slide
        } else {
            Stage::Withdraw
        }
    }

    pub fn is_valid_for(&self, length: usize) -> bool {
        1 < self.contact && self.contact < self.slide && self.slide < self.withdraw && self.withdraw <= length
    }
}

/// One visual frame and one tactile deformation frame captured together.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    /// `H x W x 3` row-major, channels last, values in `[0, 1]`.
    pub visual: Vec<f32>,
    /// `H x W` row-major, values in `[0, 1]`.
    pub tactile: Vec<f32>,
    /// 1-based position within the trajectory.
    pub time_index: usize,
}

/// One interaction episode with a single material.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory_id: usize,
    pub material: MaterialClass,
    pub frames: Vec<FramePair>,
    pub stage_marks: StageMarks,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `T` consecutive frame pairs of one trajectory plus its keyword labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSample {
    pub sample_id: usize,
    pub class_id: usize,
    pub frames: Vec<FramePair>,
    pub keywords: Vec<String>,
    pub source_trajectory: usize,
    /// 1-based index of the first frame in the source trajectory.
    pub window_start: usize,
}

impl TemporalSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last_frame(&self) -> &FramePair {
        self.frames.last().expect("samples hold at least one frame")
    }
}
