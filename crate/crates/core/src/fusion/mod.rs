//! Routing of encoder hidden states onto decoder layers and the zero-initialized
//! gated injection that adds them to attention outputs.
//!
//! Three interchangeable strategies live in a [`FusionRegistry`]:
//!
//! * `aware` splits the `n` decoder layers into `T` contiguous blocks and feeds
//!   block `t` with hidden state `h^t`, so early states reach shallow layers;
//! * `even` feeds the final state `h^T` to every layer;
//! * `base` feeds single-frame features of the last frame to every layer.

mod assignment;
mod inject;
mod plan;
mod strategy;

pub use assignment::{assign_layers, select_hidden_for_layer, LayerAssignment};
pub use inject::{fuse_into_layer, Conditioning, FusionParams, ProjectedConditioning};
pub use plan::{build_plan, FusionPlan};
pub use strategy::{AwareFusion, BaseFusion, EvenFusion, FusionRegistry, FusionStrategy, Routing};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("cannot assign {steps} hidden states to {n_layers} layers")]
    InvalidAssignment { n_layers: usize, steps: usize },
    #[error("layer {layer} out of range for {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("unknown fusion variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown modality group `{0}`")]
    UnknownGroup(String),
    #[error("activation width {got} does not match decoder width {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("conditioning holds {got} states, plan needs {need}")]
    ConditioningLength { got: usize, need: usize },
}

/// Ablation variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Base,
    Even,
    Aware,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::Even, Variant::Aware];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Even => "even",
            Variant::Aware => "aware",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| FusionError::UnknownVariant(s.to_string()))
    }
}

/// Which encoder streams are injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityGroup {
    TactileAndVision,
    TactileOnly,
}

impl ModalityGroup {
    pub const ALL: [ModalityGroup; 2] = [ModalityGroup::TactileAndVision, ModalityGroup::TactileOnly];

    pub fn name(self) -> &'static str {
        match self {
            ModalityGroup::TactileAndVision => "tactile_and_vision",
            ModalityGroup::TactileOnly => "tactile_only",
        }
    }

    pub fn uses_image(self) -> bool {
        self == ModalityGroup::TactileAndVision
    }
}

impl fmt::Display for ModalityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityGroup {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModalityGroup::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| FusionError::UnknownGroup(s.to_string()))
    }
}
