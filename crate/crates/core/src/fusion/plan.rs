use std::fmt::Write as _;

use super::strategy::FusionStrategy;
use super::{FusionError, FusionRegistry, LayerAssignment, ModalityGroup, Variant};
use crate::encoders::EncoderKind;

/// Immutable description of how conditioning reaches each decoder layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionPlan {
    pub variant: Variant,
    pub group: ModalityGroup,
    pub n_layers: usize,
    /// Temporal sequence length `T` of the samples.
    pub steps: usize,
    pub encoder_kind: EncoderKind,
    /// Number of conditioning states the decoder expects.
    pub conditioning_len: usize,
    /// For each layer, the 0-based conditioning index it receives.
    pub layer_map: Vec<usize>,
    pub assignment: Option<LayerAssignment>,
}

/// Builds the plan for a registered variant.
pub fn build_plan(
    variant: Variant,
    group: ModalityGroup,
    n_layers: usize,
    steps: usize,
) -> Result<FusionPlan, FusionError> {
    let strategy = FusionRegistry::default().for_variant(variant)?;
    FusionPlan::from_strategy(strategy.as_ref(), group, n_layers, steps)
}

impl FusionPlan {
    pub fn from_strategy(
        strategy: &dyn FusionStrategy,
        group: ModalityGroup,
        n_layers: usize,
        steps: usize,
    ) -> Result<Self, FusionError> {
        let routing = strategy.route(n_layers, steps)?;
        Ok(Self {
            variant: strategy.variant(),
            group,
            n_layers,
            steps,
            encoder_kind: strategy.encoder_kind(),
            conditioning_len: strategy.conditioning_len(steps),
            layer_map: routing.layer_map,
            assignment: routing.assignment,
        })
    }

    /// Label of the state fused into `layer`: `h^t` for LSTM states, `f^T` for
    /// single-frame features.
    pub fn source_label(&self, layer: usize) -> Result<String, FusionError> {
        let idx = *self.layer_map.get(layer).ok_or(FusionError::LayerOutOfRange { layer, n_layers: self.n_layers })?;
        Ok(match self.encoder_kind {
            EncoderKind::SingleFrame => format!("f^{}", self.steps),
            EncoderKind::Lstm => format!("h^{}", idx + 1),
        })
    }

    /// Human-readable block table.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant: {}", self.variant);
        let _ = writeln!(s, "group: {}", self.group);
        let _ = writeln!(s, "n_layers: {}", self.n_layers);
        let _ = writeln!(s, "T: {}", self.steps);
        let _ = writeln!(s, "encoder: {}", self.encoder_kind);
        let _ = writeln!(s, "block  layers  state");
        // group consecutive layers with the same source
        let mut start = 0;
        let mut block = 1;
        for l in 1..=self.n_layers {
            if l == self.n_layers || self.layer_map[l] != self.layer_map[start] {
                let label = self.source_label(start).expect("layer in range");
                let _ = writeln!(s, "{block:<6} {:<7} {label}", format!("{}..{}", start, l - 1));
                start = l;
                block += 1;
            }
        }
        s
    }
}
