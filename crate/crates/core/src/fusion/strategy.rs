use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{assign_layers, FusionError, LayerAssignment, Variant};
use crate::encoders::EncoderKind;

/// Layer routing produced by a strategy: for each decoder layer, the 0-based
/// index into the conditioning sequence it receives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routing {
    pub layer_map: Vec<usize>,
    pub assignment: Option<LayerAssignment>,
}

/// A way of routing encoder states onto decoder layers.
pub trait FusionStrategy: Send + Sync + fmt::Debug {
    fn variant(&self) -> Variant;

    fn name(&self) -> &'static str {
        self.variant().name()
    }

    /// Encoder whose output conditions the decoder.
    fn encoder_kind(&self) -> EncoderKind;

    /// Number of conditioning states consumed for sequence length `steps`.
    fn conditioning_len(&self, steps: usize) -> usize;

    fn route(&self, n_layers: usize, steps: usize) -> Result<Routing, FusionError>;
}

fn check(n_layers: usize, steps: usize) -> Result<(), FusionError> {
    if n_layers == 0 || steps == 0 {
        return Err(FusionError::InvalidAssignment { n_layers, steps });
    }
    Ok(())
}

/// Single-frame features of the last frame, fed to every layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaseFusion;

impl FusionStrategy for BaseFusion {
    fn variant(&self) -> Variant {
        Variant::Base
    }

    fn encoder_kind(&self) -> EncoderKind {
        EncoderKind::SingleFrame
    }

    fn conditioning_len(&self, _steps: usize) -> usize {
        1
    }

    fn route(&self, n_layers: usize, steps: usize) -> Result<Routing, FusionError> {
        check(n_layers, steps)?;
        Ok(Routing { layer_map: vec![0; n_layers], assignment: None })
    }
}

/// Final LSTM state `h^T`, fed to every layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvenFusion;

impl FusionStrategy for EvenFusion {
    fn variant(&self) -> Variant {
        Variant::Even
    }

    fn encoder_kind(&self) -> EncoderKind {
        EncoderKind::Lstm
    }

    fn conditioning_len(&self, steps: usize) -> usize {
        steps
    }

    fn route(&self, n_layers: usize, steps: usize) -> Result<Routing, FusionError> {
        check(n_layers, steps)?;
        Ok(Routing { layer_map: vec![steps - 1; n_layers], assignment: None })
    }
}

/// State `h^t` fed to the `t`-th contiguous block of layers.
#[derive(Clone, Copy, Debug, Default)]
pub struct AwareFusion;

impl FusionStrategy for AwareFusion {
    fn variant(&self) -> Variant {
        Variant::Aware
    }

    fn encoder_kind(&self) -> EncoderKind {
        EncoderKind::Lstm
    }

    fn conditioning_len(&self, steps: usize) -> usize {
        steps
    }

    fn route(&self, n_layers: usize, steps: usize) -> Result<Routing, FusionError> {
        let assignment = assign_layers(n_layers, steps)?;
        let layer_map = (0..n_layers).map(|l| assignment.step_for_layer(l).map(|t| t - 1)).collect::<Result<_, _>>()?;
        Ok(Routing { layer_map, assignment: Some(assignment) })
    }
}

/// Name-keyed set of fusion strategies.
#[derive(Clone, Debug)]
pub struct FusionRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn FusionStrategy>>,
}

impl Default for FusionRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(BaseFusion));
        r.register(Arc::new(EvenFusion));
        r.register(Arc::new(AwareFusion));
        r
    }
}

impl FusionRegistry {
    pub fn empty() -> Self {
        Self { strategies: BTreeMap::new() }
    }

    /// Adds or replaces the strategy registered under its name.
    pub fn register(&mut self, strategy: Arc<dyn FusionStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FusionStrategy>, FusionError> {
        self.strategies.get(name).cloned().ok_or_else(|| FusionError::UnknownVariant(name.to_string()))
    }

    pub fn for_variant(&self, variant: Variant) -> Result<Arc<dyn FusionStrategy>, FusionError> {
        self.get(variant.name())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_all_variants_by_name() {
        let r = FusionRegistry::default();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["aware", "base", "even"]);
        for v in Variant::ALL {
            assert_eq!(r.get(v.name()).unwrap().variant(), v);
        }
        assert_eq!(r.get("cross").unwrap_err(), FusionError::UnknownVariant("cross".into()));
    }

    #[test]
    fn even_routes_everything_to_last_state() {
        let routing = EvenFusion.route(32, 4).unwrap();
        assert!(routing.layer_map.iter().all(|&t| t == 3));
    }

    #[test]
    fn aware_and_even_agree_when_single_state() {
        assert_eq!(AwareFusion.route(8, 1).unwrap().layer_map, EvenFusion.route(8, 1).unwrap().layer_map);
    }

    #[test]
    fn base_uses_one_single_frame_state() {
        assert_eq!(BaseFusion.conditioning_len(4), 1);
        assert_eq!(BaseFusion.encoder_kind(), EncoderKind::SingleFrame);
        assert!(BaseFusion.route(8, 4).unwrap().layer_map.iter().all(|&t| t == 0));
    }
}
