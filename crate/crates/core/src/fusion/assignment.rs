use std::ops::Range;

use super::FusionError;

/// Partition of `n_layers` decoder layers into `steps` contiguous, ordered blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerAssignment {
    n_layers: usize,
    blocks: Vec<Range<usize>>,
}

impl LayerAssignment {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn steps(&self) -> usize {
        self.blocks.len()
    }

    /// Block `i` holds the layers fed by hidden state `h^(i+1)`.
    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// 1-based time step whose block contains `layer`.
    pub fn step_for_layer(&self, layer: usize) -> Result<usize, FusionError> {
        if layer >= self.n_layers {
            return Err(FusionError::LayerOutOfRange { layer, n_layers: self.n_layers });
        }
        Ok(self.blocks.partition_point(|b| b.end <= layer) + 1)
    }
}

/// Splits `n_layers` into `steps` contiguous blocks of `n/T` layers. When `T`
/// does not divide `n`, the `n mod T` deepest blocks take one extra layer each.
pub fn assign_layers(n_layers: usize, steps: usize) -> Result<LayerAssignment, FusionError> {
    if n_layers < 1 || steps < 1 || steps > n_layers {
        return Err(FusionError::InvalidAssignment { n_layers, steps });
    }
    let base = n_layers / steps;
    let extra = n_layers % steps;
    let mut blocks = Vec::with_capacity(steps);
    let mut start = 0;
    for i in 0..steps {
        let size = if i >= steps - extra { base + 1 } else { base };
        blocks.push(start..start + size);
        start += size;
    }
    Ok(LayerAssignment { n_layers, blocks })
}

/// 1-based hidden-state index fused into `layer`.
pub fn select_hidden_for_layer(assignment: &LayerAssignment, layer: usize) -> Result<usize, FusionError> {
    assignment.step_for_layer(layer)
}
