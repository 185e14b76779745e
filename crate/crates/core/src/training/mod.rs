//! Two-stage training: encoder pretraining (classification plus contrastive
//! alignment), then finetuning of the fused decoder on keyword targets.

mod adam;
mod finetune;
mod pretrain;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use finetune::{evaluate_finetune, finetune, FinetuneEval, FinetuneResult};
pub use pretrain::{evaluate_pretrain, pretrain, PretrainEval, PretrainResult};

use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::{Gradients, ParamStore};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Finetune only: also update the encoder.
    pub train_encoder: bool,
    /// Finetune only: keep every fusion gate at its initial value.
    pub freeze_gates: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: 1.0,
            train_encoder: false,
            freeze_gates: false,
            max_steps: None,
        }
    }

    pub fn finetune() -> Self {
        Self { epochs: 30, learning_rate: 3e-4, ..Self::pretrain() }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One CSV row. Accuracies are percentages; absent columns are left empty.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub retrieval_top1: Option<f64>,
    pub retrieval_top5: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,top1,top5,retrieval_top1,retrieval_top5";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{},{},{}",
            r.epoch,
            r.split,
            r.loss,
            opt(r.top1),
            opt(r.top5),
            opt(r.retrieval_top1),
            opt(r.retrieval_top5)
        );
    }
    s
}

/// Running weighted means over the batches of one epoch.
#[derive(Default)]
struct Accumulator {
    n: f64,
    loss: f64,
    top1: f64,
    top5: f64,
    r1: f64,
    r5: f64,
}

impl Accumulator {
    fn add(&mut self, n: usize, loss: f64, acc: [f64; 4]) {
        let w = n as f64;
        self.n += w;
        self.loss += w * loss;
        self.top1 += w * acc[0];
        self.top5 += w * acc[1];
        self.r1 += w * acc[2];
        self.r5 += w * acc[3];
    }

    fn means(&self) -> (f64, [f64; 4]) {
        let n = self.n.max(1.0);
        (self.loss / n, [self.top1 / n, self.top5 / n, self.r1 / n, self.r5 / n])
    }
}

fn check_loss(stage: &str, value: f64, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{stage} loss is {value} at step {step}")))
    }
}

/// Clips and applies one update.
fn update(
    store: &mut ParamStore,
    grads: Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
    step: usize,
) -> Result<()> {
    let mut grads = grads.params();
    let norm = clip_global_norm(&mut grads, cfg.clip_norm);
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {norm} at step {step}")));
    }
    adam_step(store, &grads, state, &cfg.adam())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
