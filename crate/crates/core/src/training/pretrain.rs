use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_loss, shuffled, update, Accumulator, AdamState, EpochMetrics, Split, TrainConfig};
use crate::data::TemporalSample;
use crate::encoders::{Encoder, EncoderConfig, EncoderKind, FrameBatch, PretrainOutput};
use crate::error::Error;
use crate::eval::{retrieval_accuracy, topk_accuracy};
use crate::tensor::{Graph, ParamStore};
use crate::Result;

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub encoder: Encoder,
    pub store: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    /// Training loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Loss and accuracies (percentages) over a sample set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainEval {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub retrieval_top1: f64,
    pub retrieval_top5: f64,
}

fn batch_metrics(g: &Graph, out: &PretrainOutput, classes: &[usize]) -> Result<[f64; 4]> {
    let logits = g.value(out.logits);
    let k5 = 5.min(logits.cols());
    let sim = g.value(out.similarity);
    Ok([
        topk_accuracy(logits, classes, 1)?,
        topk_accuracy(logits, classes, k5)?,
        retrieval_accuracy(sim, 1)?,
        retrieval_accuracy(sim, 5)?,
    ])
}

/// Evaluates in order, in batches of `batch_size`; retrieval is in-batch.
pub fn evaluate_pretrain(
    encoder: &Encoder,
    store: &ParamStore,
    samples: &[TemporalSample],
    batch_size: usize,
) -> Result<PretrainEval> {
    if samples.is_empty() {
        return Err(Error::Invariant("no samples to evaluate".into()));
    }
    let mut acc = Accumulator::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&TemporalSample> = chunk.iter().collect();
        let classes: Vec<usize> = chunk.iter().map(|s| s.class_id).collect();
        let batch = FrameBatch::from_samples(&refs, encoder.config.grid)?;
        let mut g = Graph::new();
        let out = encoder.pretrain_forward(&mut g, store, &batch)?;
        let loss = encoder.pretrain_loss(&mut g, &out, &classes)?;
        acc.add(chunk.len(), g.value(loss).item(), batch_metrics(&g, &out, &classes)?);
    }
    let (loss, m) = acc.means();
    Ok(PretrainEval { loss, top1: m[0], top5: m[1], retrieval_top1: m[2], retrieval_top5: m[3] })
}

/// Trains a fresh encoder of `kind` with Adam. Train-split metrics are the
/// means over the epoch's batches before each update; the test split (if
/// nonempty) is evaluated after every epoch.
pub fn pretrain(
    train: &[TemporalSample],
    test: &[TemporalSample],
    config: &EncoderConfig,
    kind: EncoderKind,
    cfg: &TrainConfig,
) -> Result<PretrainResult> {
    cfg.validate()?;
    let classes: BTreeSet<usize> = train.iter().map(|s| s.class_id).collect();
    if classes.len() < 2 {
        return Err(Error::Config(format!("pretraining needs at least 2 classes, found {}", classes.len())));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= config.num_classes) {
        return Err(Error::Config(format!("class {c} outside the {} head outputs", config.num_classes)));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(1);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(2);
    let mut store = ParamStore::new();
    let encoder = Encoder::new(config, kind, &mut store, &mut init_rng)?;
    let mut adam = AdamState::new();
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        let mut acc = Accumulator::default();
        let order = shuffled(train.len(), &mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let refs: Vec<&TemporalSample> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = refs.iter().map(|s| s.class_id).collect();
            let batch = FrameBatch::from_samples(&refs, config.grid)?;
            let mut g = Graph::new();
            let out = encoder.pretrain_forward(&mut g, &store, &batch)?;
            let loss = encoder.pretrain_loss(&mut g, &out, &labels)?;
            let lv = g.value(loss).item();
            check_loss("pretrain", lv, step)?;
            step_losses.push(lv);
            acc.add(chunk.len(), lv, batch_metrics(&g, &out, &labels)?);
            let grads = g.backward(loss)?;
            update(&mut store, grads, &mut adam, cfg, step)?;
            step += 1;
        }
        let (loss, m) = acc.means();
        metrics.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss,
            top1: Some(m[0]),
            top5: Some(m[1]),
            retrieval_top1: Some(m[2]),
            retrieval_top5: Some(m[3]),
        });
        if !test.is_empty() {
            let e = evaluate_pretrain(&encoder, &store, test, cfg.batch_size)?;
            metrics.push(EpochMetrics {
                epoch,
                split: Split::Test,
                loss: e.loss,
                top1: Some(e.top1),
                top5: Some(e.top5),
                retrieval_top1: Some(e.retrieval_top1),
                retrieval_top5: Some(e.retrieval_top5),
            });
        }
    }
    Ok(PretrainResult { encoder, store, metrics, step_losses })
}
