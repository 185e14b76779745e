use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_loss, shuffled, update, Accumulator, AdamState, EpochMetrics, Split, TrainConfig};
use crate::data::TemporalSample;
use crate::decoder::{Decoder, FusionInput, ModelConfig, Vocab, PROMPT};
use crate::encoders::{conditioning_from_hidden, Encoder, FrameBatch, HiddenSequence, PREFIX};
use crate::error::Error;
use crate::eval::topk_accuracy;
use crate::fusion::{build_plan, Conditioning, FusionPlan, ModalityGroup, Variant};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub decoder: Decoder,
    pub plan: FusionPlan,
    pub vocab: Vocab,
    /// Encoder and decoder parameters together.
    pub store: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    pub step_losses: Vec<f64>,
    /// Padded token length used for teacher forcing.
    pub seq_len: usize,
}

/// Teacher-forced loss and next-token accuracies (percentages) over the
/// keyword and end-of-sequence positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneEval {
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Everything a forward pass over a batch of samples needs.
pub(crate) struct Model<'a> {
    pub encoder: &'a Encoder,
    pub decoder: &'a Decoder,
    pub plan: &'a FusionPlan,
    pub vocab: &'a Vocab,
    pub seq_len: usize,
    /// Precomputed conditioning when the encoder is frozen.
    pub hidden: Option<&'a [HiddenSequence]>,
}

impl Model<'_> {
    fn conditioning(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        samples: &[&TemporalSample],
        idx: &[usize],
    ) -> Result<Conditioning> {
        match self.hidden {
            Some(h) => {
                let refs: Vec<&HiddenSequence> = idx.iter().map(|&i| &h[i]).collect();
                conditioning_from_hidden(g, &refs)
            }
            None => self.encoder.encode(g, store, &FrameBatch::from_samples(samples, self.encoder.config.grid)?),
        }
    }

    /// Returns `(loss, logits, targets)`.
    pub(crate) fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        samples: &[&TemporalSample],
        idx: &[usize],
    ) -> Result<(Var, Var, Vec<Option<usize>>)> {
        let mut tokens = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len() * self.seq_len);
        for s in samples {
            let (inp, tgt) = self.vocab.training_pair(&s.keywords, self.seq_len)?;
            tokens.push(inp);
            targets.extend(tgt);
        }
        let cond = self.conditioning(g, store, samples, idx)?;
        let logits =
            self.decoder.forward(g, store, &tokens, Some(FusionInput { plan: self.plan, conditioning: &cond }))?;
        let loss = g.cross_entropy(logits, &targets)?;
        Ok((loss, logits, targets))
    }
}

fn token_accuracy(logits: &Tensor, targets: &[Option<usize>]) -> Result<[f64; 2]> {
    let rows: Vec<usize> = (0..targets.len()).filter(|&r| targets[r].is_some()).collect();
    let v = logits.cols();
    let data: Vec<f64> = rows.iter().flat_map(|&r| logits.row(r).iter().copied()).collect();
    let picked = Tensor::matrix(rows.len(), v, data);
    let t: Vec<usize> = rows.iter().map(|&r| targets[r].expect("filtered")).collect();
    Ok([topk_accuracy(&picked, &t, 1)?, topk_accuracy(&picked, &t, 5.min(v))?])
}

pub(crate) fn evaluate_model(
    model: &Model<'_>,
    store: &ParamStore,
    samples: &[TemporalSample],
    batch_size: usize,
) -> Result<FinetuneEval> {
    if samples.is_empty() {
        return Err(Error::Invariant("no samples to evaluate".into()));
    }
    let mut acc = Accumulator::default();
    let all: Vec<usize> = (0..samples.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let refs: Vec<&TemporalSample> = idx.iter().map(|&i| &samples[i]).collect();
        let mut g = Graph::new();
        let (loss, logits, targets) = model.loss(&mut g, store, &refs, idx)?;
        let [t1, t5] = token_accuracy(g.value(logits), &targets)?;
        acc.add(idx.len(), g.value(loss).item(), [t1, t5, 0.0, 0.0]);
    }
    let (loss, m) = acc.means();
    Ok(FinetuneEval { loss, top1: m[0], top5: m[1] })
}

/// Teacher-forced evaluation of a finetuned model.
pub fn evaluate_finetune(
    result: &FinetuneResult,
    encoder: &Encoder,
    samples: &[TemporalSample],
    batch_size: usize,
) -> Result<FinetuneEval> {
    let model = Model {
        encoder,
        decoder: &result.decoder,
        plan: &result.plan,
        vocab: &result.vocab,
        seq_len: result.seq_len,
        hidden: None,
    };
    evaluate_model(&model, &result.store, samples, batch_size)
}

/// Padded input length: the prompt plus the longest keyword list.
pub(crate) fn sequence_length(samples: &[&[TemporalSample]], max_positions: usize) -> Result<usize> {
    let longest = samples.iter().flat_map(|s| s.iter()).map(|s| s.keywords.len()).max().unwrap_or(0);
    let len = PROMPT.len() + longest;
    if len > max_positions {
        return Err(Error::Config(format!("{longest} keywords need {len} positions, decoder has {max_positions}")));
    }
    Ok(len)
}

/// Trains a fresh decoder, with its fusion gates and projections, on top of
/// a pretrained encoder. Encoder parameters are frozen unless
/// `cfg.train_encoder` is set.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    train: &[TemporalSample],
    test: &[TemporalSample],
    encoder: &Encoder,
    encoder_store: &ParamStore,
    variant: Variant,
    group: ModalityGroup,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FinetuneResult> {
    cfg.validate()?;
    let steps = train.first().ok_or_else(|| Error::Config("empty training set".into()))?.len();
    if train.iter().chain(test).any(|s| s.len() != steps) {
        return Err(Error::Config("samples of unequal sequence length".into()));
    }
    let vocab = Vocab::new(keyword_vocabulary(train, test))?;
    let model_config =
        ModelConfig { vocab_size: vocab.size(), hidden_dim: encoder.config.output_dim, ..model_config.clone() };
    let plan = build_plan(variant, group, model_config.n_layers, steps)?;
    if plan.encoder_kind != encoder.kind {
        return Err(Error::Config(format!(
            "variant {variant} needs a {} encoder, got {}",
            plan.encoder_kind, encoder.kind
        )));
    }
    let seq_len = sequence_length(&[train, test], model_config.max_positions)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(3);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(4);
    let mut store = encoder_store.clone();
    let decoder = Decoder::new(&model_config, &mut store, &mut init_rng)?;
    store.set_trainable_prefix(PREFIX, cfg.train_encoder);
    if cfg.freeze_gates {
        for id in decoder.fusion.gates() {
            store.set_trainable(id, false);
        }
    }

    let (train_hidden, test_hidden) = if cfg.train_encoder {
        (None, None)
    } else {
        let train_refs: Vec<&TemporalSample> = train.iter().collect();
        let test_refs: Vec<&TemporalSample> = test.iter().collect();
        (
            Some(encoder.hidden_sequences(&store, &train_refs, 64)?),
            Some(encoder.hidden_sequences(&store, &test_refs, 64)?),
        )
    };

    let mut adam = AdamState::new();
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        let model =
            Model { encoder, decoder: &decoder, plan: &plan, vocab: &vocab, seq_len, hidden: train_hidden.as_deref() };
        let mut acc = Accumulator::default();
        let order = shuffled(train.len(), &mut order_rng);
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let refs: Vec<&TemporalSample> = idx.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let (loss, logits, targets) = model.loss(&mut g, &store, &refs, idx)?;
            let lv = g.value(loss).item();
            check_loss("finetune", lv, step)?;
            step_losses.push(lv);
            let [t1, t5] = token_accuracy(g.value(logits), &targets)?;
            acc.add(idx.len(), lv, [t1, t5, 0.0, 0.0]);
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
            retrieval_top1: None,
            retrieval_top5: None,
        });
        if !test.is_empty() {
            let test_model = Model { hidden: test_hidden.as_deref(), ..model };
            let e = evaluate_model(&test_model, &store, test, cfg.batch_size)?;
            metrics.push(EpochMetrics {
                epoch,
                split: Split::Test,
                loss: e.loss,
                top1: Some(e.top1),
                top5: Some(e.top5),
                retrieval_top1: None,
                retrieval_top5: None,
            });
        }
    }
    Ok(FinetuneResult { decoder, plan, vocab, store, metrics, step_losses, seq_len })
}

/// The global keyword vocabulary, then any other keywords in the data, sorted.
fn keyword_vocabulary(train: &[TemporalSample], test: &[TemporalSample]) -> Vec<String> {
    let global = crate::data::MaterialCatalog::vocabulary();
    let mut extra: Vec<String> =
        train.iter().chain(test).flat_map(|s| s.keywords.iter()).filter(|w| !global.contains(w)).cloned().collect();
    extra.sort();
    extra.dedup();
    global.into_iter().chain(extra).collect()
}
