use rayon::prelude::*;

use super::keyword_score;
use super::report::{CellOutcome, CellResult, MetricsReport, PretrainOutcome, PretrainRow};
use crate::data::{build_dataset_samples, split_dataset, TemporalSample, TrajectoryRecord};
use crate::decoder::ModelConfig;
use crate::encoders::{Encoder, EncoderConfig, EncoderKind, HiddenSequence};
use crate::error::Error;
use crate::fusion::{ModalityGroup, Variant};
use crate::training::{
    evaluate_finetune, evaluate_pretrain, finetune, pretrain, FinetuneResult, PretrainResult, TrainConfig,
};
use crate::Result;

/// Settings shared by every run of the ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Temporal sequence length `T`.
    pub steps: usize,
    pub test_fraction: f64,
    /// Worker threads for the finetune cells of one seed.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            steps: 4,
            test_fraction: 0.1,
            jobs: 1,
        }
    }
}

impl AblationConfig {
    /// Stable `key=value` lines; the report fingerprint hashes this text.
    pub fn describe(&self) -> String {
        let e = &self.encoder;
        let m = &self.model;
        let t = |p: &str, c: &TrainConfig| {
            format!(
                "{p}.epochs={}\n{p}.batch_size={}\n{p}.learning_rate={}\n{p}.clip_norm={}\n{p}.train_encoder={}\n{p}.freeze_gates={}\n",
                c.epochs, c.batch_size, c.learning_rate, c.clip_norm, c.train_encoder, c.freeze_gates
            )
        };
        format!(
            "grid={}x{}\nfeature_dim={}\nframe_hidden={}\nlstm_hidden={}\nlstm_layers={}\nhidden_dim={}\nnum_classes={}\ntemperature={}\ncontrastive_weight={}\nn_layers={}\nwidth={}\nheads={}\nffn_hidden={}\nmax_positions={}\nT={}\ntest_fraction={}\n{}{}",
            e.grid.height,
            e.grid.width,
            e.feature_dim,
            e.frame_hidden,
            e.lstm_hidden,
            e.lstm_layers,
            e.output_dim,
            e.num_classes,
            e.temperature,
            e.contrastive_weight,
            m.n_layers,
            m.width,
            m.heads,
            m.ffn_hidden,
            m.max_positions,
            self.steps,
            self.test_fraction,
            t("pretrain", &self.pretrain),
            t("finetune", &self.finetune),
        )
    }

    pub fn fingerprint(&self) -> String {
        format!("{:08x}", crc32fast::hash(self.describe().as_bytes()))
    }
}

/// Keyword predictions of a finetuned model on a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct KeywordEval {
    /// Mean keyword score in `[0, 5]`.
    pub score: f64,
    /// Fraction of samples with at least one predicted keyword.
    pub nonempty: f64,
    pub predictions: Vec<Vec<String>>,
}

/// Greedy generation for every sample, scored against its keyword labels.
pub fn evaluate_keywords(
    result: &FinetuneResult,
    encoder: &Encoder,
    samples: &[TemporalSample],
    batch_size: usize,
) -> Result<KeywordEval> {
    if samples.is_empty() {
        return Err(Error::Invariant("no samples to evaluate".into()));
    }
    let refs: Vec<&TemporalSample> = samples.iter().collect();
    let hidden = encoder.hidden_sequences(&result.store, &refs, 64)?;
    let max_len = result.decoder.config.max_positions;
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in hidden.chunks(batch_size.max(1)) {
        let h: Vec<&HiddenSequence> = chunk.iter().collect();
        for tokens in result.decoder.generate(&result.store, Some(&result.plan), &h, h.len(), max_len)? {
            predictions.push(result.vocab.decode(&tokens));
        }
    }
    let mut total = 0.0;
    for (p, s) in predictions.iter().zip(samples) {
        total += keyword_score(p, &s.keywords)?;
    }
    let nonempty = predictions.iter().filter(|p| !p.is_empty()).count();
    Ok(KeywordEval {
        score: total / samples.len() as f64,
        nonempty: nonempty as f64 / samples.len() as f64,
        predictions,
    })
}

fn pretrain_row(
    kind: EncoderKind,
    seed: u64,
    r: &Result<PretrainResult>,
    test: &[TemporalSample],
    batch: usize,
) -> PretrainRow {
    let outcome = match r {
        Ok(p) => match evaluate_pretrain(&p.encoder, &p.store, test, batch) {
            Ok(e) => PretrainOutcome::Done(e),
            Err(e) => PretrainOutcome::Failed(e.to_string()),
        },
        Err(e) => PretrainOutcome::Failed(e.to_string()),
    };
    PretrainRow { kind, seed, outcome }
}

fn run_cell(
    variant: Variant,
    group: ModalityGroup,
    seed: u64,
    pre: &Result<PretrainResult>,
    train: &[TemporalSample],
    test: &[TemporalSample],
    cfg: &AblationConfig,
) -> CellResult {
    let outcome = (|| -> Result<CellOutcome> {
        let p = pre.as_ref().map_err(|e| Error::Invariant(format!("pretraining failed: {e}")))?;
        let ft = TrainConfig { seed, ..cfg.finetune.clone() };
        let r = finetune(train, test, &p.encoder, &p.store, variant, group, &cfg.model, &ft)?;
        let loss = evaluate_finetune(&r, &p.encoder, test, ft.batch_size)?;
        let kw = evaluate_keywords(&r, &p.encoder, test, ft.batch_size)?;
        Ok(CellOutcome::Done { score: kw.score, nonempty: kw.nonempty, test_loss: loss.loss })
    })()
    .unwrap_or_else(|e| CellOutcome::Failed(e.to_string()));
    CellResult { variant, group, seed, outcome }
}

/// Runs one seed of the grid: both encoders, then all six finetune cells.
fn run_seed(
    records: &[TrajectoryRecord],
    seed: u64,
    cfg: &AblationConfig,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<PretrainRow>, Vec<CellResult>)> {
    let samples = build_dataset_samples(records, cfg.steps)?;
    let (train, test) = split_dataset(&samples, cfg.test_fraction, seed)?;
    let pt = TrainConfig { seed, ..cfg.pretrain.clone() };
    let kinds = [EncoderKind::Lstm, EncoderKind::SingleFrame];
    let pre: Vec<Result<PretrainResult>> =
        pool.install(|| kinds.par_iter().map(|&k| pretrain(&train, &test, &cfg.encoder, k, &pt)).collect());
    let rows = kinds.iter().zip(&pre).map(|(&k, r)| pretrain_row(k, seed, r, &test, pt.batch_size)).collect();
    let grid: Vec<(Variant, ModalityGroup)> =
        Variant::ALL.into_iter().flat_map(|v| ModalityGroup::ALL.into_iter().map(move |g| (v, g))).collect();
    let cells = pool.install(|| {
        grid.par_iter()
            .map(|&(v, g)| {
                let p = if v == Variant::Base { &pre[1] } else { &pre[0] };
                run_cell(v, g, seed, p, &train, &test, cfg)
            })
            .collect()
    });
    Ok((rows, cells))
}

/// Pretrains both encoders and finetunes all (variant, group) cells for
/// every seed, evaluating on each seed's held-out trajectories. A failed run
/// is recorded in its cell; the others proceed.
pub fn run_ablation(records: &[TrajectoryRecord], seeds: &[u64], cfg: &AblationConfig) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut pretrain_rows = Vec::new();
    let mut cells = Vec::new();
    for &seed in seeds {
        let (p, c) = run_seed(records, seed, cfg, &pool)?;
        pretrain_rows.extend(p);
        cells.extend(c);
    }
    let report =
        MetricsReport { seeds: seeds.to_vec(), fingerprint: cfg.fingerprint(), pretrain: pretrain_rows, cells };
    report.validate()?;
    Ok(report)
}
