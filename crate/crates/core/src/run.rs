//! The commands behind the `tembind` binary. Each writes its artifacts and
//! the effective `config.txt` into `out_dir`; reruns with the same inputs
//! overwrite them with identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::data::io::io_err;
use crate::data::{
    build_dataset_samples, generate_dataset, read_dataset, split_dataset, write_dataset, Dataset, MaterialCatalog,
    TemporalSample,
};
use crate::decoder::{Decoder, ModelConfig, Vocab};
use crate::encoders::Encoder;
use crate::error::Error;
use crate::eval::{evaluate_keywords, run_ablation, MetricsReport};
use crate::fusion::{build_plan, ModalityGroup, Variant};
use crate::training::{
    evaluate_finetune, finetune as train_finetune, metrics_csv, pretrain as train_pretrain, FinetuneResult,
};
use crate::Result;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.txt";
pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_SVG: &str = "report.svg";

const CONFIG_PREFIX: &str = "config.";

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(io_err(&p))?;
    Ok(())
}

fn prepare(out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(out_dir, CONFIG_FILE, &cfg.to_text())
}

fn attach_config(mut ckpt: Checkpoint, cfg: &RunConfig) -> Checkpoint {
    for line in cfg.to_text().lines() {
        let (k, v) = line.split_once('=').expect("echo lines are key=value");
        ckpt.meta.insert(format!("{CONFIG_PREFIX}{k}"), v.to_string());
    }
    ckpt
}

fn stored_config(ckpt: &Checkpoint) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in &ckpt.meta {
        if let Some(key) = k.strip_prefix(CONFIG_PREFIX) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Reads a dataset and checks it matches the configured grid and class count.
fn load_data(data_dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let ds = read_dataset(data_dir)?;
    if ds.grid != cfg.grid() || ds.catalog.len() != cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset is {}x{} with {} classes; configuration expects {}x{} with {}",
            ds.grid.height,
            ds.grid.width,
            ds.catalog.len(),
            cfg.grid_height,
            cfg.grid_width,
            cfg.num_classes
        )));
    }
    Ok(ds)
}

fn split(ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<(Vec<TemporalSample>, Vec<TemporalSample>)> {
    let samples = build_dataset_samples(&ds.records, cfg.steps)?;
    Ok(split_dataset(&samples, cfg.test_fraction, seed)?)
}

pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let catalog = MaterialCatalog::standard(cfg.num_classes)?;
    let records = generate_dataset(&catalog, cfg.trajectories, cfg.trajectory_length, cfg.data_seed, &cfg.generator())?;
    write_dataset(&Dataset { grid: cfg.grid(), catalog, records }, out_dir)?;
    write(out_dir, CONFIG_FILE, &cfg.to_text())
}

/// Trains the configured encoder kind and writes its checkpoint and metrics.
pub fn pretrain(data_dir: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let ds = load_data(data_dir, cfg)?;
    let (train, test) = split(&ds, cfg, seed)?;
    let r = train_pretrain(&train, &test, &cfg.encoder_config(), cfg.encoder_kind, &cfg.pretrain_config(seed))?;
    prepare(out_dir, cfg)?;
    let ckpt = attach_config(Checkpoint::new(r.store), cfg).with_meta("stage", "pretrain");
    write_checkpoint(&ckpt, out_dir)?;
    write(out_dir, METRICS_FILE, &metrics_csv(&r.metrics))
}

fn load_encoder(ckpt: &Checkpoint) -> Result<(Encoder, RunConfig)> {
    let stored = stored_config(ckpt)?;
    let kind = stored.encoder_kind;
    Ok((Encoder::bind(&stored.encoder_config(), kind, &ckpt.store)?, stored))
}

/// Finetunes a decoder for `variant`/`group` on top of a pretrained encoder
/// checkpoint. Encoder dimensions come from the checkpoint.
pub fn finetune(
    data_dir: &Path,
    encoder_dir: &Path,
    variant: Variant,
    group: ModalityGroup,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let enc_ckpt = read_checkpoint(encoder_dir)?;
    if enc_ckpt.meta("stage")? != "pretrain" {
        return Err(Error::Config(format!("{} is not a pretrained encoder checkpoint", encoder_dir.display())));
    }
    let (encoder, stored) = load_encoder(&enc_ckpt)?;
    if stored.encoder_config() != cfg.encoder_config() || stored.encoder_kind != cfg.encoder_kind {
        return Err(Error::Config("encoder settings differ from the pretrained checkpoint".into()));
    }
    let ds = load_data(data_dir, cfg)?;
    let (train, test) = split(&ds, cfg, seed)?;
    let r = train_finetune(
        &train,
        &test,
        &encoder,
        &enc_ckpt.store,
        variant,
        group,
        &cfg.model_config(),
        &cfg.finetune_config(seed),
    )?;
    prepare(out_dir, cfg)?;
    let ckpt = attach_config(Checkpoint::new(r.store), cfg)
        .with_meta("stage", "finetune")
        .with_meta("variant", variant.name())
        .with_meta("group", group.name())
        .with_meta("seq_len", r.seq_len.to_string())
        .with_meta("vocab", r.vocab.keywords().join(","));
    write_checkpoint(&ckpt, out_dir)?;
    write(out_dir, METRICS_FILE, &metrics_csv(&r.metrics))
}

/// Scores a finetuned checkpoint on the held-out split of its own seed.
pub fn eval(data_dir: &Path, ckpt_dir: &Path, out_dir: &Path) -> Result<()> {
    let ckpt = read_checkpoint(ckpt_dir)?;
    if ckpt.meta("stage")? != "finetune" {
        return Err(Error::Config(format!("{} is not a finetuned checkpoint", ckpt_dir.display())));
    }
    let (encoder, cfg) = load_encoder(&ckpt)?;
    let seed = cfg.require_seed()?;
    let variant: Variant = ckpt.meta("variant")?.parse()?;
    let group: ModalityGroup = ckpt.meta("group")?.parse()?;
    let vocab = Vocab::new(ckpt.meta("vocab")?.split(',').map(String::from).collect())?;
    let seq_len: usize =
        ckpt.meta("seq_len")?.parse().map_err(|_| Error::Config("checkpoint seq_len is not an integer".into()))?;
    let model = ModelConfig { vocab_size: vocab.size(), ..cfg.model_config() };
    let ds = load_data(data_dir, &cfg)?;
    let (_, test) = split(&ds, &cfg, seed)?;
    let result = FinetuneResult {
        decoder: Decoder::bind(&model, &ckpt.store)?,
        plan: build_plan(variant, group, model.n_layers, cfg.steps)?,
        vocab,
        store: ckpt.store,
        metrics: Vec::new(),
        step_losses: Vec::new(),
        seq_len,
    };
    let loss = evaluate_finetune(&result, &encoder, &test, cfg.batch_size)?;
    let kw = evaluate_keywords(&result, &encoder, &test, cfg.batch_size)?;
    if loss.top1 > loss.top5 {
        return Err(Error::Invariant(format!("top-1 {} exceeds top-5 {}", loss.top1, loss.top5)));
    }
    prepare(out_dir, &cfg)?;
    let mut text = String::new();
    let _ = writeln!(text, "variant={variant}\ngroup={group}\nsamples={}", test.len());
    let _ = writeln!(text, "test_loss={:.6}\ntoken_top1={:.4}\ntoken_top5={:.4}", loss.loss, loss.top1, loss.top5);
    let _ = writeln!(text, "keyword_score={:.4}\nnonempty={:.4}", kw.score, kw.nonempty);
    write(out_dir, EVAL_FILE, &text)?;
    let preds: String = test
        .iter()
        .zip(&kw.predictions)
        .map(|(s, p)| format!("{} {} | {}\n", s.sample_id, p.join(","), s.keywords.join(",")))
        .collect();
    write(out_dir, PREDICTIONS_FILE, &preds)
}

/// Runs the six-cell ablation grid for every seed and writes the reports.
pub fn ablate(data_dir: &Path, seeds: &[u64], jobs: usize, cfg: &RunConfig, out_dir: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let ds = load_data(data_dir, cfg)?;
    let report = run_ablation(&ds.records, seeds, &cfg.ablation_config(jobs))?;
    prepare(out_dir, cfg)?;
    write(out_dir, REPORT_TEXT, &report.to_text())?;
    write(out_dir, REPORT_CSV, &report.to_csv())?;
    write(out_dir, REPORT_SVG, &report.to_svg())?;
    Ok(report)
}

/// Parses `0,1,2`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = text
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("invalid seed `{s}`"))))
        .collect::<Result<_>>()?;
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Config(format!("repeated seed in `{text}`")));
    }
    Ok(seeds)
}
