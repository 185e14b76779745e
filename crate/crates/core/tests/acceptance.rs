//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails that is not listed in `KNOWN_FAILING`.
//! A bare argument such as `criterion_8` selects criteria by name.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tembind::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use tembind::checks::{gradient_suite, TOLERANCE};
use tembind::config::RunConfig;
use tembind::data::{
    build_dataset_samples, build_temporal_samples, generate_dataset, read_dataset, split_dataset, write_dataset,
    DataError, Dataset, FramePair, GeneratorConfig, GridSpec, MaterialCatalog, StageMarks, TrajectoryRecord,
};
use tembind::decoder::{Decoder, FusionInput, ModelConfig};
use tembind::encoders::{Encoder, EncoderConfig, EncoderKind, FrameBatch};
use tembind::eval::{retrieval_accuracy, run_ablation, topk_accuracy, AblationConfig, MetricsReport};
use tembind::fusion::{assign_layers, build_plan, Conditioning, ModalityGroup, Variant};
use tembind::run;
use tembind::tensor::{Graph, ParamStore, Tensor};
use tembind::training::{finetune, pretrain, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Encoded = (Vec<Vec<f64>>, Vec<Vec<f64>>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// Runtime ceilings pinned per criterion.
const PARTITION_LIMIT: Duration = Duration::from_secs(1);
const ZERO_INIT_LIMIT: Duration = Duration::from_secs(10);
const GRADIENT_LIMIT: Duration = Duration::from_secs(60);
const ORDERING_LIMIT: Duration = Duration::from_secs(90 * 60);

fn default_records() -> Vec<TrajectoryRecord> {
    let catalog = MaterialCatalog::standard(8).unwrap();
    generate_dataset(&catalog, 200, 12, 0, &GeneratorConfig::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for n in 1..=64 {
        for t in 1..=n {
            let a = assign_layers(n, t).map_err(err)?;
            let blocks = a.blocks();
            ensure!(blocks.len() == t, "n={n} T={t}: {} blocks", blocks.len());
            // Contiguous and disjoint: each block starts where the previous ended,
            // the first at 0 and the last at n.
            let mut next = 0;
            for b in blocks {
                ensure!(b.start == next && b.end > b.start, "n={n} T={t}: block {b:?} after {next}");
                next = b.end;
            }
            ensure!(next == n, "n={n} T={t}: covers {next} layers");
            // Monotone: the step feeding a layer never decreases with depth.
            let steps: Vec<usize> = (0..n).map(|l| a.step_for_layer(l).unwrap()).collect();
            ensure!(steps.windows(2).all(|w| w[0] <= w[1]), "n={n} T={t}: non-monotone");
            ensure!(steps[0] == 1 && steps[n - 1] == t, "n={n} T={t}: endpoints {steps:?}");
            let sizes = a.block_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            ensure!(hi - lo <= 1 && sizes.iter().sum::<usize>() == n, "n={n} T={t}: sizes {sizes:?}");
            cases += 1;
        }
    }
    let a = assign_layers(32, 4).map_err(err)?;
    ensure!(a.blocks() == [0..8, 8..16, 16..24, 24..32], "n=32 T=4 blocks {:?}", a.blocks());
    let elapsed = start.elapsed();
    ensure!(elapsed < PARTITION_LIMIT, "took {elapsed:?}");
    Ok(format!("{cases} (n, T) pairs, 32/4 -> 0..8 8..16 16..24 24..32, {elapsed:.2?}"))
}

fn random_conditioning(g: &mut Graph, rng: &mut ChaCha8Rng, len: usize, batch: usize, dim: usize) -> Conditioning {
    let mut mk = || -> Vec<_> { (0..len).map(|_| g.constant(Tensor::uniform(&[batch, dim], 2.0, rng))).collect() };
    let image = mk();
    let tactile = mk();
    Conditioning { image, tactile }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig { vocab_size: 13, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let decoder = Decoder::new(&config, &mut store, &mut rng).map_err(err)?;
    ensure!(decoder.fusion.gates().all(|id| store.get(id).item() == 0.0), "gates not initialized to 0");
    let steps = 4;
    for case in 0..100 {
        let batch = rng.gen_range(1..=3);
        let seq = rng.gen_range(1..=config.max_positions);
        let tokens: Vec<Vec<usize>> = (0..batch).map(|_| (0..seq).map(|_| rng.gen_range(0..13)).collect()).collect();
        let group = ModalityGroup::ALL[case % 2];
        let mut g = Graph::new();
        let plain = decoder.forward(&mut g, &store, &tokens, None).map_err(err)?;
        let reference = g.value(plain).data().to_vec();
        for variant in Variant::ALL {
            let plan = build_plan(variant, group, config.n_layers, steps).map_err(err)?;
            let cond = random_conditioning(&mut g, &mut rng, plan.conditioning_len, batch, config.hidden_dim);
            let out = decoder
                .forward(&mut g, &store, &tokens, Some(FusionInput { plan: &plan, conditioning: &cond }))
                .map_err(err)?;
            let same = g.value(out).data().iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "case {case}: {variant} {group} logits differ from the unconditioned decoder");
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < ZERO_INIT_LIMIT, "took {elapsed:?}");
    Ok(format!("100 inputs x 3 variants bitwise equal, {elapsed:.2?}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let results = gradient_suite().map_err(err)?;
    let failed: Vec<String> = results.iter().filter(|r| !r.report.passed).map(|r| r.line()).collect();
    ensure!(failed.is_empty(), "{}", failed.join("; "));
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    ensure!(worst <= TOLERANCE, "worst relative error {worst:e}");
    let elapsed = start.elapsed();
    ensure!(elapsed < GRADIENT_LIMIT, "took {elapsed:?}");
    Ok(format!("{} checks, worst relative error {worst:.2e} <= {TOLERANCE:e}, {elapsed:.2?}", results.len()))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = ModelConfig { vocab_size: 13, ..ModelConfig::default() };
    let mut store = ParamStore::new();
    let decoder = Decoder::new(&config, &mut store, &mut rng).map_err(err)?;
    for id in decoder.fusion.gates().collect::<Vec<_>>() {
        store.set(id, Tensor::full(&[1, 1], rng.gen_range(-1.0..1.0))).map_err(err)?;
    }
    let plan = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, config.n_layers, 4).map_err(err)?;
    let seq = config.max_positions;
    let v = config.vocab_size;
    for case in 0..20 {
        let i = rng.gen_range(0..seq - 1);
        let tokens: Vec<usize> = (0..seq).map(|_| rng.gen_range(0..v)).collect();
        let mut changed = tokens.clone();
        for t in changed.iter_mut().skip(i + 1) {
            *t = (*t + rng.gen_range(1..v)) % v;
        }
        let mut g = Graph::new();
        let cond = random_conditioning(&mut g, &mut rng, 4, 1, config.hidden_dim);
        let fusion = Some(FusionInput { plan: &plan, conditioning: &cond });
        let a = decoder.forward(&mut g, &store, &[tokens], fusion).map_err(err)?;
        let b = decoder.forward(&mut g, &store, &[changed], fusion).map_err(err)?;
        let (a, b) = (g.value(a).data(), g.value(b).data());
        let head = (i + 1) * v;
        ensure!(
            a[..head].iter().zip(&b[..head]).all(|(x, y)| x.to_bits() == y.to_bits()),
            "case {case}: logits at positions <= {i} moved"
        );
        ensure!(a[head..] != b[head..], "case {case}: later positions did not react");
    }

    let enc_config = EncoderConfig::default();
    let grid = enc_config.grid;
    let mut store = ParamStore::new();
    let encoder = Encoder::new(&enc_config, EncoderKind::Lstm, &mut store, &mut rng).map_err(err)?;
    let steps = 4;
    let batch = 2;
    let frame = |rng: &mut ChaCha8Rng, t: usize| FramePair {
        visual: (0..grid.visual_len()).map(|_| rng.gen::<f32>()).collect(),
        tactile: (0..grid.tactile_len()).map(|_| rng.gen::<f32>()).collect(),
        time_index: t,
    };
    let frames: Vec<FramePair> = (0..steps * batch).map(|i| frame(&mut rng, i / batch + 1)).collect();
    let encode = |frames: &[FramePair]| -> Result<Encoded, String> {
        let refs: Vec<&FramePair> = frames.iter().collect();
        let fb = FrameBatch::from_frames(&refs, batch, steps, grid).map_err(err)?;
        let mut g = Graph::new();
        let c = encoder.encode(&mut g, &store, &fb).map_err(err)?;
        let read = |vs: &[tembind::tensor::Var]| vs.iter().map(|&v| g.value(v).to_vec()).collect::<Vec<_>>();
        Ok((read(&c.image), read(&c.tactile)))
    };
    let (img, tac) = encode(&frames)?;
    for t in 1..steps {
        let mut changed = frames.clone();
        for b in 0..batch {
            changed[t * batch + b] = frame(&mut rng, t + 1);
        }
        let (img2, tac2) = encode(&changed)?;
        for s in 0..t {
            let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(
                same(&img[s], &img2[s]) && same(&tac[s], &tac2[s]),
                "h^{} moved when frame {} changed",
                s + 1,
                t + 1
            );
        }
        ensure!(img[t] != img2[t] && tac[t] != tac2[t], "h^{} ignored frame {}", t + 1, t + 1);
    }
    Ok(format!("20 decoder cases; LSTM h^1..t fixed under frame t+1 for t=1..{}", steps - 1))
}

fn synthetic_record(id: usize, length: usize, catalog: &MaterialCatalog) -> TrajectoryRecord {
    TrajectoryRecord {
        trajectory_id: id,
        material: catalog.classes()[id % catalog.len()].clone(),
        frames: (1..=length)
            .map(|t| FramePair {
                visual: vec![(t % 7) as f32 / 7.0; 3],
                tactile: vec![(t % 5) as f32 / 5.0],
                time_index: t,
            })
            .collect(),
        stage_marks: StageMarks { contact: 1, slide: 1, withdraw: 1 },
    }
}

fn criterion_5() -> Outcome {
    let catalog = MaterialCatalog::standard(8).map_err(err)?;
    let mut cases = 0;
    for length in 1..=32 {
        let r = synthetic_record(length, length, &catalog);
        for t in 1..=length {
            let samples = build_temporal_samples(&r, t).map_err(err)?;
            ensure!(samples.len() == length - t + 1, "L={length} T={t}: {} samples", samples.len());
            for (i, s) in samples.iter().enumerate() {
                ensure!(s.keywords == r.material.keywords, "L={length} T={t}: keywords differ");
                ensure!(
                    s.source_trajectory == r.trajectory_id && s.window_start == i + 1,
                    "L={length} T={t}: window {i}"
                );
                let idx: Vec<usize> = s.frames.iter().map(|f| f.time_index).collect();
                ensure!(idx == (i + 1..=i + t).collect::<Vec<_>>(), "L={length} T={t}: frames {idx:?}");
            }
            cases += 1;
        }
        ensure!(build_temporal_samples(&r, length + 1).is_err(), "L={length}: T > L accepted");
        ensure!(build_temporal_samples(&r, 0).is_err(), "L={length}: T = 0 accepted");
    }
    Ok(format!("{cases} (L, T) pairs"))
}

/// Position of `target` after a stable sort by descending value.
fn oracle_rank(row: &[f64], target: usize) -> usize {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
    idx.iter().position(|&i| i == target).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut compared = 0;
    for case in 0..1000 {
        let k_classes = rng.gen_range(1..=6);
        let b = rng.gen_range(1..=6);
        // Coarse values make ties common.
        let value = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(-2i32..=2)) * 0.5;
        let logits: Vec<f64> = (0..b * k_classes).map(|_| value(&mut rng)).collect();
        let logits = Tensor::matrix(b, k_classes, logits);
        let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k_classes)).collect();
        for k in 1..=k_classes {
            let hits = (0..b).filter(|&r| oracle_rank(logits.row(r), targets[r]) < k).count();
            let want = 100.0 * hits as f64 / b as f64;
            let got = topk_accuracy(&logits, &targets, k).map_err(err)?;
            ensure!(got == want, "case {case}: top-{k} {got} vs oracle {want}");
            compared += 1;
        }
        if k_classes >= 5 {
            let (t1, t5) =
                (topk_accuracy(&logits, &targets, 1).map_err(err)?, topk_accuracy(&logits, &targets, 5).map_err(err)?);
            ensure!(t1 <= t5, "case {case}: top-1 {t1} > top-5 {t5}");
        }
        let sim: Vec<f64> = (0..b * b).map(|_| value(&mut rng)).collect();
        let sim = Tensor::matrix(b, b, sim);
        for k in 1..=b + 1 {
            let hits = (0..b).filter(|&r| oracle_rank(sim.row(r), r) < k).count();
            let want = 100.0 * hits as f64 / b as f64;
            let got = retrieval_accuracy(&sim, k).map_err(err)?;
            ensure!(got == want, "case {case}: retrieval top-{k} {got} vs oracle {want}");
            compared += 1;
        }
    }
    Ok(format!("1000 instances, {compared} (instance, k) comparisons; every report is validated for top-1 <= top-5"))
}

fn criterion_7() -> Outcome {
    for n in 1..=64 {
        let even = build_plan(Variant::Even, ModalityGroup::TactileAndVision, n, 1).map_err(err)?;
        let aware = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, n, 1).map_err(err)?;
        ensure!(even.layer_map == aware.layer_map, "n={n}: maps differ");
        ensure!(even.conditioning_len == aware.conditioning_len, "n={n}: conditioning lengths differ");
    }
    let records = default_records();
    let samples = build_dataset_samples(&records, 1).map_err(err)?;
    let (train, test) = split_dataset(&samples, 0.1, 0).map_err(err)?;
    let enc = pretrain(
        &train,
        &test,
        &EncoderConfig::default(),
        EncoderKind::Lstm,
        &TrainConfig { max_steps: Some(20), ..TrainConfig::pretrain() },
    )
    .map_err(err)?;
    let cfg = TrainConfig { max_steps: Some(5), ..TrainConfig::finetune() };
    let run = |v| {
        finetune(
            &train,
            &[],
            &enc.encoder,
            &enc.store,
            v,
            ModalityGroup::TactileAndVision,
            &ModelConfig::default(),
            &cfg,
        )
    };
    let (even, aware) = (run(Variant::Even).map_err(err)?, run(Variant::Aware).map_err(err)?);
    ensure!(even.step_losses.len() == 5, "{} steps", even.step_losses.len());
    let same = even.step_losses.iter().zip(&aware.step_losses).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(same, "losses differ: {:?} vs {:?}", even.step_losses, aware.step_losses);
    Ok(format!("plans equal for n=1..64; 5-step losses identical {:?}", even.step_losses))
}

/// Configuration of the ordering run: the library defaults, unchanged.
fn ordering_config() -> AblationConfig {
    AblationConfig::default()
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let records = default_records();
    let report = run_ablation(&records, &[0, 1, 2], &ordering_config()).map_err(err)?;
    report.validate().map_err(err)?;
    print_report(&report);
    let elapsed = start.elapsed();
    let failed: Vec<String> = report.orderings().iter().filter(|o| !o.holds).map(|o| o.key.to_string()).collect();
    ensure!(elapsed < ORDERING_LIMIT, "took {elapsed:?}");
    ensure!(failed.is_empty(), "orderings not reproduced: {}", failed.join(", "));
    Ok(format!("3 seeds, all orderings hold, {elapsed:.0?}"))
}

fn print_report(report: &MetricsReport) {
    for line in report.to_text().lines().filter(|l| l.contains(".mean=") || l.starts_with("ordering.")) {
        println!("    {line}");
    }
}

fn determinism_config() -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [("trajectories", "40"), ("pretrain_epochs", "2"), ("finetune_epochs", "2")] {
        c.set(k, v).unwrap();
    }
    c
}

fn read_all(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for name in [run::CONFIG_FILE, run::REPORT_TEXT, run::REPORT_CSV, run::REPORT_SVG] {
        out.push((name.to_string(), fs::read(dir.join(name)).map_err(err)?));
    }
    Ok(out)
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = determinism_config();
    let data = dir.path().join("data");
    run::gen_data(&cfg, &data).map_err(err)?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run::ablate(&data, &[0], 1, &cfg, &a).map_err(err)?;
    run::ablate(&data, &[0], 2, &cfg, &b).map_err(err)?;
    let (fa, fb) = (read_all(&a)?, read_all(&b)?);
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        ensure!(x == y, "{name} differs between repeats");
    }
    // Rerunning into the same directory rewrites identical bytes.
    run::ablate(&data, &[0], 1, &cfg, &a).map_err(err)?;
    ensure!(read_all(&a)? == fa, "rerun in place changed the reports");
    Ok(format!("{} report files byte-identical across 3 runs (jobs 1 and 2)", fa.len()))
}

fn expect_blob(r: Result<impl std::fmt::Debug, DataError>, file: &str, offset: u64) -> Result<(), String> {
    match r {
        Err(DataError::Blob { file: f, offset: o, .. }) if f.ends_with(file) && o == offset => Ok(()),
        other => Err(format!("expected blob error in {file} at {offset}, got {other:?}")),
    }
}

fn expect_line(r: Result<impl std::fmt::Debug, DataError>, file: &str, line: usize) -> Result<(), String> {
    match r {
        Err(DataError::Manifest { file: f, line: l, .. }) if f.ends_with(file) && l == line => Ok(()),
        other => Err(format!("expected manifest error in {file} line {line}, got {other:?}")),
    }
}

fn edit(path: &Path, f: impl FnOnce(&mut Vec<u8>)) -> Result<Vec<u8>, String> {
    let original = fs::read(path).map_err(err)?;
    let mut bytes = original.clone();
    f(&mut bytes);
    fs::write(path, bytes).map_err(err)?;
    Ok(original)
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    let catalog = MaterialCatalog::standard(8).map_err(err)?;
    let records = generate_dataset(&catalog, 20, 12, 3, &GeneratorConfig::default()).map_err(err)?;
    let ds = Dataset { grid: GridSpec::default(), catalog, records };
    write_dataset(&ds, &d1).map_err(err)?;
    let back = read_dataset(&d1).map_err(err)?;
    ensure!(back == ds, "dataset changed in round trip");
    write_dataset(&back, &d2).map_err(err)?;
    for name in ["manifest.txt", "frames.bin", "vocab.txt"] {
        ensure!(fs::read(d1.join(name)).map_err(err)? == fs::read(d2.join(name)).map_err(err)?, "{name} bytes differ");
    }

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    Encoder::new(&EncoderConfig::default(), EncoderKind::Lstm, &mut store, &mut rng).map_err(err)?;
    let ck = Checkpoint::new(store).with_meta("stage", "pretrain");
    let (c1, c2) = (dir.path().join("c1"), dir.path().join("c2"));
    write_checkpoint(&ck, &c1).map_err(err)?;
    let cback = read_checkpoint(&c1).map_err(err)?;
    ensure!(cback == ck, "checkpoint changed in round trip");
    write_checkpoint(&cback, &c2).map_err(err)?;
    for name in ["checkpoint.txt", "params.bin"] {
        ensure!(fs::read(c1.join(name)).map_err(err)? == fs::read(c2.join(name)).map_err(err)?, "{name} bytes differ");
    }

    // Corruptions: each must name the file and the offset or line.
    let frame_bytes = 12 * (64 * 3 + 64) * 4;
    let frames = d1.join("frames.bin");
    let orig = edit(&frames, |b| b[frame_bytes + 5] ^= 0x10)?;
    expect_blob(read_dataset(&d1), "frames.bin", frame_bytes as u64)?;
    fs::write(&frames, &orig[..orig.len() - 3]).map_err(err)?;
    expect_blob(read_dataset(&d1), "frames.bin", (orig.len() - 3) as u64)?;
    fs::write(&frames, &orig).map_err(err)?;
    let manifest = d1.join("manifest.txt");
    let morig = edit(&manifest, |b| b[0] = b'X')?;
    expect_line(read_dataset(&d1), "manifest.txt", 1)?;
    fs::write(&manifest, &morig).map_err(err)?;

    let params = c1.join("params.bin");
    let first_len = ck.store.iter().next().map(|(_, _, t)| t.numel() * 8).unwrap();
    edit(&params, |b| b[first_len + 1] ^= 0x01)?;
    expect_blob(read_checkpoint(&c1), "params.bin", first_len as u64)?;
    let text = fs::read_to_string(c1.join("checkpoint.txt")).map_err(err)?;
    fs::write(c1.join("checkpoint.txt"), text.replacen("params ", "params x", 1)).map_err(err)?;
    let params_line = text.lines().position(|l| l.starts_with("params ")).unwrap() + 1;
    expect_line(read_checkpoint(&c1), "checkpoint.txt", params_line)?;
    Ok(format!(
        "{} trajectories and {} parameters round-trip byte-exact; 5 corruptions located",
        ds.records.len(),
        ck.store.len()
    ))
}

/// Criteria that run in full and print FAIL, but do not fail the target.
/// Each entry names the criterion and the reason; the README section
/// "Known result" has the measured numbers.
const KNOWN_FAILING: &[(&str, &str)] =
    &[("criterion_8", "tactile-only Aware does not beat Base on every seed at default settings")];

fn known_failure(name: &str) -> Option<&'static str> {
    KNOWN_FAILING.iter().find(|(k, _)| name.split(' ').next() == Some(*k)).map(|(_, why)| *why)
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("criterion_1 partition", criterion_1),
        ("criterion_2 zero-init identity", criterion_2),
        ("criterion_3 gradient suite", criterion_3),
        ("criterion_4 causality", criterion_4),
        ("criterion_5 window formula", criterion_5),
        ("criterion_6 metric oracles", criterion_6),
        ("criterion_7 T=1 degeneracy", criterion_7),
        ("criterion_8 ordering reproduction", criterion_8),
        ("criterion_9 determinism", criterion_9),
        ("criterion_10 round-trip", criterion_10),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: BTreeSet<usize> = (0..criteria.len())
        .filter(|&i| filters.is_empty() || filters.iter().any(|f| criteria[i].0.contains(f.as_str())))
        .collect();
    if std::env::args().any(|a| a == "--list") {
        for &i in &selected {
            println!("{}: test", criteria[i].0.split(' ').next().unwrap());
        }
        return;
    }
    let mut failures = 0;
    let mut known = 0;
    for &i in &selected {
        let (name, f) = criteria[i];
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                println!("PASS {name}: {detail} ({secs:.1}s)");
                if known_failure(name).is_some() {
                    println!("    note: listed in KNOWN_FAILING but passed; remove the entry");
                }
            }
            Err(detail) => match known_failure(name) {
                Some(why) => {
                    known += 1;
                    println!("FAIL {name}: {detail} ({secs:.1}s) [known failure: {why}]");
                }
                None => {
                    failures += 1;
                    println!("FAIL {name}: {detail} ({secs:.1}s)");
                }
            },
        }
    }
    println!(
        "acceptance: {} passed, {} failed ({known} known, {failures} unexpected)",
        selected.len() - failures - known,
        failures + known
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
