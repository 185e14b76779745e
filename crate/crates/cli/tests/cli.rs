use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
grid_height=4
grid_width=4
num_classes=4
trajectories=12
trajectory_length=8
steps=2
test_fraction=0.25
feature_dim=8
frame_hidden=8
lstm_hidden=8
hidden_dim=8
n_layers=2
width=16
heads=2
ffn_hidden=16
pretrain_epochs=1
finetune_epochs=1
";

fn tembind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tembind")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tembind(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line.
fn err(args: &[&str]) -> (i32, String) {
    let out = tembind(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    (out.status.code().unwrap(), stderr)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn plan_prints_four_blocks_of_eight() {
    let out = ok(&["plan", "--n-layers", "32", "--t", "4"]);
    let rows: Vec<&str> = out.lines().skip_while(|l| !l.starts_with("block")).skip(1).collect();
    assert_eq!(rows, ["1      0..7    h^1", "2      8..15   h^2", "3      16..23  h^3", "4      24..31  h^4"]);
}

#[test]
fn gradcheck_passes_every_line() {
    let out = ok(&["gradcheck"]);
    assert!(out.lines().count() >= 25);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn usage_errors_exit_one_on_a_single_line() {
    assert_eq!(err(&["plan", "--t", "0"]).0, 1);
    assert_eq!(err(&["frobnicate"]).0, 1);
    assert_eq!(err(&["gen-data", "--out", "x", "--no-such-key", "3"]).0, 1);
    let (code, line) = err(&["gen-data", "--out", "x", "--steps", "many"]);
    assert_eq!(code, 1);
    assert!(line.starts_with("error kind=usage code=1:"), "{line}");
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, line) = err(&["pretrain", "--data", s(&dir.path().join("none")), "--out", s(dir.path()), "--seed", "0"]);
    assert_eq!(code, 2, "{line}");
    assert!(line.contains("manifest.txt"));
}

#[test]
fn config_file_keys_are_checked_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "steps=3\nbogus=1\n").unwrap();
    let (code, line) = err(&["gen-data", "--out", s(&dir.path().join("d")), "--config", s(&cfg)]);
    assert_eq!(code, 1);
    assert!(line.contains("line 2") && line.contains("bogus"), "{line}");

    fs::write(&cfg, format!("{SMALL}data_seed=4\n")).unwrap();
    let data = dir.path().join("d");
    ok(&["gen-data", "--out", s(&data), "--config", s(&cfg), "--data-seed", "5"]);
    let echo = fs::read_to_string(data.join("config.txt")).unwrap();
    assert!(echo.contains("data_seed=5\n") && echo.contains("grid_height=4\n"), "{echo}");
}

#[test]
fn seed_is_required_for_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", s(&data), "--config", s(&cfg)]);
    let (code, line) = err(&["pretrain", "--data", s(&data), "--out", s(&dir.path().join("p")), "--config", s(&cfg)]);
    assert_eq!(code, 1);
    assert!(line.contains("seed"), "{line}");
}

#[test]
fn pipeline_is_idempotent_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let (data, enc, ft, ev) =
        (dir.path().join("data"), dir.path().join("enc"), dir.path().join("ft"), dir.path().join("eval"));
    let c = s(&cfg);
    let steps: [Vec<&str>; 4] = [
        vec!["gen-data", "--out", s(&data), "--config", c],
        vec!["pretrain", "--data", s(&data), "--out", s(&enc), "--config", c, "--seed", "3"],
        vec![
            "finetune",
            "--data",
            s(&data),
            "--encoder",
            s(&enc),
            "--variant",
            "aware",
            "--group",
            "tactile_only",
            "--out",
            s(&ft),
            "--config",
            c,
            "--seed",
            "3",
        ],
        vec!["eval", "--data", s(&data), "--ckpt", s(&ft), "--out", s(&ev)],
    ];
    let mut first = Vec::new();
    for args in &steps {
        ok(args);
    }
    for d in [&data, &enc, &ft, &ev] {
        assert!(d.join("config.txt").exists(), "{}", d.display());
        first.push(files(d));
    }
    for args in &steps {
        ok(args);
    }
    let second: Vec<_> = [&data, &enc, &ft, &ev].iter().map(|d| files(d)).collect();
    assert_eq!(first, second);

    let eval = fs::read_to_string(ev.join("eval.txt")).unwrap();
    for key in ["test_loss=", "token_top1=", "token_top5=", "keyword_score=", "nonempty="] {
        assert!(eval.contains(key), "{eval}");
    }
    assert!(fs::read_to_string(ev.join("config.txt")).unwrap().contains("seed=3\n"));
    let metrics = fs::read_to_string(enc.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,loss,top1,top5,retrieval_top1,retrieval_top5\n"));

    // Base needs a single-frame encoder.
    let (code, _) = err(&[
        "finetune",
        "--data",
        s(&data),
        "--encoder",
        s(&enc),
        "--variant",
        "base",
        "--group",
        "tactile_only",
        "--out",
        s(&dir.path().join("bad")),
        "--config",
        c,
        "--seed",
        "3",
    ]);
    assert_eq!(code, 1);
    // A finetuned checkpoint is not an encoder.
    let (code, _) = err(&[
        "finetune",
        "--data",
        s(&data),
        "--encoder",
        s(&ft),
        "--variant",
        "aware",
        "--group",
        "tactile_only",
        "--out",
        s(&dir.path().join("bad")),
        "--config",
        c,
        "--seed",
        "3",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn corrupted_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let (data, enc) = (dir.path().join("data"), dir.path().join("enc"));
    ok(&["gen-data", "--out", s(&data), "--config", s(&cfg)]);
    ok(&["pretrain", "--data", s(&data), "--out", s(&enc), "--config", s(&cfg), "--seed", "0"]);
    let blob = enc.join("params.bin");
    let mut b = fs::read(&blob).unwrap();
    b[17] ^= 0x40;
    fs::write(&blob, b).unwrap();
    let (code, line) = err(&[
        "finetune",
        "--data",
        s(&data),
        "--encoder",
        s(&enc),
        "--variant",
        "even",
        "--group",
        "tactile_only",
        "--out",
        s(&dir.path().join("ft")),
        "--config",
        s(&cfg),
        "--seed",
        "0",
    ]);
    assert_eq!(code, 2);
    assert!(line.contains("params.bin: offset 0: checksum mismatch"), "{line}");
}

#[test]
fn ablate_writes_reports_and_ordering_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("ablate"));
    ok(&["gen-data", "--out", s(&data), "--config", s(&cfg)]);
    let stdout =
        ok(&["ablate", "--data", s(&data), "--seeds", "0", "--jobs", "2", "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(stdout.lines().count(), 6, "{stdout}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("finetune,")).count(), 6);
    assert!(out.join("report.svg").exists() && out.join("report.txt").exists());
    assert_eq!(err(&["ablate", "--data", s(&data), "--seeds", "0,0", "--out", s(&out)]).0, 1);
}
