use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, ArgMatches, Command};
use tembind::config::RunConfig;
use tembind::fusion::{build_plan, ModalityGroup, Variant};
use tembind::{checks, run, Error, Result};

fn config_args() -> Vec<Arg> {
    let mut args =
        vec![Arg::new("config").long("config").value_name("FILE").help("key=value file applied before flags")];
    for key in RunConfig::KEYS {
        args.push(Arg::new(*key).long(key.replace('_', "-")).value_name("VALUE").help(format!("override `{key}`")));
    }
    args
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("DIR").required(true).value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn cli() -> Command {
    Command::new("tembind")
        .about("Temporal binding of tactile/visual encoders into a causal decoder")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .subcommand(
            Command::new("gen-data")
                .about("Generate the synthetic tactile/visual dataset")
                .arg(path_arg("out", "output dataset directory"))
                .args(config_args()),
        )
        .subcommand(
            Command::new("pretrain")
                .about("Stage 1: train a sequence encoder")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("out", "output directory"))
                .args(config_args()),
        )
        .subcommand(
            Command::new("finetune")
                .about("Stage 2: train the decoder with fused encoder states")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("encoder", "pretrained encoder directory"))
                .arg(Arg::new("variant").long("variant").required(true).help("base, even or aware"))
                .arg(Arg::new("group").long("group").required(true).help("tactile_and_vision or tactile_only"))
                .arg(path_arg("out", "output directory"))
                .args(config_args()),
        )
        .subcommand(
            Command::new("eval")
                .about("Score a finetuned checkpoint on its held-out split")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("ckpt", "finetuned checkpoint directory"))
                .arg(path_arg("out", "output directory")),
        )
        .subcommand(
            Command::new("ablate")
                .about("Run the variant x modality-group grid over several seeds")
                .arg(path_arg("data", "dataset directory"))
                .arg(Arg::new("seeds").long("seeds").required(true).help("comma-separated seeds"))
                .arg(
                    Arg::new("jobs")
                        .long("jobs")
                        .default_value("1")
                        .value_parser(clap::value_parser!(usize))
                        .help("parallel runs per seed"),
                )
                .arg(path_arg("out", "output directory"))
                .args(config_args()),
        )
        .subcommand(Command::new("gradcheck").about("Finite-difference check of every differentiable operation"))
        .subcommand(
            Command::new("plan")
                .about("Print the layer-assignment table")
                .arg(Arg::new("n-layers").long("n-layers").default_value("32").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("t").long("t").required(true).value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("variant").long("variant").default_value("aware"))
                .arg(Arg::new("group").long("group").default_value("tactile_and_vision")),
        )
}

/// Defaults, then `--config`, then individual flags.
fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(file) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(file).map_err(|e| Error::Config(format!("{file}: {e}")))?;
        cfg.apply_text(&text, file)?;
    }
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required")
}

fn string<'a>(m: &'a ArgMatches, name: &str) -> &'a str {
    m.get_one::<String>(name).expect("required or defaulted")
}

/// Returns whether every check passed.
fn dispatch(m: &ArgMatches) -> Result<bool> {
    match m.subcommand().expect("subcommand required") {
        ("gen-data", m) => run::gen_data(&run_config(m)?, path(m, "out"))?,
        ("pretrain", m) => run::pretrain(path(m, "data"), &run_config(m)?, path(m, "out"))?,
        ("finetune", m) => run::finetune(
            path(m, "data"),
            path(m, "encoder"),
            string(m, "variant").parse()?,
            string(m, "group").parse()?,
            &run_config(m)?,
            path(m, "out"),
        )?,
        ("eval", m) => run::eval(path(m, "data"), path(m, "ckpt"), path(m, "out"))?,
        ("ablate", m) => {
            let seeds = run::parse_seeds(string(m, "seeds"))?;
            let jobs = *m.get_one::<usize>("jobs").expect("defaulted");
            let report = run::ablate(path(m, "data"), &seeds, jobs, &run_config(m)?, path(m, "out"))?;
            for o in report.orderings() {
                println!("{} {} {}", if o.holds { "PASS" } else { "FAIL" }, o.key, o.detail);
            }
        }
        ("gradcheck", _) => {
            let results = checks::gradient_suite()?;
            for r in &results {
                println!("{}", r.line());
            }
            return Ok(results.iter().all(|r| r.report.passed));
        }
        ("plan", m) => {
            let variant: Variant = string(m, "variant").parse()?;
            let group: ModalityGroup = string(m, "group").parse()?;
            let n = *m.get_one::<usize>("n-layers").expect("defaulted");
            let t = *m.get_one::<usize>("t").expect("required");
            print!("{}", build_plan(variant, group, n, t)?.describe());
        }
        (other, _) => unreachable!("unregistered subcommand {other}"),
    }
    Ok(true)
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let one_line = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} code={code}: {one_line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", 1, first.trim_start_matches("error: "));
        }
    };
    match dispatch(&matches) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => fail("invariant", 4, "gradient check failed"),
        Err(e) => fail(e.kind(), e.exit_code() as u8, &e.to_string()),
    }
}
