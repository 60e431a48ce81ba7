use std::ffi::OsString;
use std::path::PathBuf;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use log::{info, warn};

use crate::config::{flag_name, RunConfig, Settings, Stage, KEYS};
use crate::error::{CliError, Result};
use crate::eval::{cmd_eval, EvalOptions, REPORT_TXT};
use crate::filter::{cmd_filter, FilterOptions};
use crate::ingest::{cmd_ingest, render_summary, IngestOptions};
use crate::toy::{generate_toy, ToySpec};
use crate::train::{cmd_finetune, cmd_train};

fn keyed(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("INI config file; flags override its values"),
    );
    for k in KEYS {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(flag_name(k.name))
                .value_name("VALUE")
                .help(format!("[{}] {}", k.section, k.help))
                .hide_short_help(true),
        );
    }
    cmd
}

pub fn command() -> Command {
    Command::new("whilter")
        .about("Train, evaluate and apply multitask speech-data filters")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("only log warnings and errors"),
        )
        .subcommand(keyed("train", "Stage 1: train on simulated mixtures"))
        .subcommand(keyed("finetune", "Stage 2: fine-tune a checkpoint with augmentation"))
        .subcommand(keyed("eval", "Per-class report for one manifest split"))
        .subcommand(keyed("filter", "Split a manifest into kept and rejected clips"))
        .subcommand(keyed("ingest", "Turn a Label Studio export into split manifests"))
        .subcommand(
            Command::new("toy")
                .about("Generate a small synthetic five-class dataset")
                .arg(Arg::new("out").long("out").required(true).value_parser(value_parser!(PathBuf)))
                .arg(
                    Arg::new("n_train")
                        .long("n-train")
                        .default_value("2000")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n_val")
                        .long("n-val")
                        .default_value("200")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n_test")
                        .long("n-test")
                        .default_value("400")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("n_pool")
                        .long("n-pool")
                        .default_value("40")
                        .value_parser(value_parser!(usize)),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64))),
        )
}

/// Config file first, then flags on top.
pub fn settings_from(m: &ArgMatches) -> Result<Settings> {
    let mut s = match m.get_one::<PathBuf>("config") {
        Some(p) => Settings::from_ini_file(p)?,
        None => Settings::new(),
    };
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.name) {
            s.set(k.name, v.clone())?;
        }
    }
    Ok(s)
}

fn save_settings(s: &Settings, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    let p = cfg.out_dir.join(format!("{}.ini", cfg.stage.name()));
    std::fs::write(&p, s.to_ini()).map_err(|e| CliError::io(&p, e))
}

pub fn run_matches(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    match name {
        "train" | "finetune" => {
            let s = settings_from(sub)?;
            let stage = if name == "train" { Stage::Simulated } else { Stage::Finetune };
            let cfg = RunConfig::from_settings(&s, stage)?;
            save_settings(&s, &cfg)?;
            let summary = if stage == Stage::Simulated {
                cmd_train(&cfg)?
            } else {
                cmd_finetune(&cfg)?
            };
            println!("last checkpoint: {}", summary.last_checkpoint.display());
            if let Some(b) = summary.best_checkpoint {
                println!("best checkpoint: {}", b.display());
            }
        }
        "eval" => {
            let opts = EvalOptions::from_settings(&settings_from(sub)?)?;
            cmd_eval(&opts)?;
            let p = opts.out_dir.join(REPORT_TXT);
            print!("{}", std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?);
        }
        "filter" => {
            let opts = FilterOptions::from_settings(&settings_from(sub)?)?;
            let s = cmd_filter(&opts)?;
            println!("{} clips: {} kept, {} rejected", s.total, s.kept, s.rejected);
            if s.enhance + s.discard > 0 {
                println!("  {} to enhance, {} to discard", s.enhance, s.discard);
            }
        }
        "ingest" => {
            let opts = IngestOptions::from_settings(&settings_from(sub)?)?;
            let summary = cmd_ingest(&opts)?;
            if summary.skipped > 0 {
                warn!("{} tasks skipped", summary.skipped);
            }
            print!("{}", render_summary(&summary));
        }
        "toy" => {
            let spec = ToySpec {
                n_train: *sub.get_one("n_train").unwrap(),
                n_val: *sub.get_one("n_val").unwrap(),
                n_test: *sub.get_one("n_test").unwrap(),
                n_pool: *sub.get_one("n_pool").unwrap(),
                seed: *sub.get_one("seed").unwrap(),
                ..ToySpec::default()
            };
            let ds = generate_toy(sub.get_one::<PathBuf>("out").unwrap(), &spec)?;
            info!("toy dataset written to {}", ds.root.display());
            println!("{}", ds.config.display());
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if m.get_flag("quiet") { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run_matches(&m) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
