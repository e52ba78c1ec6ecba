//! Command-line pipeline: synthetic data, supervised training, DIM
//! pretraining, probes and the cross-validated comparison table.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use commands::{command_spec, COMMANDS};
use config::RunConfig;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A run that stopped on a numerical problem (diverged loss, failed
/// gradient check).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err.chain().any(|c| {
        c.is::<NumericalFailure>()
            || matches!(
                c.downcast_ref::<infomax3d::Error>(),
                Some(infomax3d::Error::Diverged { .. } | infomax3d::Error::NonFinite { .. })
            )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

pub fn cli() -> Command {
    let mut cmd = Command::new("infomax3d")
        .about("Deep InfoMax pretraining and evaluation for 3D volumes")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for c in COMMANDS {
        let mut sub = Command::new(c.name).about(c.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value file; flags override its entries"),
        );
        for k in c.keys {
            let help = match k.default {
                Some("") | None => k.help.to_string(),
                Some(d) => format!("{} [default: {d}]", k.help),
            };
            sub = sub.arg(
                Arg::new(k.name)
                    .long(k.name.replace('_', "-"))
                    .value_name("VALUE")
                    .help(help)
                    .hide(k.hidden)
                    .action(if k.multi { ArgAction::Append } else { ArgAction::Set }),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Config file entries overlaid with the flags given on the command line.
pub fn resolve_config(name: &str, matches: &ArgMatches) -> Result<RunConfig> {
    let spec = command_spec(name).ok_or_else(|| anyhow!("unknown command `{name}`"))?;
    let mut cfg = match matches.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::load(path, spec.keys)?,
        None => RunConfig::default(),
    };
    for k in spec.keys {
        if let Some(values) = matches.get_many::<String>(k.name) {
            cfg.set(k.name, values.cloned().collect(), spec.keys)?;
        }
    }
    cfg.resolve(spec.keys)
}

pub fn dispatch(name: &str, cfg: &RunConfig) -> Result<()> {
    match name {
        "synth" => {
            let m = commands::synth(cfg)?;
            println!("wrote {} volumes to {}", m.records.len(), cfg.get("out")?);
        }
        "train" | "probe" => {
            let scores = if name == "train" {
                commands::train(cfg)?
            } else {
                commands::probe(cfg)?
            };
            for s in scores {
                println!(
                    "fold {}: cv balanced accuracy {:.4}, holdout {:.4}",
                    s.fold, s.cv, s.holdout
                );
            }
        }
        "pretrain" => {
            for s in commands::pretrain(cfg)? {
                let last = s.epoch_objectives.last().copied().unwrap_or(f64::NAN);
                println!("fold {}: final objective {last:.4}, best epoch {:?}", s.fold, s.best_epoch);
            }
        }
        "eval" => {
            let r = commands::eval(cfg)?;
            println!(
                "{}: cv {:.4} ± {:.4}, holdout {:.4} ± {:.4}, gap {:.4}",
                r.model, r.cv_mean, r.cv_std, r.holdout_mean, r.holdout_std, r.gap
            );
        }
        "compare" => print!("{}", commands::compare(cfg)?),
        "gradcheck" => {
            commands::gradcheck(cfg)?;
        }
        other => return Err(anyhow!("unknown command `{other}`")),
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().ok_or_else(|| anyhow!("no command given"))?;
    let cfg = resolve_config(name, sub)?;
    dispatch(name, &cfg)
}
