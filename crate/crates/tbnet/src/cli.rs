//! Argument parsing. Every configuration key is also a `--key VALUE` flag.

use std::ffi::OsString;

use clap::{Arg, ArgMatches, Command};

use crate::config::{keys, RunConfig, OUTPUT_ROOT_ENV};
use crate::error::{exit, AppError, AppResult};
use crate::{commands, train};

pub const COMMANDS: [(&str, &str); 5] = [
    ("generate-data", "Write a synthetic copy-move / splice corpus"),
    ("train", "Train on the corpus' train split"),
    ("eval", "Score a checkpoint on a corpus split"),
    ("predict", "Write probability maps, overlays and channel heatmaps"),
    ("attack-eval", "Score under no attack, JPEG 70/50 and scaling 0.7/0.5"),
];

fn subcommand(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name)
        .about(about)
        .arg(Arg::new("config").long("config").value_name("FILE").help("key = value configuration file"));
    for key in keys() {
        cmd = cmd.arg(Arg::new(key.clone()).long(key).value_name("VALUE"));
    }
    cmd
}

pub fn command() -> Command {
    let mut cmd = Command::new("tbnet")
        .about("Image manipulation localisation with RGB, frequency and boundary streams")
        .after_help(format!("Relative output paths are resolved against ${OUTPUT_ROOT_ENV} when set."))
        .subcommand_required(true);
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(subcommand(name, about));
    }
    cmd
}

/// Defaults, then the config file, then flags.
pub fn resolve(m: &ArgMatches) -> AppResult<RunConfig> {
    let base = match m.get_one::<String>("config") {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let keys = keys();
    let flags: Vec<(&str, &str)> =
        keys.iter().filter_map(|k| m.get_one::<String>(k).map(|v| (k.as_str(), v.as_str()))).collect();
    base.with_overrides(flags)
}

/// Runs one invocation and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<(), AppError> {
    let cfg = resolve(m)?;
    let out = cfg.output_dir(name);
    match name {
        "generate-data" => {
            let s = commands::generate_data(&cfg, &out)?;
            println!(
                "wrote {} train / {} test samples ({} copy-move, {} splice, {} authentic) to {}",
                s.train,
                s.test,
                s.copy_move,
                s.splice,
                s.authentic,
                out.display()
            );
        }
        "train" => {
            let every = (cfg.train_count / cfg.batch_size.max(1)).max(1) as u64;
            let s = train::train_with(&cfg, &out, &mut |r| {
                if r.step % every == 0 {
                    println!(
                        "epoch {:>3} step {:>6}  loss {:.5} (region {:.4}, boundary {:.4}, aware {:.4})  {:.0}s",
                        r.epoch, r.step, r.total, r.region, r.boundary, r.aware, r.seconds
                    );
                }
            })?;
            println!(
                "trained {} steps in {:.0}s; loss {:.5} -> {:.5}; checkpoint {}",
                s.steps,
                s.seconds,
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        "eval" => {
            let r = commands::eval(&cfg, &out)?;
            println!(
                "{}: {} images, mean MCC {:.4}, mean F1 {:.4} ({} skipped) -> {}",
                r.tag(),
                r.per_image.len(),
                r.mean_mcc,
                r.mean_f1,
                r.skipped.len(),
                out.display()
            );
        }
        "predict" => {
            let files = commands::predict(&cfg, &out)?;
            println!("predicted {} images -> {}", files.len(), out.display());
        }
        "attack-eval" => {
            for r in commands::attack_eval(&cfg, &out)? {
                println!("{:<9} MCC {:.4}  F1 {:.4}", r.tag(), r.mean_mcc, r.mean_f1);
            }
        }
        _ => unreachable!("unknown subcommand {name}"),
    }
    Ok(())
}
