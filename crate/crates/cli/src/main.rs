mod commands;
mod error;
mod manifest;
mod settings;

use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, Command};
use nirs_core::exec::Executor;

use error::CliError;
use settings::{command, Settings};

fn cli() -> Command {
    Command::new("nirs")
        .version(env!("CARGO_PKG_VERSION"))
        .about("fNIRS pipeline: synthesize, preprocess, evaluate")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help("NIRS_THREADS caps worker threads (0 or unset: all cores). Outputs do not depend on it.")
        .subcommand(command("synth", "Generate synthetic recordings with ground truth", settings::SYNTH))
        .subcommand(command("pipeline", "Turn raw recordings into labeled feature CSVs", settings::PIPELINE))
        .subcommand(command("evaluate", "Run an evaluation protocol on feature CSVs", settings::EVALUATE))
        .subcommand(command(
            "bias-demo",
            "Compare contiguous and shuffled-first splits on the same data",
            settings::BIAS_DEMO,
        ))
        .subcommand(
            Command::new("replay")
                .about("Re-run a recorded invocation and verify its outputs")
                .arg(Arg::new("manifest").required(true).value_name("MANIFEST"))
                .arg(Arg::new("out").long("out").value_name("DIR").help("write outputs here instead")),
        )
}

fn dispatch() -> Result<String, CliError> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let exec = Executor::from_env();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let m = if name == "replay" {
        let path = sub.get_one::<String>("manifest").expect("required");
        commands::replay(Path::new(path), sub.get_one::<String>("out").map(String::as_str), &exec)?
    } else {
        let spec = settings::spec_for(name).expect("registered subcommand");
        let s = Settings::from_matches(name, spec, sub)?;
        commands::run(name, &s, &exec)?
    };
    Ok(format!("{name}: wrote {} files", m.outputs.len() + 1))
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(msg) => {
            eprintln!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
