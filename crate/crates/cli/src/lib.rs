//! Command-line front end: configuration layering, argument parsing and
//! subcommand dispatch. [`run`] is the whole program minus `process::exit`.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::{CommandFactory, FromArgMatches};
use interclip::{Error, Result};

use crate::args::{explicit, Cli, Command};
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_VALIDATION;
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand required");
    let given = explicit(sub);
    match execute(&cli.command, &given, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Defaults, then the config file, then explicitly given flags.
pub fn effective_config(command: &Command, given: &dyn Fn(&str) -> bool) -> Result<RunConfig> {
    let mut cfg = match &command.common().config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    command.apply(&mut cfg, given)?;
    Ok(cfg)
}

fn execute(command: &Command, given: &dyn Fn(&str) -> bool, out: &mut dyn Write) -> Result<i32> {
    let cfg = effective_config(command, given)?;
    cfg.validate()?;
    if command.common().dump_config {
        writeln!(out, "{}", cfg.to_json()).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        })?;
        return Ok(EXIT_OK);
    }
    match command {
        Command::GenData(_) => {
            if cfg.data.n_samples == 0 {
                return Err(Error::Invalid("empty dataset: --n must be at least 1".into()));
            }
            commands::gen_data(&cfg, out)?
        }
        Command::Train(_) => commands::train_cmd(&cfg, out)?,
        Command::Eval(_) => commands::eval_cmd(&cfg, out)?,
        Command::Gradcheck(a) => {
            if !commands::gradcheck_cmd(&cfg, a.corrupt_gradient, out)? {
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::MepReplay(_) => commands::mep_replay_cmd(&cfg, out)?,
    }
    Ok(EXIT_OK)
}
