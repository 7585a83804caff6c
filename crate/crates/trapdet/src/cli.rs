//! Argument parsing and the top-level run loop.

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use crate::commands::{self, Command};
use crate::config::{self, Format};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "trapdet", version, about = "Trap-integrated SNSPD readout modeling")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Overrides the config seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

/// Runs one invocation and returns the rendered result.
pub fn execute(cli: &Cli) -> Result<String> {
    let mut loaded = match &cli.config {
        Some(p) => config::load(p)?,
        None => config::empty(),
    };
    if let Some(seed) = cli.seed {
        loaded.config.seed = Some(seed);
    }
    let format = cli.format.or(loaded.config.format).unwrap_or_default();
    let output = commands::run(&cli.command, &loaded)?;
    Ok(output.render(format))
}

/// Full command-line entry: parses `args`, runs, writes the result to
/// `--out` or `stdout`, reports errors on `stderr`, returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = execute(&cli).and_then(|text| match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Validation(format!("stdout: {e}"))),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage",
                CliError::Validation(_) => "invalid input",
                CliError::Solver(_) => "solver error",
            };
            let _ = writeln!(stderr, "trapdet: {kind}: {e}");
            e.exit_code()
        }
    }
}
