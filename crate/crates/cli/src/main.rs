//! `qlattice` command-line interface.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use qlattice::io::{self, ResultEnvelope, Series};
use qlattice::Error;
use serde_json::json;

use args::{Cli, Format};

/// Everything a subcommand hands back for output.
pub struct Outcome {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub result: serde_json::Value,
    pub table: String,
    pub csv: Option<String>,
    pub plot: Option<Plot>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn fail(category: &str, message: &str, code: u8) -> ExitCode {
    let body = json!({ "error": { "category": category, "message": message } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn write_file(path: &std::path::Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let device = io::load_device_or_bundled(&cli.global.device)?;
    let command = cli.command.name();
    let out = commands::dispatch(&cli.command, &cli.global, &device)?;
    let envelope = ResultEnvelope::new(command, out.config, out.seed, &device.spec.name, out.result);
    let json = envelope.to_json()?;
    if let Some(path) = &cli.global.out {
        write_file(path, &(json.clone() + "\n"))?;
    }
    if let Some(path) = &cli.global.csv {
        let csv = out
            .csv
            .ok_or_else(|| Error::Usage(format!("`{command}` produces no tabular data")))?;
        write_file(path, &csv)?;
    }
    if let Some(path) = &cli.global.plot {
        let p = out
            .plot
            .ok_or_else(|| Error::Usage(format!("`{command}` produces no plot")))?;
        write_file(path, &io::line_plot_svg(&p.title, &p.x_label, &p.y_label, &p.series))?;
    }
    let mut stdout = std::io::stdout().lock();
    let text = match cli.global.format {
        Format::Table => out.table,
        Format::Structured => json + "\n",
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("config", e.to_string().trim_end(), 2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.category() == qlattice::ErrorCategory::Config { 2 } else { 1 };
            fail(e.category().as_str(), &e.to_string(), code)
        }
    }
}
