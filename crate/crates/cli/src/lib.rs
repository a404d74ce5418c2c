//! The `uhinet` pipeline as a library: argument parsing, stage dispatch
//! and the mapping from errors to process exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use uhinet::Error;

pub mod plots;
pub mod stages;

#[derive(Debug, Parser)]
#[command(name = "uhinet", version, about = "Urban heat island emulator pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world: layers, met series, oracle grids and stations.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster days into weather types and select the target type.
    Lwt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the emulator on the selected days.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `lwt.json` or a JSON array of dates.
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict hourly grids over the full domain.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_days: Option<usize>,
    },
    /// Compare predictions with reference grids and station series.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `split.json` from training; adds per-patch metrics on test patches.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Relative-temperature hotspot maps for each hour of the day.
    Hotspot {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = uhinet::hotspot::DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Serve the what-if HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Usage(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

pub fn execute(command: Command) -> uhinet::Result<()> {
    use stages::*;
    match command {
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed),
        Command::Lwt { data, config, out, seed } => lwt(&data, config.as_deref(), &out, seed),
        Command::Train {
            data,
            days,
            config,
            out,
            seed,
        } => train(&data, &days, config.as_deref(), &out, seed),
        Command::Predict {
            ckpt,
            data,
            days,
            out,
            max_days,
        } => predict(&ckpt, &data, &days, &out, max_days),
        Command::Eval {
            pred,
            truth,
            stations,
            out,
            split,
        } => eval(&pred, &truth, &stations, &out, split.as_deref()),
        Command::Hotspot { pred, out, epsilon } => hotspot(&pred, &out, epsilon),
        Command::Serve {
            port,
            ckpt,
            store,
            baseline,
        } => serve(port, ckpt.as_deref(), &store, baseline.as_deref()),
    }
}

/// Parses `args`, runs the stage and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Usage("x".into())), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
    }

    #[test]
    fn unknown_flag_and_help() {
        assert_eq!(run(["uhinet", "synth", "--out", "x", "--bogus"]), 1);
        assert_eq!(run(["uhinet", "--help"]), 0);
        assert_eq!(run(["uhinet", "--version"]), 0);
    }
}
