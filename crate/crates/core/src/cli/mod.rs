//! Batch front end. Exit codes: 0 success, 2 invalid input, 3 solver
//! non-convergence, 4 failed verification verdict.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calculus::GridFunction;
use crate::error::{ConeError, Result};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "conelab", version, about = "Cone-degenerate p-Laplace laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Seed for every randomised step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Dirichlet problem.
    Solve(Common),
    /// Solve the problem manufactured from `problem.exact` and report the error.
    Manufacture(Common),
    /// Solve on an exhaustion sequence with zero data.
    Exhaust(Common),
    /// Inf-convolution and upper envelope of a solution.
    Convolve(Common),
    /// Run one verification check.
    Verify {
        check: Check,
        #[command(flatten)]
        common: Common,
    },
    /// Error table against `problem.exact` over successive refinements.
    ConvergenceStudy(Common),
    /// Estimate the G-condition constants of the domain.
    Gcondition(Common),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Abp,
    Hoelder,
    Harnack,
    Weakharnack,
    Oscillation,
    Comparison,
    Doubling,
    Weakform,
}

/// Result of a subcommand that ran to completion.
pub(crate) enum Outcome {
    Pass,
    Fail(String),
}

/// Writes artifacts tagged with the config hash.
pub(crate) struct Output {
    dir: PathBuf,
    hash: String,
    json: bool,
    csv: bool,
    written: Vec<String>,
}

impl Output {
    fn new(dir: PathBuf, hash: String, json: bool, csv: bool) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            hash,
            json,
            csv,
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, body: String) -> Result<()> {
        std::fs::write(self.dir.join(name), body)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub(crate) fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            config_hash: &'a str,
            report: &'a T,
        }
        let mut body = serde_json::to_string_pretty(&Tagged {
            config_hash: &self.hash,
            report,
        })?;
        body.push('\n');
        self.put(&format!("{name}.json"), body)
    }

    pub(crate) fn csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        let mut body = format!("# config_hash = {}\n{header}\n", self.hash);
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        self.put(&format!("{name}.csv"), body)
    }

    pub(crate) fn grid(&mut self, name: &str, u: &GridFunction) -> Result<()> {
        let body = format!("# config_hash = {}\n{}", self.hash, u.to_text());
        self.put(&format!("{name}.txt"), body)
    }

    /// The only artifact carrying wall-clock data.
    fn metadata(&mut self, command: &str, seed: u64, wall: f64, exit: i32) -> Result<()> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let meta = serde_json::json!({
            "command": command,
            "config_hash": self.hash,
            "seed": seed,
            "exit_code": exit,
            "wall_time_s": wall,
            "unix_time": now,
            "version": env!("CARGO_PKG_VERSION"),
            "files": self.written,
        });
        let name = format!("{}.meta.json", command.replace(' ', "-"));
        std::fs::write(self.dir.join(name), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }
}

/// Exit code for an error raised while running a subcommand.
pub fn exit_code(e: &ConeError) -> i32 {
    match e {
        ConeError::NonConvergence(_) => EXIT_NONCONVERGENCE,
        ConeError::Stage { source, .. } => exit_code(source),
        _ => EXIT_INVALID,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let (name, check, common) = match cli.command {
        Command::Solve(c) => ("solve", None, c),
        Command::Manufacture(c) => ("manufacture", None, c),
        Command::Exhaust(c) => ("exhaust", None, c),
        Command::Convolve(c) => ("convolve", None, c),
        Command::Verify { check, common } => ("verify", Some(check), common),
        Command::ConvergenceStudy(c) => ("convergence-study", None, c),
        Command::Gcondition(c) => ("gcondition", None, c),
    };
    let start = Instant::now();
    let cfg = match RunConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let mut out = match Output::new(dir, cfg.hash(common.seed), cfg.output.json, cfg.output.csv) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let result = match (name, check) {
        ("solve", _) => commands::solve(&cfg, &mut out),
        ("manufacture", _) => commands::manufacture(&cfg, &mut out),
        ("exhaust", _) => commands::exhaust(&cfg, &mut out),
        ("convolve", _) => commands::convolve(&cfg, &mut out),
        ("convergence-study", _) => commands::convergence_study(&cfg, &mut out),
        ("gcondition", _) => commands::gcondition(&cfg, common.seed, &mut out),
        (_, Some(c)) => commands::verify(c, &cfg, common.seed, &mut out),
        _ => unreachable!("every subcommand is matched"),
    };
    let code = match result {
        Ok(Outcome::Pass) => EXIT_OK,
        Ok(Outcome::Fail(why)) => {
            eprintln!("verification failed: {why}");
            EXIT_VERIFICATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    let label = match check {
        Some(c) => format!("verify {}", c.to_possible_value().map_or_else(String::new, |v| v.get_name().to_string())),
        None => name.to_string(),
    };
    if let Err(e) = out.metadata(&label, common.seed, start.elapsed().as_secs_f64(), code) {
        eprintln!("error: cannot write metadata: {e}");
    }
    code
}
