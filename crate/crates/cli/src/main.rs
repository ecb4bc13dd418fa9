//! `ph2d`: geometry generation, corrector and inverse-divergence audits,
//! flow runs and epsilon sweeps driven by a JSON run configuration.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{CliError, Context};
use manifest::{Manifest, OutputDir};
use ph2d_core::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ph2d", version, about = "Perforated-domain compressible flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Base seed for random right-hand sides.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PH2D_THREADS")]
    threads: Option<usize>,

    /// Single thread and no wall-clock fields, so repeated runs give
    /// byte-identical outputs.
    #[arg(long, global = true)]
    strict_deterministic: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Hole centers, geometry document and cell mask.
    GenDomain,
    /// Norms of the cut-off corrector.
    CutoffAudit,
    /// Composed inverse divergence on seeded right-hand sides.
    BogAudit,
    /// One flow run with its energy ledger.
    Solve,
    /// Epsilon sweep against the hole-free reference run.
    Study,
    /// Verify the checksums of an output directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenDomain => "gen-domain",
            Command::CutoffAudit => "cutoff-audit",
            Command::BogAudit => "bog-audit",
            Command::Solve => "solve",
            Command::Study => "study",
            Command::Report => "report",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::from_json(&text)?)
}

fn report(cli: &Cli) -> Result<(), CliError> {
    let (m, checks) = manifest::verify(&cli.out)?;
    let all_ok = checks.iter().all(|c| c.ok);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "directory": cli.out,
            "subcommand": m.subcommand,
            "version": m.version,
            "files": checks,
            "all_ok": all_ok,
        }))
        .expect("report serializes")
    );
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Validation("checksum mismatch".into()))
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::Report {
        return report(cli);
    }
    let threads = if cli.strict_deterministic { 1 } else { cli.threads.unwrap_or(0) };
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();

    let config = load_config(cli)?;
    let start = Instant::now();
    let mut out = OutputDir::create(&cli.out)?;
    let mut ctx = Context { config: &config, seed: cli.seed, out: &mut out };
    match cli.command {
        Command::GenDomain => commands::gen_domain(&mut ctx)?,
        Command::CutoffAudit => commands::cutoff_audit(&mut ctx)?,
        Command::BogAudit => commands::bog_audit_cmd(&mut ctx)?,
        Command::Solve => commands::solve(&mut ctx)?,
        Command::Study => commands::study(&mut ctx)?,
        Command::Report => unreachable!("handled above"),
    }
    let manifest = Manifest {
        tool: "ph2d".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        seed: cli.seed,
        threads: rayon::current_num_threads(),
        strict_deterministic: cli.strict_deterministic,
        config: serde_json::to_value(&config).expect("config serializes"),
        files: Vec::new(),
        wall_time_s: (!cli.strict_deterministic).then(|| start.elapsed().as_secs_f64()),
    };
    out.finish(manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
