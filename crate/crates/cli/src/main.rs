use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rdcomm_cli::commands::{self, Provenance};
use rdcomm_cli::{CliError, CliResult, RunConfig};

/// Task-oriented collaborative perception codec: simulate, train, sweep, verify.
#[derive(Parser, Debug)]
#[command(name = "rdcomm", version)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one world and write truth and per-agent observations.
    GenWorld(Common),
    /// Fit codebooks, accumulate frequencies and train the discriminator.
    Train(Common),
    /// Run collaboration rounds over the threshold grid and seeds.
    Sweep(Common),
    /// Run the information-theory, Bayes-risk and rate-bound self-checks.
    VerifyTheory(Common),
    /// Turn a sweep directory into plot-ready CSVs.
    Export {
        /// Directory written by `sweep`.
        #[arg(long, value_name = "DIR")]
        results: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load(common: &Common, command: &'static str) -> CliResult<(RunConfig, Provenance)> {
    let (text, base) = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::key("--config", None, format!("{}: {e}", p.display())))?;
            (text, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (String::new(), PathBuf::from(".")),
    };
    let mut cfg = RunConfig::parse(&text, &base)?;
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    let prov = Provenance {
        command,
        config_sha256: commands::sha256_hex(text.as_bytes()),
        seed: cfg.seed,
    };
    Ok((cfg, prov))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::key("--jobs", None, "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::GenWorld(c) => {
            let (cfg, prov) = load(&c, "gen-world")?;
            commands::gen_world(&cfg, &c.out, &prov)
        }
        Command::Train(c) => {
            let (cfg, prov) = load(&c, "train")?;
            commands::train(&cfg, &c.out, &prov)
        }
        Command::Sweep(c) => {
            let (cfg, prov) = load(&c, "sweep")?;
            commands::sweep(&cfg, &c.out, &prov)
        }
        Command::VerifyTheory(c) => {
            let (cfg, prov) = load(&c, "verify-theory")?;
            let checks = commands::verify_theory(&cfg, &c.out, &prov)?;
            for ch in &checks {
                println!("{}/{}: pass (margin {:e})", ch.suite, ch.name, ch.margin());
            }
            Ok(())
        }
        Command::Export { results, out } => {
            let manifest = fs::read(results.join("manifest.txt"))
                .map_err(|e| CliError::key("--results", None, format!("{}: {e}", results.display())))?;
            let prov = Provenance {
                command: "export",
                config_sha256: commands::sha256_hex(&manifest),
                seed: 0,
            };
            commands::export(&results, &out, &prov)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
