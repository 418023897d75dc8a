//! `nullrec-sim`: run one experiment from a JSON config, or list the catalog.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for
//! config errors, 3 for numerical failures (blow-up, degenerate matrices,
//! quadrature), 4 for I/O errors.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use run::RunError;

#[derive(Parser)]
#[command(
    name = "nullrec-sim",
    version,
    about = "Fast-slow diffusion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Cap on worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the coefficient catalog.
    ListCatalog,
}

fn fail(code: u8, body: serde_json::Value) -> ExitCode {
    eprintln!("{body}");
    ExitCode::from(code)
}

fn run_config(path: PathBuf, threads: Option<usize>, out: Option<PathBuf>) -> ExitCode {
    let raw = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) => {
            return fail(
                2,
                json!({"status": "error", "kind": "schema", "message": format!("cannot read {}: {e}", path.display())}),
            )
        }
    };
    let mut cfg: ExperimentConfig = match serde_json::from_slice(&raw) {
        Ok(c) => c,
        Err(e) => {
            return fail(
                2,
                json!({"status": "error", "kind": "schema", "line": e.line(), "column": e.column(), "message": e.to_string()}),
            )
        }
    };
    if let Ok(s) = std::env::var("NULLREC_SEED") {
        match s.trim().parse() {
            Ok(v) => cfg.master_seed = v,
            Err(_) => {
                return fail(
                    2,
                    json!({"status": "error", "kind": "schema", "message": format!("NULLREC_SEED is not a u64: {s}")}),
                )
            }
        }
    }
    if let Some(n) = threads {
        if n == 0 {
            return fail(
                2,
                json!({"status": "error", "kind": "schema", "message": "--threads must be positive"}),
            );
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let hash: String = Sha256::digest(&raw)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let out_dir = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("nullrec-out"));

    match run::run(&cfg, &hash, &out_dir) {
        Ok(outcome) => {
            for r in &outcome.reports {
                print!("{}", r.to_text());
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            let failed: Vec<_> = outcome
                .reports
                .iter()
                .flat_map(|r| {
                    r.checks.iter().filter(|c| !c.pass).map(move |c| {
                        json!({"report": r.name, "check": c.name, "value": c.value, "threshold": c.threshold, "relation": c.relation})
                    })
                })
                .collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                fail(1, json!({"status": "fail", "failed": failed}))
            }
        }
        Err(RunError::Config(m)) => fail(
            2,
            json!({"status": "error", "kind": "schema", "message": m}),
        ),
        Err(RunError::Runtime(e)) => {
            let index = match e {
                nullrec_core::Error::BlowUp { index } => Some(index),
                _ => None,
            };
            fail(
                3,
                json!({"status": "error", "kind": "runtime", "message": e.to_string(), "index": index}),
            )
        }
        Err(RunError::Io(e)) => fail(
            4,
            json!({"status": "error", "kind": "io", "message": e.to_string()}),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            threads,
            out,
        } => run_config(config, threads, out),
        Command::ListCatalog => {
            print!("{}", run::list_catalog());
            ExitCode::SUCCESS
        }
    }
}
