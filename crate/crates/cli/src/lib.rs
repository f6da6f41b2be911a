//! Batch front-end: reads one structured-text configuration, runs the
//! requested pipeline and writes tensor documents, CSV tables and field
//! dumps.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use clap::Parser;

pub use config::RunConfig;
pub use error::CliError;

use output::{config_hash, OutputDir, Provenance};

#[derive(Debug, Clone, Parser)]
#[command(name = "elastodiel", version, about = "Homogenization of charged elasto-dielectric composites")]
pub struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for all artifacts; overrides `output.directory`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Progress on stderr and solver diagnostics as CSV.
    #[arg(long)]
    pub verbose: bool,
    /// Worker threads for independent study points.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
}

/// Outcome of a run: the exit code and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub written: Vec<PathBuf>,
    pub error: Option<error::ErrorDocument>,
}

fn report_error(e: &CliError, hash: Option<&str>, root: Option<&Path>, written: &mut Vec<PathBuf>) -> Outcome {
    let doc = e.document(hash);
    if let Ok(text) = serde_json::to_string(&doc) {
        eprintln!("{text}");
    }
    if let Some(root) = root {
        if let Ok(out) = OutputDir::create(root) {
            if let Ok(p) = out.json("error.json", &doc) {
                written.push(p);
            }
        }
    }
    Outcome {
        exit_code: e.exit_code(),
        written: std::mem::take(written),
        error: Some(doc),
    }
}

/// Runs one configuration; never panics on bad input.
pub fn run(args: &Args) -> Outcome {
    let mut written = Vec::new();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            let err = CliError::Config {
                section: "<file>".into(),
                message: format!("cannot read {}: {e}", args.config.display()),
            };
            return report_error(&err, None, args.output_dir.as_deref(), &mut written);
        }
    };
    let hash = config_hash(&text);
    let config = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return report_error(&e, Some(&hash), args.output_dir.as_deref(), &mut written),
    };
    let root = run::output_root(args.output_dir.as_deref(), Some(&config));
    let out = match OutputDir::create(&root) {
        Ok(o) => o,
        Err(e) => return report_error(&e, Some(&hash), None, &mut written),
    };
    let mut ctx = run::Context {
        config: &config,
        provenance: Provenance {
            config_hash: hash.clone(),
            subcommand: config.subcommand.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        out,
        verbose: args.verbose,
        threads: args.threads as usize,
        written: Vec::new(),
    };
    let result = run::execute(&mut ctx);
    written.append(&mut ctx.written);
    match result {
        Ok(()) => Outcome {
            exit_code: 0,
            written,
            error: None,
        },
        Err(e) => report_error(&e, Some(&hash), Some(&root), &mut written),
    }
}
