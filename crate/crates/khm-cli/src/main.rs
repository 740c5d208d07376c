mod commands;
mod config;
mod manifest;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::{Config, ConfigError, CONFIG_ENV};
use khm_core::KhmError;
use manifest::Emitter;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "khm", version, about = "Third-order structure-function laboratory for EMHD and Hall-MHD")]
struct Cli {
    /// Config file, or "default" for the built-in values. Falls back to $KHM_CONFIG.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    sets: Vec<String>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed-order reductions so repeated runs give identical bytes.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate EMHD or Hall-MHD; writes snapshots and the invariant ledger.
    Simulate,
    /// Structure functions and D^ε estimates for snapshot files.
    Estimate {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Check the vector and ℓ-integral identities and the spectral operators.
    VerifyIdentities,
    /// Space-integrated balance audits between consecutive snapshots
    /// (or a short run from the config when no input is given).
    AuditKhm {
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Scan separations over snapshots and look for a compensated plateau.
    ScanLaws {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Kernel moments and the law constants for both bundled kernels.
    VerifyConstants,
    /// Aggregate every report under a directory into summary.json.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::VerifyIdentities => "verify-identities",
            Command::AuditKhm { .. } => "audit-khm",
            Command::ScanLaws { .. } => "scan-laws",
            Command::VerifyConstants => "verify-constants",
            Command::Report { .. } => "report",
        }
    }
}

fn resolve(cli: &Cli) -> Result<Config, ConfigError> {
    let env = std::env::var(CONFIG_ENV).ok();
    let file = cli.config.as_deref().or(env.as_deref());
    let mut sets = cli.sets.clone();
    if let Some(o) = &cli.output {
        sets.push(format!("output.dir={}", o.display()));
    }
    if let Some(t) = cli.threads {
        sets.push(format!("run.threads={t}"));
    }
    if cli.deterministic {
        sets.push("run.deterministic=true".into());
    }
    Config::resolve(file, &sets)
}

fn run(cli: &Cli, cfg: &Config) -> Result<commands::Outcome> {
    let threads = cfg.usize("run.threads");
    if threads > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    khm_core::par::set_deterministic(cfg.bool("run.deterministic"));
    let name = cli.command.name();
    let dir = PathBuf::from(cfg.text("output.dir"));
    let mut out = Emitter::new(&dir, name)?;
    out.write(&format!("config-{name}.resolved"), cfg.to_text().as_bytes())?;
    let outcome = match &cli.command {
        Command::Simulate => commands::simulate(cfg, &mut out)?,
        Command::Estimate { input } => commands::estimate(cfg, input, &mut out)?,
        Command::VerifyIdentities => commands::verify_identities(cfg, &mut out)?,
        Command::AuditKhm { input } => commands::audit_khm(cfg, input, &mut out)?,
        Command::ScanLaws { input } => commands::scan_laws(cfg, input, &mut out)?,
        Command::VerifyConstants => commands::verify_constants(cfg, &mut out)?,
        Command::Report { input } => {
            let root = input.clone().unwrap_or_else(|| dir.clone());
            commands::report(&root, &mut out)?
        }
    };
    out.finish(&cfg.hash())?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cli, &cfg) {
        Ok(o) => {
            println!("{}: {} [{}]", cli.command.name(), o.summary, if o.pass { "PASS" } else { "FAIL" });
            if o.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_TOLERANCE)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_like = e.chain().any(|c| matches!(c.downcast_ref::<KhmError>(), Some(KhmError::Config(_))));
            ExitCode::from(if config_like { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
