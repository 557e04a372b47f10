//! `nnflow`: command-line driver for the constitutive checks, the solver and
//! the relative-energy certificates.
//!
//! Exit codes: 0 all checks pass, 1 a certificate failed, 2 configuration or
//! usage error, 3 numerical failure.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdResult, Ctx};
use config::Config;

#[derive(Parser)]
#[command(
    name = "nnflow",
    version,
    about = "Non-Newtonian compressible flow certification suite"
)]
struct Cli {
    /// INI configuration file; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "nnflow-out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Multiplies every configured tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Certify the viscosity law: pointwise conditions, monotonicity, growth.
    CheckLaw,
    /// Tabulate the numeric convex conjugate of a Young function.
    Conjugate,
    /// Run the solver and write the energy budget and snapshots.
    Simulate,
    /// Grid refinement study against the traveling-wave solution.
    Convergence,
    /// Relative-energy certificate against the traveling-wave reference.
    Certify,
    /// Weak-strong uniqueness study: identical and perturbed initial data.
    WeakStrong,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::CheckLaw => "check-law",
            Command::Conjugate => "conjugate",
            Command::Simulate => "simulate",
            Command::Convergence => "convergence",
            Command::Certify => "certify",
            Command::WeakStrong => "weak-strong",
        }
    }

    fn exec(self, ctx: &Ctx) -> CmdResult {
        match self {
            Command::CheckLaw => commands::check_law(ctx),
            Command::Conjugate => commands::conjugate(ctx),
            Command::Simulate => commands::simulate(ctx),
            Command::Convergence => commands::convergence(ctx),
            Command::Certify => commands::certify(ctx),
            Command::WeakStrong => commands::weak_strong(ctx),
        }
    }
}

fn write_manifest(dir: &Path, lines: &[String]) -> std::io::Result<()> {
    let tmp = dir.join("manifest.txt.tmp");
    let mut f = fs::File::create(&tmp)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.sync_all()?;
    fs::rename(tmp, dir.join("manifest.txt"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match &cli.config {
        Some(p) => Config::load(p),
        None => Config::parse(""),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if !(cli.tol_scale.is_finite() && cli.tol_scale > 0.0) {
        eprintln!("error: --tol-scale must be positive");
        return ExitCode::from(2);
    }
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(3);
    }
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        seed: cli.seed,
        tol_scale: cli.tol_scale,
    };

    let mut manifest = vec![
        format!("command={}", cli.command.name()),
        format!("version={}", env!("CARGO_PKG_VERSION")),
        format!(
            "config={}",
            cli.config
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<defaults>".into())
        ),
        format!("seed={}", cli.seed),
        format!("tol_scale={}", cli.tol_scale),
    ];
    let code = match cli.command.exec(&ctx) {
        Ok(outcome) => {
            for (k, v) in &outcome.summary {
                println!("{k}={v}");
                manifest.push(format!("{k}={v}"));
            }
            let verdict = if outcome.pass { "PASS" } else { "FAIL" };
            println!("{} {verdict}", cli.command.name());
            manifest.push(format!("result={verdict}"));
            u8::from(!outcome.pass)
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            manifest.push(format!("error={}", f.message()));
            f.code() as u8
        }
    };
    manifest.push(format!("exit_code={code}"));
    if let Err(e) = write_manifest(&cli.out, &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(code)
}
