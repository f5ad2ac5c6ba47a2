use bergman_core::cli::{run_file, write_outputs, Subcommand};
use clap::{Parser, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Diag,
    Offdiag,
    Orbifold,
    ModelCheck,
    Heat,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Diag => Subcommand::Diag,
            Command::Offdiag => Subcommand::Offdiag,
            Command::Orbifold => Subcommand::Orbifold,
            Command::ModelCheck => Subcommand::ModelCheck,
            Command::Heat => Subcommand::Heat,
        }
    }
}

/// Bergman kernel verification suites.
///
/// Set BERGMAN_THREADS to cap the worker pool.
#[derive(Debug, Parser)]
#[command(name = "bergman", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write SVG charts.
    #[arg(long)]
    plots: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("BERGMAN_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: BERGMAN_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    let result = run_file(args.command.into(), &args.config, args.plots)
        .and_then(|out| write_outputs(&out, &args.out).map(|files| (out, files)));
    match result {
        Ok((out, files)) => {
            for c in &out.checks {
                println!(
                    "{} {}: measured {:.6e}, target {:.6e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.target
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            if out.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
