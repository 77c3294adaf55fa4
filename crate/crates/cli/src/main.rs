use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lgrowth_cli::{run, Command, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "lgrowth", version, about = "Local-time driven Laplacian growth laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config's `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Integrate the macroscopic flow.
    Flow,
    /// Run the microscopic growth process.
    Grow,
    /// Micro-versus-macro convergence experiment.
    Compare,
    /// Check the reflecting diffusion against its closed forms.
    ValidateSde,
    /// Compare the trace endpoint law with the surface measure.
    TraceInvariance,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let command = match cli.command {
        Sub::Flow => Command::Flow,
        Sub::Grow => Command::Grow,
        Sub::Compare => Command::Compare,
        Sub::ValidateSde => Command::ValidateSde,
        Sub::TraceInvariance => Command::TraceInvariance,
    };
    let Some(path) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(1);
    };
    let mut cfg = match RunConfig::from_path(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(n) = cli.threads {
        cfg.threads = Some(n);
    }
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e}");
        return ExitCode::from(1);
    }
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(command, &cfg, cli.quiet) {
        Ok(o) if o.criteria_pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
