use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqdm_gp::config::ExperimentConfig;
use sqdm_gp::experiments::{run_grid, write_outputs, MSE_HEADER, TIMING_HEADER};
use sqdm_gp::grid::GridSpec;
use sqdm_gp::plant::{make_phantom, PhantomKind};
use sqdm_gp::verify::{format_table, run_checks, Fault};
use sqdm_gp::Error;

const SCAN_HELP: &str = "\
Outputs:
  mse.csv     model,polarity,scan_time_s,seed,mse,aborted,completed_lines
              aborted = line where the dip lock was lost (empty if the scan
              completed); mse is over the completed lines.
  timing.csv  model,polarity,scan_time_s,seed,line,compute_s,budget_s,fraction,locked
              compute_s and fraction are wall-clock measurements; all other
              columns depend only on the config.
  images/     <model>_<polarity>_<scan_time>_<seed>.txt tracked maps
              (header lines, then `rows cols`, then one row per line).

Exit codes: 0 ok, 2 usage, config or I/O error. Aborted scans are data.";

#[derive(Parser)]
#[command(name = "sqdm-gp", version, about = "Closed-loop GP feedforward scans on simulated SQDM phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the model x polarity x scan-time x seed grid of a config file.
    #[command(after_help = SCAN_HELP)]
    Scan {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory; falls back to `[experiment] output`.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Scans run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check the sparse methods and gradients against dense oracles.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Generate and save a phantom.
    Phantom {
        /// r1 (63x63) or r2 (200x200)
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        /// Pixel pitch, nm.
        #[arg(long)]
        pitch: Option<f64>,
    },
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn config_error(path: &std::path::Path, e: Error) -> ExitCode {
    match e {
        Error::Parse { line, message } => usage_error(format!("{}:{line}: {message}", path.display())),
        other => usage_error(format!("{}: {other}", path.display())),
    }
}

fn scan(config: PathBuf, output: Option<PathBuf>, jobs: usize) -> ExitCode {
    let cfg = match ExperimentConfig::from_file(&config) {
        Ok(c) => c,
        Err(e) => return config_error(&config, e),
    };
    let Some(dir) = output.or_else(|| cfg.output.clone()) else {
        return usage_error("no output directory: pass -o or set [experiment] output");
    };
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return usage_error(format!("{}: {e}", dir.display()));
    }
    let phantom = match cfg.phantom.build() {
        Ok(p) => p,
        Err(e) => return config_error(&config, e),
    };
    let total = cfg.cell_count();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let outcomes = run_grid(&cfg, &phantom, jobs, |o| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        let c = &o.cell;
        let status = match o.result.aborted {
            Some(j) => format!("aborted at line {j}"),
            None => "complete".to_string(),
        };
        eprintln!(
            "[{k}/{total}] {} {} T={}s seed {}: mse {:.3e}, {status}, compute {:.0}% of budget",
            c.model.as_str(),
            c.polarity.as_str(),
            c.scan_time,
            c.seed,
            o.mse,
            100.0 * o.budget.mean_fraction
        );
    });
    let outcomes = match outcomes {
        Ok(o) => o,
        Err(e) => return usage_error(e),
    };
    match write_outputs(&dir, &outcomes, cfg.images) {
        Ok(w) => {
            println!("{} ({MSE_HEADER})", w.mse.display());
            println!("{} ({TIMING_HEADER})", w.timing.display());
            if !w.images.is_empty() {
                println!("{} images in {}", w.images.len(), dir.join("images").display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => usage_error(format!("{}: {e}", dir.display())),
    }
}

fn verify(inject_fault: Option<String>) -> ExitCode {
    let fault = match inject_fault.as_deref().map(|f| Fault::parse(f).ok_or(f)) {
        None => None,
        Some(Ok(f)) => Some(f),
        Some(Err(f)) => return usage_error(format!("unknown fault '{f}'")),
    };
    let checks = run_checks(fault);
    print!("{}", format_table(&checks));
    if checks.iter().all(|c| c.passed()) {
        println!("all {} checks passed", checks.len());
        ExitCode::SUCCESS
    } else {
        let failed = checks.iter().filter(|c| !c.passed()).count();
        println!("{failed} of {} checks failed", checks.len());
        ExitCode::from(1)
    }
}

fn phantom(
    kind: String,
    seed: u64,
    output: PathBuf,
    nx: Option<usize>,
    ny: Option<usize>,
    pitch: Option<f64>,
) -> ExitCode {
    let Some(kind) = PhantomKind::parse(&kind) else {
        return usage_error(format!("unknown phantom kind '{kind}', expected r1 or r2"));
    };
    let grid = if nx.is_some() || ny.is_some() || pitch.is_some() {
        let d = kind.default_grid();
        let p = pitch.unwrap_or(d.pitch_x);
        match GridSpec::new(nx.unwrap_or(d.nx), ny.unwrap_or(d.ny), p, p) {
            Ok(g) => Some(g),
            Err(e) => return usage_error(e),
        }
    } else {
        None
    };
    let ph = make_phantom(kind, grid, seed);
    if let Err(e) = std::fs::create_dir_all(&output).map_err(Error::from).and_then(|_| ph.save(&output)) {
        return usage_error(format!("{}: {e}", output.display()));
    }
    println!("{} phantom {}x{} (seed {seed}) written to {}", kind.as_str(), ph.grid.nx, ph.grid.ny, output.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Scan { config, output, jobs } => scan(config, output, jobs),
        Command::Verify { inject_fault } => verify(inject_fault),
        Command::Phantom { kind, seed, output, nx, ny, pitch } => phantom(kind, seed, output, nx, ny, pitch),
    }
}
