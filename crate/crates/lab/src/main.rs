use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use invlab::{emit, list_experiments, resolve_output, run, ExperimentConfig, LabError, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "invlab", version, about = "Model-inversion attack and defense experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Side of the confidence grid emitted for 2-D data.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// List the available experiments.
    List,
    /// Locate the confidence-adaptation minimum for each b.
    Calibrate {
        #[arg(long, value_delimiter = ',', required = true)]
        b: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
    },
}

fn execute(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::List => {
            for (name, desc) in list_experiments() {
                println!("{name:20} {desc}");
            }
        }
        Command::Calibrate { b, a } => {
            println!(
                "{:>8} {:>20} {:>20} {:>10} {:>10}",
                "b", "minimizer", "exp(-1/b)", "|error|", "f'"
            );
            for b in b {
                let p = invlab::calibrate_b(a, b)?;
                println!(
                    "{:>8} {:>20.15} {:>20.15} {:>10.2e} {:>10.2e}",
                    b, p.minimizer, p.expected, p.abs_error, p.derivative
                );
            }
        }
        Command::Run {
            config,
            out,
            seed,
            jobs,
            grid,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| LabError::io(&config, e))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(g) = grid {
                cfg.grid = Some(g);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
            let dir = resolve_output(&cfg.output_dir, root.as_deref());
            let output = run(&cfg, jobs)?;
            let paths = emit(&output, &dir)?;
            let report = &output.report;
            println!(
                "{} (seed {}) in {:.1}s",
                report.experiment, report.base_seed, report.wall_clock_secs
            );
            for row in &report.rows {
                let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "  {:24} acc {:.4}  acc@1 {}  acc@k {}  δ_eval {}  conf {}  grad {}  kes {}",
                    row.variant,
                    row.test_accuracy,
                    f(row.acc_at_1),
                    f(row.acc_at_k),
                    f(row.delta_eval),
                    f(row.mean_confidence),
                    f(row.terminal_grad_norm),
                    f(row.kes)
                );
            }
            for (k, v) in &report.statistics {
                println!("  {k} = {v:.4}");
            }
            println!("wrote {} files under {}", paths.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
