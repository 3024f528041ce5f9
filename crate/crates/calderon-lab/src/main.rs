use std::path::PathBuf;
use std::process::ExitCode;

use calderon_lab::cli::{catalog_text, run_experiment, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calderon-lab", version, about = "Numerical experiments on Calderon commutators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV, JSON and SVG outputs.
    Run(RunArgs),
    /// Print the experiment catalog.
    ListExperiments,
    /// Print the resolved configuration without running anything.
    DumpConfig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines with one section per experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    /// Largest index of the decay study along the n axis.
    #[arg(long)]
    n_max: Option<i64>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    no_plot: bool,
    /// Extra `key=value` settings; dotted keys address sections.
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> calderon_lab::Result<RunConfig> {
        let mut ov = self.overrides.clone();
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                ov.push(format!("{k}={v}"));
            }
        };
        flag("experiment", self.experiment.as_ref().map(|e| format!("\"{e}\"")));
        flag("n", self.n.map(|v| v.to_string()));
        flag("length", self.length.map(|v| format!("{v:?}")));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("out_dir", self.out.as_ref().map(|o| format!("\"{o}\"")));
        flag("decay.n_max", self.n_max.map(|v| v.to_string()));
        flag("growth.d_max", self.d_max.map(|v| v.to_string()));
        if self.no_plot {
            ov.push("plot=false".into());
        }
        RunConfig::load(self.config.as_deref(), &ov)
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("CALDERON_LAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
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
    init_threads();
    match cli.command {
        Command::ListExperiments => {
            print!("{}", catalog_text());
            ExitCode::SUCCESS
        }
        Command::DumpConfig(args) => match args.resolve() {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run(args) => {
            let cfg = match args.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let art = match run_experiment(&cfg) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            for r in &art.record.rows {
                println!("{:<12} {:>6} {:>14.6e} {:>14.6e}", r.label, r.index, r.x, r.value);
            }
            for f in &art.record.fits {
                println!("fit {:<14} slope {:.4} intercept {:.4} R^2 {:.4}", f.name, f.slope, f.intercept, f.r2);
            }
            for n in &art.record.notes {
                println!("note: {n}");
            }
            println!("{}", art.record.verdict);
            match art.save(std::path::Path::new(&cfg.out_dir), cfg.plot) {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            if art.record.passed {
                ExitCode::SUCCESS
            } else {
                println!("threshold not met");
                ExitCode::from(2)
            }
        }
    }
}
