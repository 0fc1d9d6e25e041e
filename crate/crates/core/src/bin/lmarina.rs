//! Command-line front end. Flags override config-file fields, which override
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use langevin_marina::harness::config::{Auto, Mode};
use langevin_marina::harness::{self, exit, ExperimentConfig, StepSize, ValidateOptions};
use langevin_marina::Result;

#[derive(Parser)]
#[command(name = "lmarina", version, about = "Compressed federated Langevin sampling and MARINA optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv and run_header.toml.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the property suite and print a JSON report.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 5)]
        points: usize,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write bounds.csv: theoretical curves next to empirical metrics.
    Bounds {
        config: PathBuf,
        /// Skip the experiment and leave the empirical columns empty.
        #[arg(long)]
        no_empirical: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a parameter grid and write summary.csv. Axis flags replace the
    /// matching axes of the file's [sweep] table.
    Sweep {
        config: PathBuf,
        #[arg(long = "grid-h", value_delimiter = ',')]
        grid_h: Vec<f64>,
        #[arg(long = "grid-p", value_delimiter = ',')]
        grid_p: Vec<f64>,
        #[arg(long = "grid-k", value_delimiter = ',')]
        grid_k: Vec<usize>,
        #[arg(long = "grid-batch", value_delimiter = ',')]
        grid_batch: Vec<usize>,
        #[arg(long = "grid-minibatch", value_delimiter = ',')]
        grid_minibatch: Vec<usize>,
        #[arg(long = "grid-iterations", value_delimiter = ',')]
        grid_iterations: Vec<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// A number or one of auto-cap, cap-opt, cap-opt-pl, cap-sampling.
    #[arg(long)]
    h: Option<StepSize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shared_noise_seed: bool,
    #[arg(long)]
    enforce_cap: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "optimize" => Ok(Mode::Optimize),
        "sample" => Ok(Mode::Sample),
        "langevin" => Ok(Mode::Langevin),
        _ => Err("expected optimize, sample or langevin".into()),
    }
}

impl Overrides {
    fn load(&self, path: &Path) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::from_file(path)?;
        let r = &mut c.run;
        if let Some(m) = self.mode {
            r.mode = m;
        }
        if let Some(h) = self.h {
            r.h = h;
        }
        if let Some(k) = self.iterations {
            r.iterations = k;
        }
        if let Some(n) = self.chains {
            r.chains = n;
        }
        if let Some(s) = self.seed {
            r.seed = s;
        }
        r.shared_noise_seed |= self.shared_noise_seed;
        r.enforce_cap |= self.enforce_cap;
        if let Some(p) = self.p {
            c.estimator.p = Auto::Value(p);
        }
        if let Some(dir) = &self.out {
            c.output.dir = Some(dir.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            harness::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run { config, overrides } => {
            let c = overrides.load(&config)?;
            let out = harness::run_experiment(&c)?;
            print!("{}", toml_text(&out.summary));
            Ok(exit::OK)
        }
        Command::Validate {
            seed,
            draws,
            points,
            report,
        } => {
            let r = harness::validate(&ValidateOptions { seed, draws, points });
            let text = serde_json::to_string_pretty(&r).expect("report serializes");
            println!("{text}");
            if let Some(path) = report {
                std::fs::write(path, text + "\n")?;
            }
            Ok(if r.passed { exit::OK } else { exit::VALIDATE })
        }
        Command::Bounds {
            config,
            no_empirical,
            overrides,
        } => {
            let c = overrides.load(&config)?;
            let out = harness::bounds(&c, !no_empirical)?;
            for (kind, why) in &out.missing {
                eprintln!("bound {} unavailable: {why}", kind.name());
            }
            if c.output.dir.is_none() {
                eprintln!("no output.dir set; nothing written");
            }
            Ok(exit::OK)
        }
        Command::Sweep {
            config,
            grid_h,
            grid_p,
            grid_k,
            grid_batch,
            grid_minibatch,
            grid_iterations,
            replicates,
            overrides,
        } => {
            let c = overrides.load(&config)?;
            let mut grid = c.sweep.clone().unwrap_or_default();
            replace_axis(&mut grid.h, grid_h);
            replace_axis(&mut grid.p, grid_p);
            replace_axis(&mut grid.k, grid_k);
            replace_axis(&mut grid.batch, grid_batch);
            replace_axis(&mut grid.minibatch, grid_minibatch);
            replace_axis(&mut grid.iterations, grid_iterations);
            if let Some(n) = replicates {
                grid.replicates = n;
            }
            let out = harness::sweep(&c, &grid)?;
            println!("{} grid points, {} runs", out.rows.len(), out.runs.len());
            Ok(exit::OK)
        }
    }
}

fn replace_axis<T>(axis: &mut Vec<T>, flag: Vec<T>) {
    if !flag.is_empty() {
        *axis = flag;
    }
}

fn toml_text<T: serde::Serialize>(value: &T) -> String {
    toml::to_string(value).unwrap_or_default()
}
