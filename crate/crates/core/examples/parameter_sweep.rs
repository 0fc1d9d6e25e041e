//! Sweeps the compression level `k` of RandK and the refresh probability on
//! one problem instance, trading bits against accuracy. Writes `summary.csv`
//! and per-run traces under the temp directory.
//!
//! ```text
//! cargo run --release --example parameter_sweep
//! ```

use langevin_marina::harness::{self, ExperimentConfig, SweepGrid};

const CONFIG: &str = r#"
[problem]
kind = "quadratic"
dim = 20
devices = 4
curvature = [1.0, 2.0]

[compressor]
kind = "rand-k"
k = 2

[run]
mode = "sample"
h = 0.01
iterations = 300
chains = 500
seed = 3

[run.init]
mean = 5.0
"#;

fn main() -> langevin_marina::Result<()> {
    let mut config = ExperimentConfig::from_toml_str(CONFIG)?;
    let dir = std::env::temp_dir().join("lmarina_sweep");
    config.output.dir = Some(dir.clone());
    let grid = SweepGrid {
        k: vec![20, 10, 4, 2],
        p: vec![0.1, 0.5],
        replicates: 2,
        ..SweepGrid::default()
    };
    let out = harness::sweep(&config, &grid)?;
    println!("{:>4} {:>5} {:>12} {:>14}", "k", "p", "bits", "W2^2 plateau");
    for row in &out.rows {
        println!(
            "{:>4} {:>5} {:>12.0} {:>14.5e}",
            row.k.unwrap_or_default(),
            row.p,
            row.cum_bits,
            row.plateau_metric
        );
    }
    println!("wrote {}", dir.join("summary.csv").display());
    Ok(())
}
