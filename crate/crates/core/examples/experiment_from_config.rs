//! Loads a TOML experiment, runs it and writes `trace.csv` and
//! `run_header.toml`. Defaults to `configs/gaussian_sample.toml`.
//!
//! ```text
//! cargo run --release --example experiment_from_config -- configs/quadratic_optimize.toml
//! ```

use std::path::PathBuf;

use langevin_marina::harness::{self, ExperimentConfig};

fn main() -> langevin_marina::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/gaussian_sample.toml")));
    let mut config = ExperimentConfig::from_file(&path)?;
    let dir = std::env::temp_dir().join("lmarina_example");
    config.output.dir = Some(dir.clone());

    let out = harness::run_experiment(&config)?;
    let d = &out.derived;
    println!("{} on {} devices, d = {}", d.estimator, d.devices, d.dim);
    println!("p = {}, alpha = {:.4}, theta = {:.4}, h = {:.4e}", d.p, d.alpha, d.theta, d.h);
    let show = |cap: Option<f64>| cap.map_or("-".into(), |c| format!("{c:.4e}"));
    println!(
        "caps: opt {}, opt-pl {}, sampling {}",
        show(d.caps.opt),
        show(d.caps.opt_pl),
        show(d.caps.sampling)
    );
    let last = out.rows.last().expect("at least one row");
    println!(
        "final: objective {:.6e}, W2 {}, bits {}",
        last.objective,
        show(last.w2_moment),
        last.cum_bits
    );
    println!("{} = {:.4e}", out.summary.plateau_kind, out.summary.plateau_metric);
    println!("wrote {}", dir.display());
    Ok(())
}
