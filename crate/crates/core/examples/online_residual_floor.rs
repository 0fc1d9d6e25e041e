//! Streaming gradients with the online estimator: the stationary error floor
//! shrinks as the refresh batch grows. The runs use a step above the cap so
//! the floor clears Monte Carlo noise; the `C·θ` term of the bound, which
//! scales as `1/b`, is evaluated at the sampling cap where `C` is finite.
//!
//! ```text
//! cargo run --release --example online_residual_floor
//! ```

use langevin_marina::harness::{self, ExperimentConfig, StepSize, SweepGrid};

const CONFIG: &str = r#"
[problem]
kind = "streaming"
dim = 2
devices = 4
curvature = [1.0, 1.0]
sigma = 1.0

[estimator]
kind = "online"
p = 0.1
batch = 5
minibatch = 1

[run]
mode = "sample"
h = 0.1
iterations = 400
chains = 2000
seed = 81
"#;

fn main() -> langevin_marina::Result<()> {
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    let grid = SweepGrid {
        batch: vec![5, 10, 20, 40],
        replicates: 3,
        ..SweepGrid::default()
    };
    let out = harness::sweep(&config, &grid)?;
    println!("{:>6} {:>14} {:>14} {:>12}", "batch", "W2^2 plateau", "C*theta", "theta");
    for (row, run) in out.rows.iter().zip(out.runs.iter().step_by(grid.replicates)) {
        let mut at_cap = run.config.clone();
        at_cap.run.h = StepSize::CapSampling;
        let c_theta = harness::bounds(&at_cap, false)?.rows[0].c_theta.unwrap_or(f64::NAN);
        println!(
            "{:>6} {:>14.5e} {:>14.5e} {:>12.5e}",
            row.batch.unwrap_or_default(),
            row.plateau_metric,
            c_theta,
            run.derived.theta
        );
    }
    let ratio = out.rows[0].plateau_metric / out.rows[2].plateau_metric;
    println!("plateau ratio b=5 / b=20: {ratio:.2}");
    Ok(())
}
