//! Grid sweeps: one run per grid point and replicate, plus `summary.csv`.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::compression::CompressorKind;
use crate::error::{Error, Result};
use crate::harness::config::{Auto, ExperimentConfig, ProblemConfig, StepSize, SweepGrid};
use crate::harness::run::{run_experiment, write_csv, RunOutcome};
use crate::rng::{Purpose, Streams};

/// One grid point's overrides.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GridPoint {
    pub h: Option<f64>,
    pub p: Option<f64>,
    pub k: Option<usize>,
    pub batch: Option<usize>,
    pub minibatch: Option<usize>,
    pub iterations: Option<usize>,
}

impl SweepGrid {
    /// Cartesian product in axis order `h, p, k, batch, minibatch, iterations`,
    /// the last axis varying fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for &h in &axis(&self.h) {
            for &p in &axis(&self.p) {
                for &k in &axis(&self.k) {
                    for &batch in &axis(&self.batch) {
                        for &minibatch in &axis(&self.minibatch) {
                            for &iterations in &axis(&self.iterations) {
                                out.push(GridPoint {
                                    h,
                                    p,
                                    k,
                                    batch,
                                    minibatch,
                                    iterations,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl GridPoint {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(h) = self.h {
            config.run.h = StepSize::Value(h);
        }
        if let Some(p) = self.p {
            config.estimator.p = Auto::Value(p);
        }
        if let Some(k) = self.k {
            config.compressor = CompressorKind::RandK { k };
        }
        if let Some(b) = self.batch {
            config.estimator.batch = Some(b);
        }
        if let Some(b) = self.minibatch {
            config.estimator.minibatch = Some(b);
        }
        if let Some(k) = self.iterations {
            config.run.iterations = k;
        }
    }
}

/// One row of `summary.csv`: replicate means at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub h: f64,
    pub p: f64,
    pub k: Option<usize>,
    pub batch: Option<usize>,
    pub minibatch: Option<usize>,
    pub iterations: usize,
    pub replicates: usize,
    pub final_objective: f64,
    /// Final moment-proxy W2 when available, else the final objective.
    pub final_metric: f64,
    pub plateau_metric: f64,
    pub plateau_kind: String,
    pub cum_bits: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Runs in `(point, replicate)` order.
    pub runs: Vec<RunOutcome>,
}

/// Runs every grid point `replicates` times with seeds derived from the base
/// seed and the run index. Random problem instances are pinned to the base
/// seed so all points share one instance. With `output.dir` set, run `j` of
/// point `i` writes into `point_{i:03}/rep_{j:02}` and `summary.csv` goes to
/// the root.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepOutcome> {
    if grid.replicates == 0 {
        return Err(Error::config("sweep.replicates", "must be at least 1"));
    }
    let mut pinned = base.clone();
    pinned.problem.pin_instance_seed(base.run.seed);
    pinned.sweep = None;
    let points = grid.points();
    let streams = Streams::new(base.run.seed);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..grid.replicates).map(move |j| (i, j)))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let mut config = pinned.clone();
            points[i].apply(&mut config);
            config.run.seed = streams.child_seed(Purpose::Sweep, (i * grid.replicates + j) as u64);
            config.output.dir = base
                .output
                .dir
                .as_ref()
                .map(|d| d.join(point_dir(i)).join(format!("rep_{j:02}")));
            run_experiment(&config)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<SweepRow> = runs
        .chunks(grid.replicates)
        .enumerate()
        .map(|(i, reps)| summary_row(i, &points[i], reps))
        .collect();
    if let Some(dir) = &base.output.dir {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("summary.csv"), &rows)?;
    }
    Ok(SweepOutcome { rows, runs })
}

fn point_dir(i: usize) -> PathBuf {
    PathBuf::from(format!("point_{i:03}"))
}

fn summary_row(index: usize, point: &GridPoint, reps: &[RunOutcome]) -> SweepRow {
    let n = reps.len() as f64;
    let mean = |f: &dyn Fn(&RunOutcome) -> f64| reps.iter().map(f).sum::<f64>() / n;
    let first = &reps[0];
    SweepRow {
        index,
        h: first.derived.h,
        p: first.derived.p,
        k: match first.config.compressor {
            CompressorKind::RandK { k } => Some(k),
            _ => point.k,
        },
        batch: first.config.estimator.batch,
        minibatch: first.config.estimator.minibatch,
        iterations: first.config.run.iterations,
        replicates: reps.len(),
        final_objective: mean(&|r| r.summary.final_objective),
        final_metric: mean(&|r| r.summary.final_w2_moment.unwrap_or(r.summary.final_objective)),
        plateau_metric: mean(&|r| r.summary.plateau_metric),
        plateau_kind: first.summary.plateau_kind.clone(),
        cum_bits: mean(&|r| r.summary.total_bits as f64),
    }
}

impl ProblemConfig {
    /// Fixes the random-instance seed to what `run_seed` would select.
    pub fn pin_instance_seed(&mut self, run_seed: u64) {
        let derived = Streams::new(run_seed).child_seed(Purpose::Instance, 0);
        match self {
            ProblemConfig::Quadratic { instance_seed, .. }
            | ProblemConfig::Streaming { instance_seed, .. }
            | ProblemConfig::Logistic { instance_seed, .. } => {
                instance_seed.get_or_insert(derived);
            }
            ProblemConfig::Mixture { .. } => {}
        }
    }
}
