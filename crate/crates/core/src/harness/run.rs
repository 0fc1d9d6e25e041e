//! Executing one configured experiment and writing its trace and header.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{langevin_marina_run, langevin_run, marina_run, theory_params, TheoryParams, Trajectory};
use crate::error::Result;
use crate::harness::config::{Auto, Caps, ExperimentConfig, Mode, Resolved, StepSize};
use crate::metrics::{kl_gaussian, tv_histogram, w2_squared_gaussian, GaussianSummary};
use crate::targets::Problem;

/// Printed into every header: how the empirical columns are estimated.
pub const METRIC_NOTE: &str = "w2_moment and kl_moment compare a Gaussian fitted to the chain moments \
(diagonal covariance) with the Gaussian target; tv_hist uses fixed uniform bins plus one overflow cell.";

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    pub w2_moment: Option<f64>,
    pub kl_moment: Option<f64>,
    pub grad_norm_sq: f64,
    pub est_err_sq: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub cum_bits: u64,
    pub refresh_flag: u8,
}

/// Constants resolved for a run, echoed into the header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub problem: String,
    pub dim: usize,
    pub devices: usize,
    pub smoothness: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    pub estimator: String,
    pub compressor: String,
    pub omega: f64,
    pub zeta: f64,
    pub p: f64,
    pub alpha: f64,
    pub theta: f64,
    pub h: f64,
    pub caps: Caps,
    pub g0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_opt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_exp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi3: Option<f64>,
    pub metric_note: String,
}

/// Scalar results of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub final_objective: f64,
    pub final_grad_norm_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_w2_moment: Option<f64>,
    /// Mean over the last `plateau_fraction` of rows of `plateau_kind`.
    pub plateau_metric: f64,
    /// `w2_sq_moment` (Gaussian targets when sampling), `objective_gap`
    /// (known `F*`) or `objective`.
    pub plateau_kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_hist: Option<f64>,
    pub pooled_samples: usize,
    pub total_bits: u64,
}

#[derive(Debug, Clone, Serialize)]
struct Header<'a> {
    config: &'a ExperimentConfig,
    derived: &'a Derived,
    summary: &'a Summary,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The input configuration with `"auto"` fields replaced by their values.
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub theory: TheoryParams,
    pub trajectory: Trajectory,
    pub rows: Vec<TraceRow>,
    pub summary: Summary,
}

/// Runs the configured algorithm without writing anything.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutcome> {
    let resolved = config.resolve()?;
    let theory = theory_params(
        &resolved.problem,
        &resolved.estimator,
        resolved.run.h,
        &resolved.run.init,
        resolved.mode.is_sampling(),
    )?;
    let derived = derive(&resolved, &theory);
    let trajectory = match resolved.mode {
        Mode::Optimize => marina_run(&resolved.problem, &resolved.estimator, &resolved.run)?,
        Mode::Sample => langevin_marina_run(&resolved.problem, &resolved.estimator, &resolved.run)?,
        Mode::Langevin => langevin_run(&resolved.problem, &resolved.run, resolved.estimator.accounting)?,
    };
    let rows = trace_rows(&resolved.problem, &trajectory)?;
    let summary = summarize(config, &resolved, &trajectory, &rows)?;

    let mut echoed = config.clone();
    echoed.run.h = StepSize::Value(resolved.run.h);
    echoed.estimator.p = Auto::Value(resolved.estimator.p);
    Ok(RunOutcome {
        config: echoed,
        derived,
        theory,
        trajectory,
        rows,
        summary,
    })
}

/// Runs the configured algorithm and writes `trace.csv` and `run_header.toml`
/// into `output.dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    let outcome = execute(config)?;
    if let Some(dir) = &config.output.dir {
        write_outcome(&outcome, dir)?;
    }
    Ok(outcome)
}

pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("trace.csv"), &outcome.rows)?;
    let header = Header {
        config: &outcome.config,
        derived: &outcome.derived,
        summary: &outcome.summary,
    };
    let text = toml::to_string_pretty(&header).map_err(|e| crate::Error::config("<header>", e.to_string()))?;
    fs::write(dir.join("run_header.toml"), text)?;
    Ok(())
}

/// Writes rows with a header line, `,` separators and LF line endings.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn derive(r: &Resolved, t: &TheoryParams) -> Derived {
    let consts = r.problem.constants();
    Derived {
        problem: r.problem.kind().name().to_string(),
        dim: r.problem.dim(),
        devices: r.problem.devices(),
        smoothness: consts.smoothness,
        mu: t.mu,
        f_star: consts.f_star,
        estimator: r.estimator.kind.name().to_string(),
        compressor: r.estimator.compressor.kind.name().to_string(),
        omega: r.estimator.compressor.omega,
        zeta: r.estimator.compressor.zeta,
        p: t.p,
        alpha: t.alpha,
        theta: t.theta,
        h: t.h,
        caps: r.caps,
        g0: t.g0,
        kl0: t.kl0,
        c_opt: t.c_opt().ok(),
        c_exp: t.c_exp().ok(),
        tau: t.tau().ok(),
        psi1: t.psi1().ok(),
        psi2: t.psi2().ok(),
        psi3: t.psi3().ok(),
        metric_note: METRIC_NOTE.to_string(),
    }
}

/// `(W2², KL)` of a moment summary against the Gaussian target.
pub fn moment_distances(summary: &GaussianSummary, target: &GaussianSummary) -> Result<(f64, f64)> {
    Ok((w2_squared_gaussian(summary, target)?, kl_gaussian(summary, target)?))
}

fn trace_rows(problem: &Problem, t: &Trajectory) -> Result<Vec<TraceRow>> {
    let target = problem.gaussian_target();
    let mut moments = t.moments.iter().peekable();
    let mut rows = Vec::with_capacity(t.records.len());
    for rec in &t.records {
        let mut w2 = None;
        let mut kl = None;
        while moments.peek().is_some_and(|(k, _)| *k < rec.k) {
            moments.next();
        }
        if let (Some(target), Some((k, s))) = (&target, moments.peek()) {
            if *k == rec.k {
                let (w, d) = moment_distances(s, target)?;
                w2 = Some(w.sqrt());
                kl = Some(d);
            }
        }
        rows.push(TraceRow {
            k: rec.k,
            objective: rec.objective,
            w2_moment: w2,
            kl_moment: kl,
            grad_norm_sq: rec.grad_norm_sq,
            est_err_sq: rec.est_err_sq,
            uplink_bits: rec.uplink_bits,
            downlink_bits: rec.downlink_bits,
            cum_bits: rec.cum_bits,
            refresh_flag: rec.refreshed as u8,
        });
    }
    Ok(rows)
}

fn summarize(config: &ExperimentConfig, r: &Resolved, t: &Trajectory, rows: &[TraceRow]) -> Result<Summary> {
    let last = rows.last().expect("a trajectory has at least one row");
    let tail = ((rows.len() as f64 * config.metrics.plateau_fraction).ceil() as usize).clamp(1, rows.len());
    let tail_rows = &rows[rows.len() - tail..];
    let w2_tail: Vec<f64> = tail_rows.iter().filter_map(|row| row.w2_moment).map(|w| w * w).collect();
    let f_star = r.problem.constants().f_star;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (plateau_metric, plateau_kind) = if r.mode.is_sampling() && !w2_tail.is_empty() {
        (mean(&w2_tail), "w2_sq_moment")
    } else {
        let objectives: Vec<f64> = tail_rows.iter().map(|row| row.objective).collect();
        match f_star {
            Some(f) if !r.mode.is_sampling() => (mean(&objectives) - f, "objective_gap"),
            _ => (mean(&objectives), "objective"),
        }
    };
    let tv_hist = match (&r.hist, t.pooled.is_empty()) {
        (Some(spec), false) => {
            let problem = &r.problem;
            match problem.log_normalizer() {
                Some(_) => Some(tv_histogram(
                    &t.pooled,
                    |x| {
                        problem
                            .log_density(x)
                            .ok()
                            .flatten()
                            .map_or(0.0, f64::exp)
                    },
                    spec,
                )?),
                None => None,
            }
        }
        _ => None,
    };
    Ok(Summary {
        final_objective: last.objective,
        final_grad_norm_sq: last.grad_norm_sq,
        final_w2_moment: last.w2_moment,
        plateau_metric,
        plateau_kind: plateau_kind.to_string(),
        tv_hist,
        pooled_samples: t.pooled.len(),
        total_bits: t.total_bits(),
    })
}
