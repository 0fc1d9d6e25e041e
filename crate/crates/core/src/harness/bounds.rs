//! Bound curves `k ↦ theory_bound(kind, k)` next to the empirical metrics.

use serde::Serialize;

use crate::dynamics::{theory_bound, theory_params, BoundKind, TheoryParams};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{execute, moment_distances, write_csv, RunOutcome};

/// One row of `bounds.csv`. Unavailable values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub k: usize,
    pub kl: Option<f64>,
    pub tv2: Option<f64>,
    pub w2_sq: Option<f64>,
    pub opt_avg_grad: Option<f64>,
    pub opt_pl: Option<f64>,
    pub kl_floor: Option<f64>,
    pub c_opt: Option<f64>,
    pub c_exp: Option<f64>,
    pub tau: Option<f64>,
    /// `C·θ` with `β = e^{μh}`: the residual contribution of the oracle noise to `τ`.
    pub c_theta: Option<f64>,
    pub empirical_objective_gap: Option<f64>,
    pub empirical_avg_grad_norm_sq: Option<f64>,
    pub empirical_w2_sq: Option<f64>,
    pub empirical_kl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundsOutcome {
    pub theory: TheoryParams,
    pub rows: Vec<BoundRow>,
    /// Bound kinds that could not be evaluated, with the reason.
    pub missing: Vec<(BoundKind, String)>,
    pub run: Option<RunOutcome>,
}

/// Evaluates every bound for `k = 0..=K`. With `empirical`, also runs the
/// experiment and fills the empirical columns. Writes `bounds.csv` into
/// `output.dir` when set.
pub fn bounds(config: &ExperimentConfig, empirical: bool) -> Result<BoundsOutcome> {
    let r = config.resolve()?;
    let theory = theory_params(&r.problem, &r.estimator, r.run.h, &r.run.init, r.mode.is_sampling())?;
    let run = if empirical { Some(execute(config)?) } else { None };
    let target = r.problem.gaussian_target();
    let iterations = config.run.iterations;

    let mut missing = Vec::new();
    for kind in BoundKind::ALL {
        if let Err(e) = theory_bound(kind, &theory, iterations.max(1)) {
            missing.push((kind, e.to_string()));
        }
    }
    let eval = |kind: BoundKind, k: usize| theory_bound(kind, &theory, k).ok();

    let f_star = theory.f_star;
    let mut grad_sum = 0.0;
    let mut rows = Vec::with_capacity(iterations + 1);
    for k in 0..=iterations {
        let mut row = BoundRow {
            k,
            kl: eval(BoundKind::Kl, k),
            tv2: eval(BoundKind::Tv2, k),
            w2_sq: eval(BoundKind::W22, k),
            opt_avg_grad: eval(BoundKind::OptAvgGrad, k),
            opt_pl: eval(BoundKind::OptPl, k),
            kl_floor: theory.kl_floor(k).ok(),
            c_opt: theory.c_opt().ok(),
            c_exp: theory.c_exp().ok(),
            tau: theory.tau().ok(),
            c_theta: theory.c_exp().ok().map(|c| c * theory.theta),
            empirical_objective_gap: None,
            empirical_avg_grad_norm_sq: None,
            empirical_w2_sq: None,
            empirical_kl: None,
        };
        if let Some(run) = &run {
            let rec = &run.trajectory.records[k];
            row.empirical_objective_gap = f_star.map(|f| rec.objective - f);
            row.empirical_avg_grad_norm_sq = (k > 0).then(|| grad_sum / k as f64);
            grad_sum += rec.grad_norm_sq;
            if let (Some(target), Some(s)) = (&target, run.trajectory.moments_at(k)) {
                let (w, d) = moment_distances(s, target)?;
                row.empirical_w2_sq = Some(w);
                row.empirical_kl = Some(d);
            }
        }
        rows.push(row);
    }

    if let Some(dir) = &config.output.dir {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("bounds.csv"), &rows)?;
    }
    Ok(BoundsOutcome {
        theory,
        rows,
        missing,
        run,
    })
}
