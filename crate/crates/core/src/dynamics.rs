//! Iteration engines, step-size caps and theoretical bounds.
//!
//! * [`marina_run`]: `x_{k+1} = x_k − h g_k`.
//! * [`langevin_marina_run`]: `x_{k+1} = x_k − h g_k + √(2h) Z_{k+1}`.
//! * [`langevin_run`]: the same step with the exact gradient `∇F(x_k)`.
//!
//! All engines run `R` independent chains. Each chain draws from its own
//! addressed streams, chains are stepped in parallel and statistics are
//! reduced in chain order, so a trajectory depends only on the seed.
//!
//! Communication is counted for chain 0, one row per round:
//! the uplink is what devices send to form `g_{k+1}`, the downlink is what
//! the server broadcasts to form `x_{k+1}` (counted once per broadcast).
//! Row 0 holds the initial uplink of `g_0`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::compression::BitAccounting;
use crate::error::{check_dim, Error, Result};
use crate::estimators::{EstimatorSpec, EstimatorState};
use crate::metrics::{moment_summary, GaussianSummary};
use crate::rng::{Purpose, RoundRng, Streams};
use crate::targets::{Point, Problem};

/// What to do when `h` exceeds the theoretical cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapPolicy {
    Off,
    #[default]
    Warn,
    Enforce,
}

/// Law of the starting point `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitLaw {
    Point(Point),
    /// `N(mean, std²·I)`.
    Gaussian { mean: Point, std: f64 },
}

impl InitLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Point(x) => x.len(),
            InitLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn as_gaussian(&self) -> GaussianSummary {
        match self {
            InitLaw::Point(x) => GaussianSummary::isotropic(x.clone(), 0.0),
            InitLaw::Gaussian { mean, std } => GaussianSummary::isotropic(mean.clone(), std * std),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Point {
        match self {
            InitLaw::Point(x) => x.clone(),
            InitLaw::Gaussian { mean, std } => {
                Point::from_fn(mean.len(), |j, _| mean[j] + std * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

/// What a run keeps besides the per-iteration scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSpec {
    /// Moment summaries across chains every this many iterations (0: never).
    /// The last iteration is always included when nonzero.
    pub moments_every: usize,
    /// Pool all chains' iterates from this iteration on.
    pub pool_from: Option<usize>,
    /// Keep every `pool_thin`-th iteration when pooling.
    pub pool_thin: usize,
    pub keep_final: bool,
    /// Keep chain 0's iterates.
    pub keep_path: bool,
    /// Evaluate `F`, `‖∇F‖²` and the estimator error every iteration.
    pub diagnostics: bool,
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            moments_every: 0,
            pool_from: None,
            pool_thin: 1,
            keep_final: true,
            keep_path: false,
            diagnostics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub h: f64,
    /// `K`.
    pub iterations: usize,
    /// `R`.
    pub chains: usize,
    pub seed: u64,
    /// Devices regenerate the server noise from a common seed, so `x_{k+1}`
    /// is not broadcast. Noise is still generated server-side.
    pub shared_noise_seed: bool,
    pub cap_policy: CapPolicy,
    pub init: InitLaw,
    pub record: RecordSpec,
}

impl RunSpec {
    pub fn new(h: f64, iterations: usize, chains: usize, seed: u64, init: InitLaw) -> Self {
        Self {
            h,
            iterations,
            chains,
            seed,
            shared_noise_seed: false,
            cap_policy: CapPolicy::default(),
            init,
            record: RecordSpec::default(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.iterations == 0 || self.chains == 0 {
            return Err(Error::invalid("iterations and chains must be at least 1"));
        }
        if self.record.pool_thin == 0 {
            return Err(Error::invalid("pool thinning must be at least 1"));
        }
        if let InitLaw::Gaussian { std, .. } = self.init {
            if !(std >= 0.0) {
                return Err(Error::invalid("initial standard deviation must be nonnegative"));
            }
        }
        check_dim(dim, self.init.dim())
    }
}

/// Per-iteration statistics. Scalars are chain averages; bits are chain 0's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Mean of `F(x_k)`.
    pub objective: f64,
    /// Mean of `‖∇F(x_k)‖²`.
    pub grad_norm_sq: f64,
    /// Mean of `‖g_k − ∇F(x_k)‖²`.
    pub est_err_sq: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub cum_bits: u64,
    /// Whether chain 0's round took the refresh branch.
    pub refreshed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `K + 1` rows, for `k = 0..=K`.
    pub records: Vec<IterationRecord>,
    /// `(k, summary)` pairs when requested.
    pub moments: Vec<(usize, GaussianSummary)>,
    pub pooled: Vec<Point>,
    pub final_states: Vec<Point>,
    pub path: Vec<Point>,
}

impl Trajectory {
    pub fn total_bits(&self) -> u64 {
        self.records.last().map_or(0, |r| r.cum_bits)
    }

    pub fn moments_at(&self, k: usize) -> Option<&GaussianSummary> {
        self.moments.iter().find(|(j, _)| *j == k).map(|(_, s)| s)
    }
}

#[derive(Clone, Copy)]
enum Algorithm<'a> {
    Marina(&'a EstimatorSpec),
    LangevinMarina(&'a EstimatorSpec),
    Langevin(BitAccounting),
}

struct Chain {
    x: Point,
    state: EstimatorState,
}

struct Stats {
    objective: f64,
    grad_norm_sq: f64,
    est_err_sq: f64,
}

/// MARINA optimization.
pub fn marina_run(problem: &Problem, spec: &EstimatorSpec, run: &RunSpec) -> Result<Trajectory> {
    let c = spec.constants(problem)?;
    let cap = step_cap_opt(problem.constants().smoothness, c.p, c.alpha)?;
    check_cap(run, cap)?;
    engine(problem, Algorithm::Marina(spec), run)
}

/// Langevin-MARINA sampling.
pub fn langevin_marina_run(problem: &Problem, spec: &EstimatorSpec, run: &RunSpec) -> Result<Trajectory> {
    let c = spec.constants(problem)?;
    let cap = sampling_cap_or_first_term(problem, c.p, c.alpha)?;
    check_cap(run, cap)?;
    engine(problem, Algorithm::LangevinMarina(spec), run)
}

/// Plain Langevin with exact gradients; devices upload dense gradients.
pub fn langevin_run(problem: &Problem, run: &RunSpec, accounting: BitAccounting) -> Result<Trajectory> {
    engine(problem, Algorithm::Langevin(accounting), run)
}

fn sampling_cap_or_first_term(problem: &Problem, p: f64, alpha: f64) -> Result<f64> {
    let l = problem.constants().smoothness;
    match problem.constants().mu_lsi {
        Some(mu) if mu > 0.0 => step_cap_sampling(l, p, alpha, mu),
        _ => step_cap_opt(l, p, alpha).map(|_| (p / (1.0 + alpha)).sqrt() / (14.0 * l)),
    }
}

fn check_cap(run: &RunSpec, cap: f64) -> Result<()> {
    if run.h <= cap {
        return Ok(());
    }
    match run.cap_policy {
        CapPolicy::Off => Ok(()),
        CapPolicy::Warn => {
            log::warn!("step size {} exceeds the theoretical cap {cap}", run.h);
            Ok(())
        }
        CapPolicy::Enforce => Err(Error::CapViolation { h: run.h, cap }),
    }
}

fn engine(problem: &Problem, algo: Algorithm<'_>, run: &RunSpec) -> Result<Trajectory> {
    let d = problem.dim();
    let n = problem.devices();
    run.validate(d)?;
    let streams = Streams::new(run.seed);
    let accounting = match algo {
        Algorithm::Marina(s) | Algorithm::LangevinMarina(s) => s.accounting,
        Algorithm::Langevin(a) => a,
    };
    let dense = accounting.dense_bits(d);
    let noisy = !matches!(algo, Algorithm::Marina(_));
    let noise_scale = (2.0 * run.h).sqrt();

    let exact_state = |x: &Point| -> Result<EstimatorState> {
        let mut s = EstimatorState::from_aggregate(problem.grad_full(x)?, n);
        s.uplink_bits = n as u64 * dense;
        s.refreshed = vec![true; n];
        s.last_coin = true;
        Ok(s)
    };

    let mut chains: Vec<Chain> = (0..run.chains)
        .into_par_iter()
        .map(|r| {
            let x = run.init.draw(&mut streams.stream(Purpose::Init, r as u64, 0, 0));
            let state = match algo {
                Algorithm::Marina(s) | Algorithm::LangevinMarina(s) => {
                    s.init(problem, &x, &RoundRng::new(streams, r as u64, 0))?
                }
                Algorithm::Langevin(_) => exact_state(&x)?,
            };
            Ok(Chain { x, state })
        })
        .collect::<Result<_>>()?;

    let diagnostics = |c: &Chain| -> Result<Stats> {
        if !run.record.diagnostics {
            return Ok(Stats {
                objective: f64::NAN,
                grad_norm_sq: f64::NAN,
                est_err_sq: f64::NAN,
            });
        }
        let grad = problem.grad_full(&c.x)?;
        Ok(Stats {
            objective: problem.value(&c.x)?,
            grad_norm_sq: grad.norm_squared(),
            est_err_sq: (&c.state.aggregate - &grad).norm_squared(),
        })
    };

    let mut out = Trajectory {
        records: Vec::with_capacity(run.iterations + 1),
        moments: Vec::new(),
        pooled: Vec::new(),
        final_states: Vec::new(),
        path: Vec::new(),
    };
    let stats: Vec<Stats> = chains.par_iter().map(diagnostics).collect::<Result<_>>()?;
    let mut cum = 0;
    record(&mut out, run, 0, &chains, &stats, chains[0].state.uplink_bits, 0, &mut cum);

    let downlink = match algo {
        Algorithm::Marina(_) => dense,
        Algorithm::LangevinMarina(_) if run.shared_noise_seed => dense,
        Algorithm::LangevinMarina(_) => 2 * dense,
        // Devices cannot rebuild the exact aggregate, so x_{k+1} is always sent.
        Algorithm::Langevin(_) => dense,
    };

    for k in 0..run.iterations {
        let iteration = k as u64 + 1;
        let stats: Vec<Stats> = chains
            .par_iter_mut()
            .enumerate()
            .map(|(r, chain)| {
                let mut x_next = &chain.x - &chain.state.aggregate * run.h;
                if noisy {
                    let mut rng = streams.stream(Purpose::Noise, r as u64, iteration, 0);
                    for v in x_next.iter_mut() {
                        *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                let state = match algo {
                    Algorithm::Marina(s) | Algorithm::LangevinMarina(s) => s.update(
                        problem,
                        &chain.state,
                        &chain.x,
                        &x_next,
                        &RoundRng::new(streams, r as u64, iteration),
                    )?,
                    Algorithm::Langevin(_) => exact_state(&x_next)?,
                };
                chain.x = x_next;
                chain.state = state;
                diagnostics(chain)
            })
            .collect::<Result<_>>()?;
        let up = chains[0].state.uplink_bits;
        record(&mut out, run, k + 1, &chains, &stats, up, downlink, &mut cum);
    }
    if run.record.keep_final {
        out.final_states = chains.into_iter().map(|c| c.x).collect();
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn record(
    out: &mut Trajectory,
    run: &RunSpec,
    k: usize,
    chains: &[Chain],
    stats: &[Stats],
    uplink: u64,
    downlink: u64,
    cum: &mut u64,
) {
    let r = stats.len() as f64;
    let mean = |f: fn(&Stats) -> f64| stats.iter().map(f).sum::<f64>() / r;
    *cum += uplink + downlink;
    out.records.push(IterationRecord {
        k,
        objective: mean(|s| s.objective),
        grad_norm_sq: mean(|s| s.grad_norm_sq),
        est_err_sq: mean(|s| s.est_err_sq),
        uplink_bits: uplink,
        downlink_bits: downlink,
        cum_bits: *cum,
        refreshed: chains[0].state.last_coin,
    });
    let every = run.record.moments_every;
    if every > 0 && chains.len() >= 2 && (k.is_multiple_of(every) || k == run.iterations) {
        let xs: Vec<Point> = chains.iter().map(|c| c.x.clone()).collect();
        if let Ok(s) = moment_summary(&xs) {
            out.moments.push((k, s));
        }
    }
    if let Some(from) = run.record.pool_from {
        if k >= from && (k - from).is_multiple_of(run.record.pool_thin) {
            out.pooled.extend(chains.iter().map(|c| c.x.clone()));
        }
    }
    if run.record.keep_path {
        out.path.push(chains[0].x.clone());
    }
}

fn check_cap_inputs(l: f64, p: f64, alpha: f64) -> Result<()> {
    if !(l > 0.0) {
        return Err(Error::invalid("smoothness must be positive"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("refresh probability must lie in (0, 1]"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be nonnegative"));
    }
    Ok(())
}

/// `min{(1/(14L))·√(p/(1+α)), p/(6μ)}`.
pub fn step_cap_sampling(l: f64, p: f64, alpha: f64, mu: f64) -> Result<f64> {
    check_cap_inputs(l, p, alpha)?;
    if !(mu > 0.0) {
        return Err(Error::invalid("mu must be positive"));
    }
    Ok(((p / (1.0 + alpha)).sqrt() / (14.0 * l)).min(p / (6.0 * mu)))
}

/// `(1/(10L))·√(p/(1+α))`.
pub fn step_cap_opt(l: f64, p: f64, alpha: f64) -> Result<f64> {
    check_cap_inputs(l, p, alpha)?;
    Ok((p / (1.0 + alpha)).sqrt() / (10.0 * l))
}

/// Under a PL condition: the same cap as for sampling.
pub fn step_cap_opt_pl(l: f64, p: f64, alpha: f64, mu: f64) -> Result<f64> {
    step_cap_sampling(l, p, alpha, mu)
}

/// Inputs of the bound evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    /// `L`.
    pub smoothness: f64,
    /// `μ` (LSI for sampling, PL for optimization).
    pub mu: Option<f64>,
    pub h: f64,
    pub p: f64,
    pub alpha: f64,
    pub theta: f64,
    pub dim: usize,
    /// `G_0 = E‖g_0 − ∇F(x_0)‖²`.
    pub g0: f64,
    /// `E F(x_0)`.
    pub f0: Option<f64>,
    pub f_star: Option<f64>,
    /// `KL(ρ_0 ‖ π)`.
    pub kl0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `KL(ρ_k ‖ π)`.
    Kl,
    /// `TV(ρ_k, π)²`.
    Tv2,
    /// `W2(ρ_k, π)²`.
    W22,
    /// Average of `E‖∇F(x_j)‖²` over `j < k`.
    OptAvgGrad,
    /// `E F(x_k) − F*` under PL.
    OptPl,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::Kl,
        BoundKind::Tv2,
        BoundKind::W22,
        BoundKind::OptAvgGrad,
        BoundKind::OptPl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Kl => "kl",
            BoundKind::Tv2 => "tv2",
            BoundKind::W22 => "w2_sq",
            BoundKind::OptAvgGrad => "opt_avg_grad",
            BoundKind::OptPl => "opt_pl",
        }
    }
}

/// `(8L²h²β + 2β) / (1 − (1−p)(4L²h²α + 1)β)`; an error when the denominator is not positive.
pub fn theory_c(l: f64, h: f64, p: f64, alpha: f64, beta: f64) -> Result<f64> {
    let lh2 = l * l * h * h;
    let denom = 1.0 - (1.0 - p) * (4.0 * lh2 * alpha + 1.0) * beta;
    if !(denom > 0.0) {
        return Err(Error::invalid(format!(
            "step size {h} is too large for the bound constants (denominator {denom})"
        )));
    }
    Ok((8.0 * lh2 * beta + 2.0 * beta) / denom)
}

/// `(2L² + C(1−p)L²α)(8Lh²d + 4dh) + Cθ`.
pub fn theory_tau(l: f64, h: f64, p: f64, alpha: f64, theta: f64, dim: usize, c: f64) -> f64 {
    let d = dim as f64;
    (2.0 * l * l + c * (1.0 - p) * l * l * alpha) * (8.0 * l * h * h * d + 4.0 * d * h) + c * theta
}

impl TheoryParams {
    fn need_mu(&self) -> Result<f64> {
        self.mu
            .filter(|&m| m > 0.0)
            .ok_or(Error::MissingConstant("mu"))
    }

    /// `C` with `β = 1`.
    pub fn c_opt(&self) -> Result<f64> {
        theory_c(self.smoothness, self.h, self.p, self.alpha, 1.0)
    }

    /// `C` with `β = e^{μh}`.
    pub fn c_exp(&self) -> Result<f64> {
        let beta = (self.need_mu()? * self.h).exp();
        theory_c(self.smoothness, self.h, self.p, self.alpha, beta)
    }

    pub fn tau(&self) -> Result<f64> {
        Ok(theory_tau(
            self.smoothness,
            self.h,
            self.p,
            self.alpha,
            self.theta,
            self.dim,
            self.c_exp()?,
        ))
    }

    fn decay_weight(&self) -> Result<f64> {
        let mu = self.need_mu()?;
        Ok((1.0 - (-mu * self.h).exp()) / mu)
    }

    /// `F(x_0) + h·C·G_0` (β = 1).
    pub fn psi1(&self) -> Result<f64> {
        let f0 = self.f0.ok_or(Error::MissingConstant("F(x0)"))?;
        Ok(f0 + self.h * self.c_opt()? * self.g0)
    }

    /// `F(x_0) + (1−e^{−μh})/μ·C·G_0`.
    pub fn psi2(&self) -> Result<f64> {
        let f0 = self.f0.ok_or(Error::MissingConstant("F(x0)"))?;
        Ok(f0 + self.decay_weight()? * self.c_exp()? * self.g0)
    }

    /// `KL(ρ_0) + (1−e^{−μh})/μ·C·G_0`.
    pub fn psi3(&self) -> Result<f64> {
        let kl0 = self.kl0.ok_or(Error::MissingConstant("KL(rho0)"))?;
        Ok(kl0 + self.decay_weight()? * self.c_exp()? * self.g0)
    }

    /// The stationary part `(1 − e^{−kμh})/μ·τ` of the KL bound; needs no normalizer.
    pub fn kl_floor(&self, k: usize) -> Result<f64> {
        let mu = self.need_mu()?;
        Ok((1.0 - (-(k as f64) * mu * self.h).exp()) / mu * self.tau()?)
    }
}

/// Evaluates a bound at iteration `k`.
pub fn theory_bound(kind: BoundKind, params: &TheoryParams, k: usize) -> Result<f64> {
    let kf = k as f64;
    let h = params.h;
    let kl = |p: &TheoryParams| -> Result<f64> {
        let mu = p.need_mu()?;
        Ok((-mu * kf * h).exp() * p.psi3()? + p.kl_floor(k)?)
    };
    match kind {
        BoundKind::Kl => kl(params),
        BoundKind::Tv2 => Ok(0.5 * kl(params)?),
        BoundKind::W22 => Ok(2.0 / params.need_mu()? * kl(params)?),
        BoundKind::OptAvgGrad => {
            if k == 0 {
                return Err(Error::invalid("average-gradient bound needs k >= 1"));
            }
            let f_star = params.f_star.ok_or(Error::MissingConstant("F*"))?;
            Ok(2.0 * (params.psi1()? - f_star) / (kf * h) + 2.0 * params.c_opt()? * params.theta)
        }
        BoundKind::OptPl => {
            let mu = params.need_mu()?;
            let f_star = params.f_star.ok_or(Error::MissingConstant("F*"))?;
            let decay = (-mu * kf * h).exp();
            Ok(decay * (params.psi2()? - f_star) + (1.0 - decay) / mu * params.c_exp()? * params.theta)
        }
    }
}

/// Assembles [`TheoryParams`] for `spec` on `problem` with step `h` and start law `init`.
pub fn theory_params(problem: &Problem, spec: &EstimatorSpec, h: f64, init: &InitLaw, sampling: bool) -> Result<TheoryParams> {
    let c = spec.constants(problem)?;
    let consts = problem.constants();
    let start = init.as_gaussian();
    let f0 = expected_value_at_start(problem, init)?;
    let kl0 = match (problem.gaussian_target(), sampling) {
        (Some(target), true) => crate::metrics::kl_gaussian(&start, &target).ok(),
        _ => None,
    };
    Ok(TheoryParams {
        smoothness: consts.smoothness,
        mu: if sampling { consts.mu_lsi } else { consts.mu_pl },
        h,
        p: c.p,
        alpha: c.alpha,
        theta: c.theta,
        dim: problem.dim(),
        g0: spec.initial_error(problem),
        f0,
        f_star: consts.f_star,
        kl0,
    })
}

/// `E F(x_0)`: exact for quadratic targets, `F(mean)` for point starts.
fn expected_value_at_start(problem: &Problem, init: &InitLaw) -> Result<Option<f64>> {
    match init {
        InitLaw::Point(x) => problem.value(x).map(Some),
        InitLaw::Gaussian { mean, std } => match problem.quadratic_form() {
            // E[½xᵀAx − bᵀx] = F(m) + ½s²·tr(A)
            Some((a, _)) => Ok(Some(problem.value(mean)? + 0.5 * std * std * a.eigenvalues().sum())),
            None if *std == 0.0 => problem.value(mean).map(Some),
            None => Ok(None),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{CompressorKind, CompressorSpec};
    use crate::estimators::EstimatorKind;
    use crate::targets::{random_quadratic, QuadraticTerm, SymMatrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn std_quadratic(d: usize) -> Problem {
        let term = QuadraticTerm::new(SymMatrix::identity(d), Point::zeros(d)).unwrap();
        Problem::quadratic_single(vec![term]).unwrap()
    }

    fn exact(d: usize, p: f64) -> EstimatorSpec {
        EstimatorSpec::new(EstimatorKind::Vanilla, p, CompressorSpec::identity(d).unwrap()).unwrap()
    }

    #[test]
    fn cap_examples() {
        let cap = step_cap_sampling(1.0, 0.1, 0.0, 1.0).unwrap();
        assert_relative_eq!(cap, 1.0 / 60.0, epsilon = 1e-15);
        assert!((0.1f64).sqrt() / 14.0 > cap);
        assert_relative_eq!(step_cap_sampling(1.0, 1.0, 0.0, 1e6).unwrap(), 1.0 / 6e6);
        // crossover: 1/14 = 1/(6μ)
        let mu = 14.0 / 6.0;
        let left = step_cap_sampling(1.0, 1.0, 0.0, mu * (1.0 - 1e-9)).unwrap();
        let right = step_cap_sampling(1.0, 1.0, 0.0, mu * (1.0 + 1e-9)).unwrap();
        assert!((left - right).abs() < 1e-9);

        assert_relative_eq!(step_cap_opt(1.0, 1.0, 0.0).unwrap(), 0.1);
        assert_relative_eq!(step_cap_opt(2.0, 1.0, 0.0).unwrap(), 0.05);
        assert_relative_eq!(step_cap_opt(1.0, 1.0, 3.0).unwrap(), 0.05);
        assert!(step_cap_opt(0.0, 1.0, 0.0).is_err());
        assert!(step_cap_sampling(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(step_cap_opt_pl(1.0, 0.5, 0.0, -1.0).is_err());
    }

    #[test]
    fn gradient_descent_closed_form() {
        let p = std_quadratic(1);
        let mut run = RunSpec::new(0.1, 30, 1, 0, InitLaw::Point(pt(&[1.0])));
        run.record.keep_path = true;
        let t = marina_run(&p, &exact(1, 1.0), &run).unwrap();
        assert_eq!(t.records.len(), 31);
        for (k, x) in t.path.iter().enumerate() {
            assert_relative_eq!(x[0], 0.9f64.powi(k as i32), epsilon = 1e-14);
        }
    }

    #[test]
    fn exact_marina_is_monotone_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_quadratic(5, 3, 1, (0.5, 4.0), 2.0, &mut rng).unwrap();
        let l = p.constants().smoothness;
        let run = RunSpec::new(1.5 / l, 100, 1, 0, InitLaw::Point(Point::from_element(5, 3.0)));
        let run = RunSpec { cap_policy: CapPolicy::Off, ..run };
        let t = marina_run(&p, &exact(5, 1.0), &run).unwrap();
        for w in t.records.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-12);
            assert!(w[1].est_err_sq <= 1e-20);
        }
    }

    #[test]
    fn structure_and_positive_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_quadratic(4, 2, 3, (0.5, 2.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(
            EstimatorKind::FiniteSum { minibatch: 1 },
            0.3,
            CompressorSpec::rand_k(1, 4).unwrap(),
        )
        .unwrap();
        let run = RunSpec::new(0.01, 25, 3, 5, InitLaw::Gaussian { mean: Point::zeros(4), std: 1.0 });
        for t in [marina_run(&p, &spec, &run).unwrap(), langevin_marina_run(&p, &spec, &run).unwrap()] {
            assert_eq!(t.records.len(), 26);
            assert_eq!(t.final_states.len(), 3);
            for w in t.records.windows(2) {
                assert!(w[1].cum_bits > w[0].cum_bits);
                assert!(w[1].uplink_bits > 0);
            }
            assert!(t.records[0].uplink_bits > 0);
        }
    }

    #[test]
    fn exact_langevin_marina_reduces_to_langevin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_quadratic(3, 3, 1, (0.5, 2.0), 1.0, &mut rng).unwrap();
        let mut run = RunSpec::new(0.05, 50, 4, 9, InitLaw::Gaussian { mean: Point::zeros(3), std: 2.0 });
        run.record.keep_path = true;
        let a = langevin_marina_run(&p, &exact(3, 1.0), &run).unwrap();
        let b = langevin_run(&p, &run, BitAccounting::default()).unwrap();
        for (x, y) in a.final_states.iter().zip(&b.final_states).chain(a.path.iter().zip(&b.path)) {
            assert!((x - y).amax() <= 1e-12);
        }
    }

    #[test]
    fn shared_noise_seed_saves_one_vector_per_round() {
        let p = std_quadratic(3);
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 0.5, CompressorSpec::rand_k(1, 3).unwrap()).unwrap();
        let run = RunSpec::new(0.01, 10, 2, 0, InitLaw::Point(Point::zeros(3)));
        let shared = RunSpec {
            shared_noise_seed: true,
            ..run.clone()
        };
        let a = langevin_marina_run(&p, &spec, &run).unwrap();
        let b = langevin_marina_run(&p, &spec, &shared).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records).skip(1) {
            assert_eq!(ra.downlink_bits - rb.downlink_bits, 3 * 64);
            assert_eq!(ra.uplink_bits, rb.uplink_bits);
        }
        assert_eq!(a.final_states, b.final_states);
    }

    #[test]
    fn cap_enforcement() {
        let p = std_quadratic(2);
        let run = RunSpec {
            cap_policy: CapPolicy::Enforce,
            ..RunSpec::new(0.5, 5, 1, 0, InitLaw::Point(Point::zeros(2)))
        };
        assert!(matches!(marina_run(&p, &exact(2, 1.0), &run), Err(Error::CapViolation { .. })));
        let warn = RunSpec {
            cap_policy: CapPolicy::Warn,
            ..run
        };
        assert!(marina_run(&p, &exact(2, 1.0), &warn).is_ok());
    }

    #[test]
    fn stationary_variance_of_unit_gaussian_chain() {
        let p = std_quadratic(1);
        let h = 0.1;
        let mut run = RunSpec::new(h, 200, 10_000, 11, InitLaw::Point(pt(&[0.0])));
        run.record.moments_every = 200;
        run.cap_policy = CapPolicy::Off;
        let t = langevin_run(&p, &run, BitAccounting::default()).unwrap();
        let s = t.moments_at(200).unwrap();
        let v = s.covariance.variances()[0];
        let target = 1.0 / (1.0 - h / 2.0);
        // sample-variance SE ≈ v·√(2/(R−1))
        assert!((v - target).abs() <= 4.0 * target * (2.0 / 9_999.0f64).sqrt(), "{v} vs {target}");
    }

    #[test]
    fn chain_moments_follow_the_gaussian_recursion() {
        let a = pt(&[0.5, 2.0]);
        let b = pt(&[1.0, -1.0]);
        let term = QuadraticTerm::new(SymMatrix::Diagonal(a.clone()), b.clone()).unwrap();
        let p = Problem::quadratic_single(vec![term]).unwrap();
        let h = 0.05;
        let r = 20_000;
        let mut run = RunSpec::new(h, 100, r, 4, InitLaw::Gaussian { mean: pt(&[3.0, 3.0]), std: 0.5 });
        run.record.moments_every = 1;
        let t = langevin_run(&p, &run, BitAccounting::default()).unwrap();
        let mut m = pt(&[3.0, 3.0]);
        let mut v = pt(&[0.25, 0.25]);
        for k in 1..=100 {
            for j in 0..2 {
                let c = 1.0 - h * a[j];
                m[j] = c * m[j] + h * b[j];
                v[j] = c * c * v[j] + 2.0 * h;
            }
            if [1, 10, 100].contains(&k) {
                let s = t.moments_at(k).unwrap();
                let var = s.covariance.variances();
                for j in 0..2 {
                    let se_mean = (v[j] / r as f64).sqrt();
                    assert!((s.mean[j] - m[j]).abs() <= 4.0 * se_mean, "k={k} mean");
                    let se_var = v[j] * (2.0 / (r as f64 - 1.0)).sqrt();
                    assert!((var[j] - v[j]).abs() <= 4.0 * se_var, "k={k} variance");
                }
            }
        }
    }

    #[test]
    fn expected_bits_match_refresh_mixture() {
        let d = 20;
        let p = std_quadratic(d);
        let prob = 0.25;
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, prob, CompressorSpec::rand_k(2, d).unwrap()).unwrap();
        let k = 4000;
        let run = RunSpec::new(0.01, k, 1, 3, InitLaw::Point(Point::from_element(d, 1.0)));
        let t = marina_run(&p, &spec, &run).unwrap();
        let full = (d * 64) as f64;
        let compressed = (2 * (64 + 32)) as f64;
        let per_round = prob * full + (1.0 - prob) * compressed;
        let uplink: f64 = t.records[1..].iter().map(|r| r.uplink_bits as f64).sum();
        let sd = (prob * (1.0 - prob)).sqrt() * (full - compressed);
        assert!((uplink / k as f64 - per_round).abs() <= 4.0 * sd / (k as f64).sqrt());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_quadratic(3, 2, 4, (0.5, 2.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(
            EstimatorKind::FiniteSum { minibatch: 2 },
            0.3,
            CompressorSpec::new(CompressorKind::StochasticRound { levels: 2 }, 3).unwrap(),
        )
        .unwrap();
        let mut run = RunSpec::new(0.02, 30, 16, 77, InitLaw::Gaussian { mean: Point::zeros(3), std: 1.0 });
        run.record.moments_every = 5;
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = single.install(|| langevin_marina_run(&p, &spec, &run).unwrap());
        let b = langevin_marina_run(&p, &spec, &run).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn c_and_tau_examples() {
        // p = 1: denominator is 1
        assert_relative_eq!(theory_c(2.0, 0.1, 1.0, 5.0, 1.3).unwrap(), 8.0 * 0.04 * 1.3 + 2.6, epsilon = 1e-15);
        assert!(theory_c(1.0, 1.0, 0.0, 1.0, 1.0).is_err());
        // τ is linear in h at small h when θ = 0
        let tau = |h: f64| {
            let c = theory_c(1.0, h, 0.5, 1.0, (h * 0.5f64).exp()).unwrap();
            theory_tau(1.0, h, 0.5, 1.0, 0.0, 3, c)
        };
        let ratio = tau(1e-6) / tau(2e-6);
        assert_relative_eq!(ratio, 0.5, epsilon = 1e-5);
    }

    fn params(h: f64, kl0: f64) -> TheoryParams {
        TheoryParams {
            smoothness: 2.0,
            mu: Some(0.5),
            h,
            p: 0.2,
            alpha: 1.5,
            theta: 0.0,
            dim: 4,
            g0: 0.3,
            f0: Some(5.0),
            f_star: Some(-1.0),
            kl0: Some(kl0),
        }
    }

    #[test]
    fn kl_bound_limit_is_the_floor() {
        let t = params(1e-3, 10.0);
        let big = 10_000_000;
        let floor = t.tau().unwrap() / 0.5;
        assert_relative_eq!(theory_bound(BoundKind::Kl, &t, big).unwrap(), floor, epsilon = 1e-9);
        assert_relative_eq!(
            theory_bound(BoundKind::Tv2, &t, 10).unwrap(),
            0.5 * theory_bound(BoundKind::Kl, &t, 10).unwrap()
        );
        assert_relative_eq!(
            theory_bound(BoundKind::W22, &t, 10).unwrap(),
            4.0 * theory_bound(BoundKind::Kl, &t, 10).unwrap()
        );
        let missing = TheoryParams { kl0: None, ..t };
        assert!(matches!(theory_bound(BoundKind::Kl, &missing, 1), Err(Error::MissingConstant(_))));
        assert!(missing.kl_floor(5).is_ok());
        assert!(theory_bound(BoundKind::OptAvgGrad, &t, 10).unwrap() > 0.0);
        assert!(theory_bound(BoundKind::OptPl, &t, 10).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn kl_bound_nonincreasing_under_cap(
            l in 0.1f64..10.0,
            p in 0.01f64..1.0,
            alpha in 0.0f64..20.0,
            mu_frac in 0.01f64..1.0,
            h_frac in 0.01f64..1.0,
            theta in 0.0f64..1.0,
            kl0 in 0.0f64..100.0,
            dim in 1usize..50,
        ) {
            let mu = mu_frac * l;
            let h = h_frac * step_cap_sampling(l, p, alpha, mu).unwrap();
            let t = TheoryParams {
                smoothness: l, mu: Some(mu), h, p, alpha, theta, dim,
                g0: 1.0, f0: None, f_star: None, kl0: Some(kl0),
            };
            let c = t.c_exp().unwrap();
            prop_assert!(c >= 0.0);
            let floor = t.tau().unwrap() / mu;
            let mut prev = f64::INFINITY;
            for k in [0usize, 1, 2, 5, 10, 100, 1000, 100_000] {
                let b = theory_bound(BoundKind::Kl, &t, k).unwrap();
                prop_assert!(b.is_finite() && b >= 0.0);
                if t.psi3().unwrap() >= floor {
                    prop_assert!(b <= prev * (1.0 + 1e-12));
                }
                prev = b;
            }
        }
    }
}
