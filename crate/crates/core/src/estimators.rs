//! The MARINA gradient-estimator family.
//!
//! Each device keeps an estimate `g^i` of its rescaled local gradient
//! `n·∇F_i`, so the server aggregate `g = (1/n)Σ_i g^i` estimates
//! `∇F = Σ_i ∇F_i`. Per round, a coin with success probability `p` picks
//! a branch:
//!
//! * refresh: `g^i_{k+1}` is the exact (vanilla, finite-sum) or `b`-batch
//!   (online) rescaled local gradient at `x_{k+1}`, sent uncompressed;
//! * otherwise: `g^i_{k+1} = g_k + Q(n·Δ_i)`, where `Δ_i` is the exact
//!   (vanilla) or `b'`-minibatch (finite-sum, online) gradient difference
//!   between `x_{k+1}` and `x_k`. The memory term is the previous aggregate.
//!
//! Minibatches are drawn with replacement. In the online variant the same
//! draws are evaluated at both points, so additive noise cancels in `Δ_i`.
//!
//! The recursion `G_{k+1} ≤ (1−p)G_k + (1−p)L²α‖x_{k+1} − x_k‖² + θ` holds
//! with `G_k = E‖g_k − ∇F(x_k)‖²` and the constants from [`EstimatorSpec::constants`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compression::{encoded_bits, BitAccounting, CompressorSpec};
use crate::error::{check_dim, Error, Result};
use crate::rng::RoundRng;
use crate::targets::{Point, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorKind {
    Vanilla,
    FiniteSum { minibatch: usize },
    Online { batch: usize, minibatch: usize },
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Vanilla => "vanilla",
            EstimatorKind::FiniteSum { .. } => "finite-sum",
            EstimatorKind::Online { .. } => "online",
        }
    }
}

/// Whether one refresh coin is shared by all devices per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoinScope {
    #[default]
    Shared,
    PerDevice,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Refresh probability, in `(0, 1]`.
    pub p: f64,
    pub compressor: CompressorSpec,
    pub coin_scope: CoinScope,
    pub accounting: BitAccounting,
}

/// Recursion constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarinaConstants {
    pub alpha: f64,
    pub theta: f64,
    pub p: f64,
}

/// `ω·Σ L_i² / (n² L²)`, with `L_i` the smoothness of what device `i` transmits.
pub fn alpha_vanilla(omega: f64, device_smoothness: &[f64], smoothness: f64) -> f64 {
    let n = device_smoothness.len() as f64;
    let sum_sq: f64 = device_smoothness.iter().map(|l| l * l).sum();
    omega * sum_sq / (n * n * smoothness * smoothness)
}

/// `(ω·Σ L_i² + (1+ω)·Σ ℒ_i² / b′) / (n² L²)`.
pub fn alpha_minibatch(
    omega: f64,
    device_smoothness: &[f64],
    sample_smoothness: &[f64],
    minibatch: usize,
    smoothness: f64,
) -> f64 {
    let n = device_smoothness.len() as f64;
    let sum_sq: f64 = device_smoothness.iter().map(|l| l * l).sum();
    let sample_sq: f64 = sample_smoothness.iter().map(|l| l * l).sum();
    (omega * sum_sq + (1.0 + omega) * sample_sq / minibatch as f64) / (n * n * smoothness * smoothness)
}

/// `p·Σ σ_i² / (n² b)`.
pub fn theta_online(p: f64, sigma: &[f64], batch: usize) -> f64 {
    let n = sigma.len() as f64;
    p * sigma.iter().map(|s| s * s).sum::<f64>() / (n * n * batch as f64)
}

/// Refresh probability balancing the two branches' expected cost:
/// `ζ/d` (vanilla), `min{ζ/d, b′/(N+b′)}` (finite-sum),
/// `min{ζ/d, b′/(b+b′)}` (online), clamped to `(0, 1]`.
pub fn default_p(kind: &EstimatorKind, compressor: &CompressorSpec, samples: Option<usize>) -> f64 {
    let ratio = compressor.zeta / compressor.dim as f64;
    let p = match *kind {
        EstimatorKind::Vanilla => ratio,
        EstimatorKind::FiniteSum { minibatch } => match samples {
            Some(n) => ratio.min(minibatch as f64 / (n + minibatch) as f64),
            None => ratio,
        },
        EstimatorKind::Online { batch, minibatch } => {
            ratio.min(minibatch as f64 / (batch + minibatch) as f64)
        }
    };
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, p: f64, compressor: CompressorSpec) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("refresh probability must lie in (0, 1], got {p}")));
        }
        match kind {
            EstimatorKind::FiniteSum { minibatch: 0 } | EstimatorKind::Online { minibatch: 0, .. } => {
                return Err(Error::invalid("minibatch size must be at least 1"));
            }
            EstimatorKind::Online { batch: 0, .. } => {
                return Err(Error::invalid("refresh batch size must be at least 1"));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            p,
            compressor,
            coin_scope: CoinScope::Shared,
            accounting: BitAccounting::default(),
        })
    }

    /// Uses [`default_p`] for the refresh probability.
    pub fn with_default_p(kind: EstimatorKind, compressor: CompressorSpec, samples: Option<usize>) -> Result<Self> {
        Self::new(kind, default_p(&kind, &compressor, samples), compressor)
    }

    pub fn with_coin_scope(mut self, scope: CoinScope) -> Self {
        self.coin_scope = scope;
        self
    }

    pub fn with_accounting(mut self, accounting: BitAccounting) -> Self {
        self.accounting = accounting;
        self
    }

    /// Checks that the variant fits the problem.
    pub fn check_problem(&self, problem: &Problem) -> Result<()> {
        check_dim(problem.dim(), self.compressor.dim)?;
        match self.kind {
            EstimatorKind::FiniteSum { .. } if !problem.is_finite_sum() => Err(Error::UnsupportedKind {
                op: "finite-sum estimator",
                kind: problem.kind().name(),
            }),
            EstimatorKind::Online { .. } if !problem.is_streaming() => Err(Error::UnsupportedKind {
                op: "online estimator",
                kind: problem.kind().name(),
            }),
            _ => Ok(()),
        }
    }

    /// `α`, `θ` and `p` for this estimator on `problem`.
    pub fn constants(&self, problem: &Problem) -> Result<MarinaConstants> {
        self.check_problem(problem)?;
        let c = problem.constants();
        if !(c.smoothness > 0.0) {
            return Err(Error::MissingConstant("smoothness"));
        }
        // Devices transmit n-scaled quantities, so their constants scale by n.
        let n = problem.devices() as f64;
        let scaled = |v: &[f64]| v.iter().map(|x| n * x).collect::<Vec<_>>();
        let lips = scaled(&c.device_smoothness);
        let omega = self.compressor.omega;
        let (alpha, theta) = match self.kind {
            EstimatorKind::Vanilla => (alpha_vanilla(omega, &lips, c.smoothness), 0.0),
            EstimatorKind::FiniteSum { minibatch } => (
                alpha_minibatch(omega, &lips, &scaled(&c.sample_smoothness), minibatch, c.smoothness),
                0.0,
            ),
            EstimatorKind::Online { batch, minibatch } => (
                alpha_minibatch(omega, &lips, &scaled(&c.sample_smoothness), minibatch, c.smoothness),
                theta_online(self.p, &scaled(&c.stream_sigma), batch),
            ),
        };
        Ok(MarinaConstants {
            alpha,
            theta,
            p: self.p,
        })
    }

    /// `G_0 = E‖g_0 − ∇F(x_0)‖²`: zero except for the online variant.
    pub fn initial_error(&self, problem: &Problem) -> f64 {
        match self.kind {
            EstimatorKind::Online { batch, .. } => {
                problem.constants().stream_sigma.iter().map(|s| s * s).sum::<f64>() / batch as f64
            }
            _ => 0.0,
        }
    }

    /// `g_0^i` for every device, all sent uncompressed.
    pub fn init(&self, problem: &Problem, x0: &Point, rng: &RoundRng) -> Result<EstimatorState> {
        self.check_problem(problem)?;
        check_dim(problem.dim(), x0.len())?;
        let n = problem.devices();
        let devices = (0..n)
            .map(|i| self.refresh(problem, i, x0, &mut rng.device(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EstimatorState::assemble(
            devices,
            vec![true; n],
            n as u64 * self.accounting.dense_bits(problem.dim()),
        ))
    }

    fn refresh<R: Rng>(&self, problem: &Problem, device: usize, x: &Point, rng: &mut R) -> Result<Point> {
        let n = problem.devices() as f64;
        Ok(match self.kind {
            EstimatorKind::Vanilla | EstimatorKind::FiniteSum { .. } => problem.grad_device(device, x)? * n,
            EstimatorKind::Online { batch, .. } => {
                let mut sum = Point::zeros(problem.dim());
                for _ in 0..batch {
                    sum += problem.grad_stream(device, rng, x)?;
                }
                sum * (n / batch as f64)
            }
        })
    }

    /// `n·Δ_i` for the compressed branch.
    fn difference<R: Rng>(&self, problem: &Problem, device: usize, x: &Point, x_next: &Point, rng: &mut R) -> Result<Point> {
        let n = problem.devices() as f64;
        Ok(match self.kind {
            EstimatorKind::Vanilla => (problem.grad_device(device, x_next)? - problem.grad_device(device, x)?) * n,
            EstimatorKind::FiniteSum { minibatch } => {
                let count = problem.sample_count(device).unwrap_or(1);
                let mut sum = Point::zeros(problem.dim());
                for _ in 0..minibatch {
                    let j = rng.random_range(0..count);
                    sum += problem.grad_sample(device, j, x_next)?;
                    sum -= problem.grad_sample(device, j, x)?;
                }
                sum * (n / minibatch as f64)
            }
            EstimatorKind::Online { minibatch, .. } => {
                let mut sum = Point::zeros(problem.dim());
                for _ in 0..minibatch {
                    let xi = problem.draw_stream(device, rng)?;
                    sum += problem.grad_stream_sample(device, &xi, x_next)?;
                    sum -= problem.grad_stream_sample(device, &xi, x)?;
                }
                sum * (n / minibatch as f64)
            }
        })
    }

    /// One round: returns the state at `x_next`; `state` is left untouched.
    pub fn update(
        &self,
        problem: &Problem,
        state: &EstimatorState,
        x: &Point,
        x_next: &Point,
        rng: &RoundRng,
    ) -> Result<EstimatorState> {
        let n = problem.devices();
        check_dim(problem.dim(), x.len())?;
        check_dim(problem.dim(), x_next.len())?;
        check_dim(n, state.devices.len())?;
        let shared = match self.coin_scope {
            CoinScope::Shared => Some(rng.coin(None).random::<f64>() < self.p),
            CoinScope::PerDevice => None,
        };
        let mut devices = Vec::with_capacity(n);
        let mut refreshed = Vec::with_capacity(n);
        let mut bits = 0;
        for i in 0..n {
            let coin = shared.unwrap_or_else(|| rng.coin(Some(i)).random::<f64>() < self.p);
            let mut dev_rng = rng.device(i);
            if coin {
                devices.push(self.refresh(problem, i, x_next, &mut dev_rng)?);
                bits += self.accounting.dense_bits(problem.dim());
            } else {
                let delta = self.difference(problem, i, x, x_next, &mut dev_rng)?;
                let message = self.compressor.compress(&delta, &mut dev_rng)?;
                bits += encoded_bits(&message, &self.accounting);
                let mut g = state.aggregate.clone();
                message.add_to(&mut g, 1.0);
                devices.push(g);
            }
            refreshed.push(coin);
        }
        Ok(EstimatorState::assemble(devices, refreshed, bits))
    }
}

/// Device estimates and their aggregate after one round.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// `g^i_k`, estimates of `n·∇F_i(x_k)`.
    pub devices: Vec<Point>,
    /// `g_k = (1/n) Σ_i g^i_k`, an estimate of `∇F(x_k)`.
    pub aggregate: Point,
    /// Which devices took the refresh branch this round.
    pub refreshed: Vec<bool>,
    /// Whether any device refreshed (the shared coin under [`CoinScope::Shared`]).
    pub last_coin: bool,
    /// Uplink bits spent by all devices this round.
    pub uplink_bits: u64,
}

impl EstimatorState {
    fn assemble(devices: Vec<Point>, refreshed: Vec<bool>, uplink_bits: u64) -> Self {
        let aggregate = mean(&devices);
        let last_coin = refreshed.iter().any(|&c| c);
        Self {
            devices,
            aggregate,
            refreshed,
            last_coin,
            uplink_bits,
        }
    }

    /// A state whose devices all hold `g` (so the aggregate is `g`).
    pub fn from_aggregate(g: Point, devices: usize) -> Self {
        Self::assemble(vec![g; devices], vec![false; devices], 0)
    }
}

fn mean(points: &[Point]) -> Point {
    let mut sum = Point::zeros(points[0].len());
    for p in points {
        sum += p;
    }
    sum / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::CompressorKind;
    use crate::rng::Streams;
    use crate::targets::{random_quadratic, random_streaming, QuadraticTerm, StreamDevice, SymMatrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pt(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn iso(dim: usize, scale: f64, b: Point) -> QuadraticTerm {
        QuadraticTerm::new(SymMatrix::scaled_identity(dim, scale), b).unwrap()
    }

    fn round(seed: u64, k: u64) -> RoundRng {
        RoundRng::new(Streams::new(seed), 0, k)
    }

    fn randn(rng: &mut ChaCha8Rng, d: usize) -> Point {
        Point::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn formula_examples() {
        assert_eq!(alpha_vanilla(1.0, &[2.0], 2.0), 1.0);
        assert_relative_eq!(theta_online(0.1, &[1.0, 1.0], 10), 0.005, epsilon = 1e-15);
        // identity compressor, b' = N
        let a = alpha_minibatch(0.0, &[1.0, 2.0], &[3.0, 4.0], 5, 2.0);
        assert_relative_eq!(a, 25.0 / (5.0 * 4.0 * 4.0), epsilon = 1e-15);
    }

    #[test]
    fn default_p_examples() {
        let randk = CompressorSpec::rand_k(10, 100).unwrap();
        assert_relative_eq!(default_p(&EstimatorKind::Vanilla, &randk, None), 0.1);
        let half = CompressorSpec::rand_k(5, 10).unwrap();
        let fs = EstimatorKind::FiniteSum { minibatch: 1 };
        assert_relative_eq!(default_p(&fs, &half, Some(99)), 0.01);
        let id = CompressorSpec::identity(7).unwrap();
        assert_eq!(default_p(&EstimatorKind::Vanilla, &id, None), 1.0);
        let online = EstimatorKind::Online { batch: 30, minibatch: 10 };
        assert_relative_eq!(default_p(&online, &half, None), 0.25);
    }

    #[test]
    fn invalid_specs() {
        let id = CompressorSpec::identity(2).unwrap();
        assert!(EstimatorSpec::new(EstimatorKind::Vanilla, 0.0, id).is_err());
        assert!(EstimatorSpec::new(EstimatorKind::Vanilla, 1.5, id).is_err());
        assert!(EstimatorSpec::new(EstimatorKind::FiniteSum { minibatch: 0 }, 0.5, id).is_err());
        assert!(EstimatorSpec::new(EstimatorKind::Online { batch: 0, minibatch: 1 }, 0.5, id).is_err());

        let quad = Problem::quadratic_single(vec![iso(2, 1.0, Point::zeros(2))]).unwrap();
        let online = EstimatorSpec::new(EstimatorKind::Online { batch: 2, minibatch: 1 }, 0.5, id).unwrap();
        assert!(matches!(online.init(&quad, &Point::zeros(2), &round(0, 0)), Err(Error::UnsupportedKind { .. })));
    }

    #[test]
    fn vanilla_init_at_minimizer_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_quadratic(3, 2, 1, (1.0, 2.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 0.5, CompressorSpec::identity(3).unwrap()).unwrap();
        let x_star = p.minimizer().unwrap();
        let state = spec.init(&p, &x_star, &round(0, 0)).unwrap();
        assert!(state.aggregate.norm() < 1e-12);
    }

    #[test]
    fn vanilla_init_aggregates_device_gradients() {
        let p = Problem::quadratic_single(vec![iso(1, 1.0, pt(&[1.0])), iso(1, 3.0, pt(&[0.0]))]).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 0.5, CompressorSpec::identity(1).unwrap()).unwrap();
        let x0 = pt(&[2.0]);
        let state = spec.init(&p, &x0, &round(0, 0)).unwrap();
        assert_eq!(state.devices[0], p.grad_device(0, &x0).unwrap() * 2.0);
        assert_eq!(state.devices[1], p.grad_device(1, &x0).unwrap() * 2.0);
        assert_eq!(state.aggregate, p.grad_full(&x0).unwrap());
        assert_eq!(state.uplink_bits, 2 * 64);
    }

    #[test]
    fn online_without_noise_is_exact() {
        let p = Problem::streaming(vec![
            StreamDevice { term: iso(2, 1.0, pt(&[1.0, 0.0])), sigma: 0.0 },
            StreamDevice { term: iso(2, 2.0, pt(&[0.0, 1.0])), sigma: 0.0 },
        ])
        .unwrap();
        let spec = EstimatorSpec::new(
            EstimatorKind::Online { batch: 3, minibatch: 2 },
            0.3,
            CompressorSpec::identity(2).unwrap(),
        )
        .unwrap();
        let x0 = pt(&[0.5, -1.0]);
        let state = spec.init(&p, &x0, &round(0, 0)).unwrap();
        for i in 0..2 {
            assert_relative_eq!(state.devices[i], p.grad_device(i, &x0).unwrap() * 2.0, epsilon = 1e-15);
        }
        assert_eq!(spec.initial_error(&p), 0.0);
    }

    #[test]
    fn always_refresh_gives_exact_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_quadratic(4, 3, 1, (1.0, 3.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 1.0, CompressorSpec::rand_k(1, 4).unwrap()).unwrap();
        let x = randn(&mut rng, 4);
        let y = randn(&mut rng, 4);
        let state = EstimatorState::from_aggregate(randn(&mut rng, 4), 3);
        let next = spec.update(&p, &state, &x, &y, &round(3, 1)).unwrap();
        assert_relative_eq!(next.aggregate, p.grad_full(&y).unwrap(), epsilon = 1e-12);
        assert!(next.refreshed.iter().all(|&c| c));
        assert_eq!(next.uplink_bits, 3 * 4 * 64);
    }

    #[test]
    fn update_leaves_input_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_quadratic(3, 2, 1, (1.0, 3.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 0.5, CompressorSpec::rand_k(1, 3).unwrap()).unwrap();
        let x = randn(&mut rng, 3);
        let state = spec.init(&p, &x, &round(0, 0)).unwrap();
        let before = state.clone();
        let _ = spec.update(&p, &state, &x, &randn(&mut rng, 3), &round(0, 1)).unwrap();
        assert_eq!(state, before);
    }

    /// E[g_{k+1}] = p∇F(x') + (1−p)(g_k + ∇F(x') − ∇F(x)), checked per coordinate.
    #[test]
    fn conditional_mean_matches_two_branch_expectation() {
        let p = Problem::quadratic_single(vec![iso(4, 1.0, Point::zeros(4))]).unwrap();
        let prob = 0.3;
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, prob, CompressorSpec::rand_k(1, 4).unwrap()).unwrap();
        let x = pt(&[1.0, -0.5, 2.0, 0.0]);
        let y = pt(&[0.5, 0.5, 1.0, -1.0]);
        let g = pt(&[0.3, 0.1, -0.2, 0.4]);
        let state = EstimatorState::from_aggregate(g.clone(), 1);
        let expect = p.grad_full(&y).unwrap() * prob
            + (&g + p.grad_full(&y).unwrap() - p.grad_full(&x).unwrap()) * (1.0 - prob);
        let draws = 100_000;
        let streams = Streams::new(17);
        let mut sum = Point::zeros(4);
        let mut sum_sq = Point::zeros(4);
        for k in 0..draws {
            let next = spec.update(&p, &state, &x, &y, &RoundRng::new(streams, 0, k)).unwrap();
            sum_sq += next.aggregate.component_mul(&next.aggregate);
            sum += next.aggregate;
        }
        let nf = draws as f64;
        for j in 0..4 {
            let m = sum[j] / nf;
            let se = ((sum_sq[j] / nf - m * m) / nf).sqrt();
            assert!((m - expect[j]).abs() <= 4.0 * se + 1e-12, "coordinate {j}: {m} vs {}", expect[j]);
        }
    }

    /// Empirical `G_{k+1}` against `(1−p)G_k + (1−p)L²α‖Δx‖² + θ`.
    fn recursion_holds(problem: &Problem, spec: &EstimatorSpec, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = problem.dim();
        let n = problem.devices();
        let c = spec.constants(problem).unwrap();
        let l = problem.constants().smoothness;
        for _ in 0..3 {
            let x = randn(&mut rng, d);
            let y = &x + randn(&mut rng, d) * 0.5;
            let g = problem.grad_full(&x).unwrap() + randn(&mut rng, d) * 0.3;
            let g_k = (&g - problem.grad_full(&x).unwrap()).norm_squared();
            let state = EstimatorState::from_aggregate(g, n);
            let grad_y = problem.grad_full(&y).unwrap();
            let reps = 10_000;
            let streams = Streams::new(rng.random());
            let lhs = (0..reps)
                .map(|k| {
                    let next = spec.update(problem, &state, &x, &y, &RoundRng::new(streams, 0, k)).unwrap();
                    (next.aggregate - &grad_y).norm_squared()
                })
                .sum::<f64>()
                / reps as f64;
            let rhs = (1.0 - c.p) * g_k + (1.0 - c.p) * l * l * c.alpha * (&y - &x).norm_squared() + c.theta;
            assert!(lhs <= rhs * 1.05, "{}: {lhs} > {rhs}", spec.kind.name());
        }
    }

    #[test]
    fn recursion_inequality_for_each_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let quad = random_quadratic(5, 3, 6, (0.5, 3.0), 1.0, &mut rng).unwrap();
        let stream = random_streaming(5, 3, (0.5, 3.0), 1.0, 1.0, &mut rng).unwrap();
        let randk = CompressorSpec::rand_k(2, 5).unwrap();
        let rounding = CompressorSpec::new(CompressorKind::StochasticRound { levels: 2 }, 5).unwrap();
        for q in [randk, rounding] {
            recursion_holds(&quad, &EstimatorSpec::new(EstimatorKind::Vanilla, 0.2, q).unwrap(), 10);
            recursion_holds(
                &quad,
                &EstimatorSpec::new(EstimatorKind::FiniteSum { minibatch: 2 }, 0.2, q).unwrap(),
                11,
            );
            recursion_holds(
                &stream,
                &EstimatorSpec::new(EstimatorKind::Online { batch: 4, minibatch: 2 }, 0.2, q).unwrap(),
                12,
            );
        }
    }

    #[test]
    fn online_refresh_variance_matches_theta() {
        // n = 2, σ_i² = 1, b = 10, p = 1: G after a refresh is Σσ_i²/b = θ/p.
        let stream = Problem::streaming(vec![
            StreamDevice { term: iso(3, 1.0, Point::zeros(3)), sigma: 1.0 },
            StreamDevice { term: iso(3, 1.0, Point::zeros(3)), sigma: 1.0 },
        ])
        .unwrap();
        let spec = EstimatorSpec::new(
            EstimatorKind::Online { batch: 10, minibatch: 1 },
            1.0,
            CompressorSpec::identity(3).unwrap(),
        )
        .unwrap();
        let x = pt(&[1.0, 2.0, 3.0]);
        let grad = stream.grad_full(&x).unwrap();
        let reps = 20_000;
        let streams = Streams::new(5);
        let errs: Vec<f64> = (0..reps)
            .map(|k| {
                let s = spec.init(&stream, &x, &RoundRng::new(streams, 0, k)).unwrap();
                (s.aggregate - &grad).norm_squared()
            })
            .collect();
        let m = errs.iter().sum::<f64>() / reps as f64;
        let sd = (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        let expect = spec.initial_error(&stream);
        assert_relative_eq!(expect, 0.2);
        assert!((m - expect).abs() <= 4.0 * sd / (reps as f64).sqrt(), "{m} vs {expect}");
        // per device-level constants: p·Σσ_i²/(n²b) with the n-scaled σ
        let c = spec.constants(&stream).unwrap();
        assert_relative_eq!(c.theta, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn finite_sum_identity_full_batch_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let quad = random_quadratic(3, 2, 4, (0.5, 2.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(
            EstimatorKind::FiniteSum { minibatch: 4 },
            0.5,
            CompressorSpec::identity(3).unwrap(),
        )
        .unwrap();
        let c = quad.constants();
        let n = 2.0;
        let expect = c.sample_smoothness.iter().map(|l| (n * l).powi(2)).sum::<f64>()
            / (4.0 * n * n * c.smoothness * c.smoothness);
        assert_relative_eq!(spec.constants(&quad).unwrap().alpha, expect, epsilon = 1e-14);
    }

    #[test]
    fn per_device_coins_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let quad = random_quadratic(2, 8, 1, (1.0, 2.0), 1.0, &mut rng).unwrap();
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, 0.5, CompressorSpec::rand_k(1, 2).unwrap())
            .unwrap()
            .with_coin_scope(CoinScope::PerDevice);
        let x = randn(&mut rng, 2);
        let state = spec.init(&quad, &x, &round(0, 0)).unwrap();
        let mut mixed = 0;
        for k in 1..50 {
            let next = spec.update(&quad, &state, &x, &x, &round(0, k)).unwrap();
            if next.refreshed.iter().any(|&c| c) && !next.refreshed.iter().all(|&c| c) {
                mixed += 1;
            }
        }
        assert!(mixed > 40);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn identity_vanilla_tracks_exact_gradient(seed in any::<u64>(), p in 0.01f64..1.0, steps in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let quad = random_quadratic(3, 3, 1, (0.5, 2.0), 1.0, &mut rng).unwrap();
            let spec = EstimatorSpec::new(EstimatorKind::Vanilla, p, CompressorSpec::identity(3).unwrap()).unwrap();
            let streams = Streams::new(seed);
            let mut x = randn(&mut rng, 3);
            let mut state = spec.init(&quad, &x, &RoundRng::new(streams, 0, 0)).unwrap();
            for k in 1..=steps {
                let y = &x - state.aggregate.clone() * 0.1;
                state = spec.update(&quad, &state, &x, &y, &RoundRng::new(streams, 0, k as u64)).unwrap();
                x = y;
                let err = (&state.aggregate - quad.grad_full(&x).unwrap()).norm_squared();
                prop_assert!(err <= 1e-12, "G_{k} = {err}");
            }
        }

        #[test]
        fn aggregate_is_mean_of_devices(seed in any::<u64>(), per_device in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let quad = random_quadratic(4, 3, 5, (0.5, 2.0), 1.0, &mut rng).unwrap();
            let scope = if per_device { CoinScope::PerDevice } else { CoinScope::Shared };
            let spec = EstimatorSpec::new(EstimatorKind::FiniteSum { minibatch: 2 }, 0.3, CompressorSpec::rand_k(2, 4).unwrap())
                .unwrap()
                .with_coin_scope(scope);
            let streams = Streams::new(seed);
            let mut x = randn(&mut rng, 4);
            let mut state = spec.init(&quad, &x, &RoundRng::new(streams, 0, 0)).unwrap();
            for k in 1..20u64 {
                let y = &x - state.aggregate.clone() * 0.05;
                state = spec.update(&quad, &state, &x, &y, &RoundRng::new(streams, 0, k)).unwrap();
                x = y;
                let m = state.devices.iter().sum::<Point>() / 3.0;
                prop_assert!((&m - &state.aggregate).amax() <= 1e-12 * m.amax().max(1.0));
            }
        }

        #[test]
        fn updates_are_reproducible(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stream = random_streaming(3, 2, (0.5, 2.0), 1.0, 0.5, &mut rng).unwrap();
            let spec = EstimatorSpec::new(EstimatorKind::Online { batch: 3, minibatch: 1 }, 0.4, CompressorSpec::rand_k(1, 3).unwrap()).unwrap();
            let x = randn(&mut rng, 3);
            let y = randn(&mut rng, 3);
            let r = RoundRng::new(Streams::new(seed), 2, 9);
            let s0 = spec.init(&stream, &x, &r).unwrap();
            prop_assert_eq!(spec.update(&stream, &s0, &x, &y, &r).unwrap(), spec.update(&stream, &s0, &x, &y, &r).unwrap());
        }
    }
}
