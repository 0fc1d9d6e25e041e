//! Objectives `F = Σ_i F_i` with gradient oracles, and the target law `π ∝ exp(-F)`.
//!
//! Four problem families are provided:
//!
//! * **Quadratic**: each device holds `N` quadratic samples
//!   `F_ij(x) = ½ xᵀA_ij x − b_ijᵀx` and `F_i` is their mean. `π` is Gaussian,
//!   so every constant (smoothness, PL/LSI modulus, minimum, normalizer) is
//!   available in closed form.
//! * **Gaussian mixture**: a two-component mixture with a shared isotropic
//!   variance. Each of the `n` devices holds an equal share `F/n`.
//! * **Logistic**: ridge-regularized logistic regression, one dataset per device.
//! * **Streaming**: quadratic devices observed through additive Gaussian
//!   gradient noise, `∇F_ξ(x) = A_i x − b_i + ξ` with `E‖ξ‖² = σ_i²`.
//!
//! Device indices are zero-based.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::metrics::{Covariance, GaussianSummary};

/// A point of `R^d`: iterates, gradients and messages.
pub type Point = DVector<f64>;

/// Symmetric matrix with an optional diagonal representation.
#[derive(Debug, Clone, PartialEq)]
pub enum SymMatrix {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        SymMatrix::Diagonal(DVector::from_element(dim, 1.0))
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        SymMatrix::Diagonal(DVector::from_element(dim, scale))
    }

    /// Wraps a dense matrix after checking symmetry.
    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("matrix must be square"));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("matrix must be symmetric"));
        }
        Ok(SymMatrix::Dense(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Diagonal(d) => d.len(),
            SymMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, x: &Point) -> Point {
        match self {
            SymMatrix::Diagonal(d) => d.component_mul(x),
            SymMatrix::Dense(m) => m * x,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Diagonal(d) => DMatrix::from_diagonal(d),
            SymMatrix::Dense(m) => m.clone(),
        }
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        match self {
            SymMatrix::Diagonal(d) => d.clone(),
            SymMatrix::Dense(m) => SymmetricEigen::new(m.clone()).eigenvalues,
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, SymMatrix::Diagonal(_))
    }

    fn add(&self, other: &SymMatrix) -> SymMatrix {
        match (self, other) {
            (SymMatrix::Diagonal(a), SymMatrix::Diagonal(b)) => SymMatrix::Diagonal(a + b),
            _ => SymMatrix::Dense(self.to_dense() + other.to_dense()),
        }
    }

    fn scale(&self, s: f64) -> SymMatrix {
        match self {
            SymMatrix::Diagonal(d) => SymMatrix::Diagonal(d * s),
            SymMatrix::Dense(m) => SymMatrix::Dense(m * s),
        }
    }
}

/// `F(x) = ½ xᵀAx − bᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerm {
    pub a: SymMatrix,
    pub b: Point,
}

impl QuadraticTerm {
    pub fn new(a: SymMatrix, b: Point) -> Result<Self> {
        check_dim(a.dim(), b.len())?;
        if a.min_eigenvalue() < -1e-12 {
            return Err(Error::invalid("quadratic curvature must be positive semidefinite"));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&self.a.apply(x)) - self.b.dot(x)
    }

    pub fn gradient(&self, x: &Point) -> Point {
        self.a.apply(x) - &self.b
    }
}

/// Two-component Gaussian mixture `w·N(m₁, s²I) + (1−w)·N(m₂, s²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub weight: f64,
    pub mean1: Point,
    pub mean2: Point,
    pub variance: f64,
}

impl MixtureSpec {
    pub fn new(weight: f64, mean1: Point, mean2: Point, variance: f64) -> Result<Self> {
        check_dim(mean1.len(), mean2.len())?;
        if !(weight > 0.0 && weight < 1.0) {
            return Err(Error::invalid("mixture weight must lie in (0, 1)"));
        }
        if !(variance > 0.0) {
            return Err(Error::invalid("mixture variance must be positive"));
        }
        Ok(Self {
            weight,
            mean1,
            mean2,
            variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean1.len()
    }

    /// Per-component log densities (weight included).
    fn component_logs(&self, x: &Point) -> [f64; 2] {
        let d = self.dim() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * self.variance).ln();
        let l1 = self.weight.ln() + norm - (x - &self.mean1).norm_squared() / (2.0 * self.variance);
        let l2 = (1.0 - self.weight).ln() + norm
            - (x - &self.mean2).norm_squared() / (2.0 * self.variance);
        [l1, l2]
    }

    /// Normalized log density.
    pub fn log_density(&self, x: &Point) -> f64 {
        let [l1, l2] = self.component_logs(x);
        log_sum_exp(l1, l2)
    }

    /// `∇F = ∇(−log p)`, computed through responsibilities.
    pub fn neg_log_density_gradient(&self, x: &Point) -> Point {
        let [l1, l2] = self.component_logs(x);
        let lse = log_sum_exp(l1, l2);
        let r1 = (l1 - lse).exp();
        let r2 = (l2 - lse).exp();
        ((x - &self.mean1) * r1 + (x - &self.mean2) * r2) / self.variance
    }

    /// Global bound on the Hessian spectrum of `−log p`.
    pub fn smoothness(&self) -> f64 {
        let s2 = self.variance;
        let gap = (&self.mean1 - &self.mean2).norm_squared();
        (1.0 / s2).max((1.0 / s2 - gap / (4.0 * s2 * s2)).abs())
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One device's logistic-regression dataset; labels are `±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    pub features: Vec<Point>,
    pub labels: Vec<f64>,
}

impl LogisticData {
    pub fn new(features: Vec<Point>, labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::invalid("logistic data needs one label per (non-empty) feature row"));
        }
        let d = features[0].len();
        for f in &features {
            check_dim(d, f.len())?;
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("logistic labels must be +1 or -1"));
        }
        Ok(Self { features, labels })
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Quadratic device observed through noisy gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDevice {
    pub term: QuadraticTerm,
    /// Root of `E‖∇F_ξ(x) − ∇F_i(x)‖²`.
    pub sigma: f64,
}

/// One draw `ξ ~ D_i`: the additive gradient perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample(pub Point);

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Quadratic { devices: Vec<Vec<QuadraticTerm>> },
    GaussianMixture { mixture: MixtureSpec, devices: usize },
    Logistic { devices: Vec<LogisticData>, regularization: f64 },
    Streaming { devices: Vec<StreamDevice> },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Quadratic { .. } => "quadratic",
            ProblemKind::GaussianMixture { .. } => "mixture",
            ProblemKind::Logistic { .. } => "logistic",
            ProblemKind::Streaming { .. } => "streaming",
        }
    }
}

/// Known constants of a problem. Per-device vectors have length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    /// `L`: smoothness of `F`.
    pub smoothness: f64,
    /// `L_i`: smoothness of `F_i`.
    pub device_smoothness: Vec<f64>,
    /// `ℒ_i`: worst per-sample smoothness on device `i`.
    pub sample_smoothness: Vec<f64>,
    /// `σ_i`: streaming gradient noise level (zero for exact oracles).
    pub stream_sigma: Vec<f64>,
    pub mu_pl: Option<f64>,
    pub mu_lsi: Option<f64>,
    pub f_star: Option<f64>,
    /// `log ∫ exp(−F)`.
    pub log_normalizer: Option<f64>,
}

impl Constants {
    fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.smoothness)
            .chain(self.device_smoothness.iter().copied())
            .chain(self.sample_smoothness.iter().copied())
            .chain(self.stream_sigma.iter().copied())
            .chain(self.mu_pl)
            .chain(self.mu_lsi);
        for c in all {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::invalid(format!("constant {c} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// An objective `F = Σ_i F_i` split across `n` devices.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    dim: usize,
    kind: ProblemKind,
    constants: Constants,
}

impl Problem {
    /// Quadratic devices, each the mean of its sample terms.
    pub fn quadratic(devices: Vec<Vec<QuadraticTerm>>) -> Result<Self> {
        let dim = quadratic_dim(devices.iter().flatten())?;
        if devices.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every quadratic device needs at least one sample"));
        }
        let means: Vec<QuadraticTerm> = devices.iter().map(|s| mean_term(s)).collect();
        let sample_smoothness = devices
            .iter()
            .map(|s| s.iter().map(|t| t.a.max_eigenvalue()).fold(0.0, f64::max))
            .collect();
        let constants = quadratic_constants(&means, sample_smoothness, vec![0.0; means.len()]);
        Self::build(dim, ProblemKind::Quadratic { devices }, constants)
    }

    /// Quadratic devices with a single sample each.
    pub fn quadratic_single(devices: Vec<QuadraticTerm>) -> Result<Self> {
        Self::quadratic(devices.into_iter().map(|t| vec![t]).collect())
    }

    pub fn streaming(devices: Vec<StreamDevice>) -> Result<Self> {
        let dim = quadratic_dim(devices.iter().map(|d| &d.term))?;
        if devices.iter().any(|d| !(d.sigma >= 0.0)) {
            return Err(Error::invalid("stream noise level must be nonnegative"));
        }
        let means: Vec<QuadraticTerm> = devices.iter().map(|d| d.term.clone()).collect();
        let lips = means.iter().map(|t| t.a.max_eigenvalue()).collect();
        let sigma = devices.iter().map(|d| d.sigma).collect();
        let constants = quadratic_constants(&means, lips, sigma);
        Self::build(dim, ProblemKind::Streaming { devices }, constants)
    }

    /// Mixture target shared evenly by `devices` devices (`F_i = F/n`).
    pub fn mixture(mixture: MixtureSpec, devices: usize) -> Result<Self> {
        if devices == 0 {
            return Err(Error::invalid("need at least one device"));
        }
        let dim = mixture.dim();
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let l = mixture.smoothness();
        let li = l / devices as f64;
        let constants = Constants {
            smoothness: l,
            device_smoothness: vec![li; devices],
            sample_smoothness: vec![li; devices],
            stream_sigma: vec![0.0; devices],
            mu_pl: None,
            mu_lsi: None,
            f_star: None,
            log_normalizer: Some(0.0),
        };
        Self::build(dim, ProblemKind::GaussianMixture { mixture, devices }, constants)
    }

    /// Regularized logistic regression; each sample loss carries `(λ/2)‖x‖²`.
    pub fn logistic(devices: Vec<LogisticData>, regularization: f64) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::invalid("need at least one device"));
        }
        if !(regularization > 0.0) {
            return Err(Error::invalid("logistic regularization must be positive"));
        }
        let dim = devices[0].features[0].len();
        for dev in &devices {
            check_dim(dim, dev.features[0].len())?;
        }
        let n = devices.len() as f64;
        let mut total = DMatrix::zeros(dim, dim);
        let mut device_smoothness = Vec::new();
        let mut sample_smoothness = Vec::new();
        for dev in &devices {
            let nn = dev.features.len() as f64;
            let mut cov = DMatrix::zeros(dim, dim);
            let mut worst: f64 = 0.0;
            for a in &dev.features {
                cov += a * a.transpose() / (4.0 * nn);
                worst = worst.max(a.norm_squared() / 4.0);
            }
            device_smoothness.push(SymmetricEigen::new(cov.clone()).eigenvalues.max() + regularization);
            sample_smoothness.push(worst + regularization);
            total += cov;
        }
        let l = SymmetricEigen::new(total).eigenvalues.max() + n * regularization;
        let mut problem = Self::build(
            dim,
            ProblemKind::Logistic {
                devices,
                regularization,
            },
            Constants {
                smoothness: l,
                device_smoothness,
                sample_smoothness,
                stream_sigma: vec![0.0; n as usize],
                mu_pl: Some(n * regularization),
                mu_lsi: Some(n * regularization),
                f_star: None,
                log_normalizer: None,
            },
        )?;
        let x_star = problem.logistic_minimizer()?;
        problem.constants.f_star = Some(problem.value(&x_star)?);
        Ok(problem)
    }

    fn build(dim: usize, kind: ProblemKind, constants: Constants) -> Result<Self> {
        constants.validate()?;
        Ok(Self {
            dim,
            kind,
            constants,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Replaces the declared constants, e.g. with tighter values known from outside.
    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        if constants.device_smoothness.len() != self.devices() {
            return Err(Error::invalid("per-device constants must have one entry per device"));
        }
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    /// Number of devices `n`.
    pub fn devices(&self) -> usize {
        match &self.kind {
            ProblemKind::Quadratic { devices } => devices.len(),
            ProblemKind::GaussianMixture { devices, .. } => *devices,
            ProblemKind::Logistic { devices, .. } => devices.len(),
            ProblemKind::Streaming { devices } => devices.len(),
        }
    }

    /// Samples per device `N` for finite-sum problems.
    pub fn sample_count(&self, device: usize) -> Option<usize> {
        match &self.kind {
            ProblemKind::Quadratic { devices } => devices.get(device).map(Vec::len),
            ProblemKind::Logistic { devices, .. } => devices.get(device).map(|d| d.labels.len()),
            _ => None,
        }
    }

    pub fn is_finite_sum(&self) -> bool {
        matches!(self.kind, ProblemKind::Quadratic { .. } | ProblemKind::Logistic { .. })
    }

    pub fn is_streaming(&self) -> bool {
        matches!(self.kind, ProblemKind::Streaming { .. })
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        check_dim(self.dim, x.len())
    }

    fn check_device(&self, device: usize) -> Result<()> {
        let n = self.devices();
        if device < n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "device",
                index: device,
                len: n,
            })
        }
    }

    /// `F_i(x)`.
    pub fn device_value(&self, device: usize, x: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_device(device)?;
        Ok(match &self.kind {
            ProblemKind::Quadratic { devices } => {
                let s = &devices[device];
                s.iter().map(|t| t.value(x)).sum::<f64>() / s.len() as f64
            }
            ProblemKind::GaussianMixture { mixture, devices } => {
                -mixture.log_density(x) / *devices as f64
            }
            ProblemKind::Logistic {
                devices,
                regularization,
            } => {
                let d = &devices[device];
                let loss: f64 = d
                    .features
                    .iter()
                    .zip(&d.labels)
                    .map(|(a, y)| softplus(-y * a.dot(x)))
                    .sum();
                loss / d.labels.len() as f64 + 0.5 * regularization * x.norm_squared()
            }
            ProblemKind::Streaming { devices } => devices[device].term.value(x),
        })
    }

    /// `F(x) = Σ_i F_i(x)`.
    pub fn value(&self, x: &Point) -> Result<f64> {
        self.check_point(x)?;
        if let ProblemKind::GaussianMixture { mixture, .. } = &self.kind {
            return Ok(-mixture.log_density(x));
        }
        (0..self.devices()).map(|i| self.device_value(i, x)).sum()
    }

    /// `∇F_i(x)`.
    pub fn grad_device(&self, device: usize, x: &Point) -> Result<Point> {
        self.check_point(x)?;
        self.check_device(device)?;
        Ok(match &self.kind {
            ProblemKind::Quadratic { devices } => {
                let s = &devices[device];
                let mut g = Point::zeros(self.dim);
                for t in s {
                    g += t.gradient(x);
                }
                g / s.len() as f64
            }
            ProblemKind::GaussianMixture { mixture, devices } => {
                mixture.neg_log_density_gradient(x) / *devices as f64
            }
            ProblemKind::Logistic {
                devices,
                regularization,
            } => {
                let d = &devices[device];
                let mut g = Point::zeros(self.dim);
                for (a, y) in d.features.iter().zip(&d.labels) {
                    g -= a * (y * sigmoid(-y * a.dot(x)));
                }
                g / d.labels.len() as f64 + x * *regularization
            }
            ProblemKind::Streaming { devices } => devices[device].term.gradient(x),
        })
    }

    /// `∇F(x) = Σ_i ∇F_i(x)`.
    pub fn grad_full(&self, x: &Point) -> Result<Point> {
        self.check_point(x)?;
        if let ProblemKind::GaussianMixture { mixture, .. } = &self.kind {
            return Ok(mixture.neg_log_density_gradient(x));
        }
        let mut g = Point::zeros(self.dim);
        for i in 0..self.devices() {
            g += self.grad_device(i, x)?;
        }
        Ok(g)
    }

    /// `F_ij(x)` for finite-sum problems.
    pub fn sample_value(&self, device: usize, sample: usize, x: &Point) -> Result<f64> {
        self.check_sample(device, sample, x)?;
        match &self.kind {
            ProblemKind::Quadratic { devices } => Ok(devices[device][sample].value(x)),
            ProblemKind::Logistic {
                devices,
                regularization,
            } => {
                let d = &devices[device];
                let (a, y) = (&d.features[sample], d.labels[sample]);
                Ok(softplus(-y * a.dot(x)) + 0.5 * regularization * x.norm_squared())
            }
            _ => unreachable!("checked by check_sample"),
        }
    }

    /// `∇F_ij(x)` for finite-sum problems.
    pub fn grad_sample(&self, device: usize, sample: usize, x: &Point) -> Result<Point> {
        self.check_sample(device, sample, x)?;
        match &self.kind {
            ProblemKind::Quadratic { devices } => Ok(devices[device][sample].gradient(x)),
            ProblemKind::Logistic {
                devices,
                regularization,
            } => {
                let d = &devices[device];
                let (a, y) = (&d.features[sample], d.labels[sample]);
                Ok(a * (-y * sigmoid(-y * a.dot(x))) + x * *regularization)
            }
            _ => unreachable!("checked by check_sample"),
        }
    }

    fn check_sample(&self, device: usize, sample: usize, x: &Point) -> Result<()> {
        self.check_point(x)?;
        self.check_device(device)?;
        let count = self.sample_count(device).ok_or(Error::UnsupportedKind {
            op: "grad_sample",
            kind: self.kind.name(),
        })?;
        if sample >= count {
            return Err(Error::IndexOutOfRange {
                what: "sample",
                index: sample,
                len: count,
            });
        }
        Ok(())
    }

    /// Draws `ξ ~ D_i` for a streaming device.
    pub fn draw_stream<R: Rng + ?Sized>(&self, device: usize, rng: &mut R) -> Result<StreamSample> {
        self.check_device(device)?;
        let ProblemKind::Streaming { devices } = &self.kind else {
            return Err(Error::UnsupportedKind {
                op: "grad_stream",
                kind: self.kind.name(),
            });
        };
        let sigma = devices[device].sigma;
        if sigma == 0.0 {
            return Ok(StreamSample(Point::zeros(self.dim)));
        }
        let scale = sigma / (self.dim as f64).sqrt();
        Ok(StreamSample(Point::from_fn(self.dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })))
    }

    /// `∇F_ξ(x)` for a fixed draw `ξ`; the same draw may be evaluated at several points.
    pub fn grad_stream_sample(&self, device: usize, sample: &StreamSample, x: &Point) -> Result<Point> {
        self.check_point(x)?;
        self.check_device(device)?;
        check_dim(self.dim, sample.0.len())?;
        let ProblemKind::Streaming { devices } = &self.kind else {
            return Err(Error::UnsupportedKind {
                op: "grad_stream",
                kind: self.kind.name(),
            });
        };
        Ok(devices[device].term.gradient(x) + &sample.0)
    }

    /// One stochastic gradient `∇F_ξ(x)` with a fresh draw `ξ ~ D_i`.
    pub fn grad_stream<R: Rng + ?Sized>(&self, device: usize, rng: &mut R, x: &Point) -> Result<Point> {
        self.check_point(x)?;
        let sample = self.draw_stream(device, rng)?;
        self.grad_stream_sample(device, &sample, x)
    }

    /// `−F(x)`, the unnormalized log density of `π`.
    pub fn log_density_unnormalized(&self, x: &Point) -> Result<f64> {
        Ok(-self.value(x)?)
    }

    /// `log ∫ exp(−F)` when known in closed form.
    pub fn log_normalizer(&self) -> Option<f64> {
        self.constants.log_normalizer
    }

    /// Normalized log density of `π`, when the normalizer is known.
    pub fn log_density(&self, x: &Point) -> Result<Option<f64>> {
        let unnorm = self.log_density_unnormalized(x)?;
        Ok(self.log_normalizer().map(|z| unnorm - z))
    }

    /// Summed curvature `A = Σ_i Ā_i` and shift `Σ_i b̄_i` of quadratic-family problems.
    pub fn quadratic_form(&self) -> Option<(SymMatrix, Point)> {
        let means: Vec<QuadraticTerm> = match &self.kind {
            ProblemKind::Quadratic { devices } => devices.iter().map(|s| mean_term(s)).collect(),
            ProblemKind::Streaming { devices } => devices.iter().map(|d| d.term.clone()).collect(),
            _ => return None,
        };
        let total = sum_terms(&means);
        Some((total.a, total.b))
    }

    /// `π` as a Gaussian, for quadratic-family problems with positive definite curvature.
    pub fn gaussian_target(&self) -> Option<GaussianSummary> {
        let (a, b) = self.quadratic_form()?;
        if a.min_eigenvalue() <= 0.0 {
            return None;
        }
        Some(match a {
            SymMatrix::Diagonal(diag) => GaussianSummary {
                mean: b.component_div(&diag),
                covariance: Covariance::Diagonal(diag.map(|v| 1.0 / v)),
            },
            SymMatrix::Dense(m) => {
                let chol = Cholesky::new(m)?;
                GaussianSummary {
                    mean: chol.solve(&b),
                    covariance: Covariance::Full(chol.inverse()),
                }
            }
        })
    }

    /// A minimizer of `F`, when it can be computed.
    pub fn minimizer(&self) -> Option<Point> {
        match &self.kind {
            ProblemKind::Quadratic { .. } | ProblemKind::Streaming { .. } => {
                self.gaussian_target().map(|g| g.mean)
            }
            ProblemKind::Logistic { .. } => self.logistic_minimizer().ok(),
            ProblemKind::GaussianMixture { .. } => None,
        }
    }

    fn logistic_minimizer(&self) -> Result<Point> {
        let ProblemKind::Logistic {
            devices,
            regularization,
        } = &self.kind
        else {
            return Err(Error::UnsupportedKind {
                op: "logistic_minimizer",
                kind: self.kind.name(),
            });
        };
        let n = devices.len() as f64;
        let mut x = Point::zeros(self.dim);
        for _ in 0..100 {
            let g = self.grad_full(&x)?;
            if g.norm() < 1e-13 {
                break;
            }
            let mut h = DMatrix::identity(self.dim, self.dim) * (n * regularization);
            for dev in devices {
                let nn = dev.labels.len() as f64;
                for (a, y) in dev.features.iter().zip(&dev.labels) {
                    let s = sigmoid(-y * a.dot(&x));
                    h += a * a.transpose() * (s * (1.0 - s) / nn);
                }
            }
            let step = Cholesky::new(h)
                .ok_or_else(|| Error::invalid("logistic Hessian is not positive definite"))?
                .solve(&g);
            // Damped Newton: halve until the objective decreases.
            let f0 = self.value(&x)?;
            let mut t = 1.0;
            loop {
                let candidate = &x - &step * t;
                if self.value(&candidate)? <= f0 || t < 1e-8 {
                    x = candidate;
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(x)
    }
}

fn quadratic_dim<'a>(mut terms: impl Iterator<Item = &'a QuadraticTerm>) -> Result<usize> {
    let first = terms
        .next()
        .ok_or_else(|| Error::invalid("need at least one device"))?;
    let dim = first.dim();
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    for t in terms {
        check_dim(dim, t.dim())?;
    }
    Ok(dim)
}

fn sum_terms(terms: &[QuadraticTerm]) -> QuadraticTerm {
    let mut a = terms[0].a.clone();
    let mut b = terms[0].b.clone();
    for t in &terms[1..] {
        a = a.add(&t.a);
        b += &t.b;
    }
    QuadraticTerm { a, b }
}

fn mean_term(samples: &[QuadraticTerm]) -> QuadraticTerm {
    let total = sum_terms(samples);
    let inv = 1.0 / samples.len() as f64;
    QuadraticTerm {
        a: total.a.scale(inv),
        b: total.b * inv,
    }
}

fn quadratic_constants(means: &[QuadraticTerm], sample_smoothness: Vec<f64>, sigma: Vec<f64>) -> Constants {
    let total = sum_terms(means);
    let eig = total.a.eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let dim = total.b.len() as f64;
    let (mu, f_star, log_z) = if lo > 0.0 {
        let dense = total.a.to_dense();
        let chol = Cholesky::new(dense).expect("positive definite by eigenvalue check");
        let x_star = chol.solve(&total.b);
        let f_star = -0.5 * total.b.dot(&x_star);
        let log_det: f64 = eig.iter().map(|v| v.ln()).sum();
        let log_z = -f_star + 0.5 * dim * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        (Some(lo), Some(f_star), Some(log_z))
    } else {
        (None, None, None)
    };
    Constants {
        smoothness: hi,
        device_smoothness: means.iter().map(|t| t.a.max_eigenvalue()).collect(),
        sample_smoothness,
        stream_sigma: sigma,
        mu_pl: mu,
        mu_lsi: mu,
        f_star,
        log_normalizer: log_z,
    }
}

/// Largest observed `‖∇F_i(x) − ∇F_i(y)‖ / ‖x − y‖` over random pairs drawn
/// from `N(0, scale² I)`. Validation utility for declared `L_i`.
pub fn observed_device_smoothness<R: Rng + ?Sized>(
    problem: &Problem,
    device: usize,
    pairs: usize,
    scale: f64,
    rng: &mut R,
) -> Result<f64> {
    let d = problem.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = Point::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let y = Point::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let gap = (&x - &y).norm();
        if gap == 0.0 {
            continue;
        }
        let diff = (problem.grad_device(device, &x)? - problem.grad_device(device, &y)?).norm();
        worst = worst.max(diff / gap);
    }
    Ok(worst)
}

/// Random quadratic instance with diagonal curvatures.
///
/// Each sample's diagonal entries are drawn uniformly from
/// `[lo/n, hi/n]`, so the summed curvature has its spectrum in `[lo, hi]`.
/// Shifts are `offset·N(0,1)/n` per coordinate.
pub fn random_quadratic<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    samples: usize,
    curvature: (f64, f64),
    offset: f64,
    rng: &mut R,
) -> Result<Problem> {
    let terms = random_terms(dim, devices, samples, curvature, offset, rng)?;
    Problem::quadratic(terms)
}

/// Random streaming instance: [`random_quadratic`] devices with noise level `sigma`.
pub fn random_streaming<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    curvature: (f64, f64),
    offset: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Problem> {
    let terms = random_terms(dim, devices, 1, curvature, offset, rng)?;
    Problem::streaming(
        terms
            .into_iter()
            .map(|mut s| StreamDevice {
                term: s.remove(0),
                sigma,
            })
            .collect(),
    )
}

fn random_terms<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    samples: usize,
    (lo, hi): (f64, f64),
    offset: f64,
    rng: &mut R,
) -> Result<Vec<Vec<QuadraticTerm>>> {
    if dim == 0 || devices == 0 || samples == 0 {
        return Err(Error::invalid("dimension, devices and samples must be positive"));
    }
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::invalid("curvature range must satisfy 0 <= lo <= hi"));
    }
    let n = devices as f64;
    let mut out = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut dev = Vec::with_capacity(samples);
        for _ in 0..samples {
            let a = DVector::from_fn(dim, |_, _| rng.random_range(lo..=hi) / n);
            let b = DVector::from_fn(dim, |_, _| offset * rng.sample::<f64, _>(StandardNormal) / n);
            dev.push(QuadraticTerm::new(SymMatrix::Diagonal(a), b)?);
        }
        out.push(dev);
    }
    Ok(out)
}

/// Synthetic logistic data: Gaussian features, labels from a planted direction
/// with logistic label noise.
pub fn random_logistic<R: Rng + ?Sized>(
    dim: usize,
    devices: usize,
    samples: usize,
    regularization: f64,
    rng: &mut R,
) -> Result<Problem> {
    if dim == 0 || devices == 0 || samples == 0 {
        return Err(Error::invalid("dimension, devices and samples must be positive"));
    }
    let planted = Point::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut data = Vec::with_capacity(devices);
    for _ in 0..devices {
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let a = Point::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let prob = sigmoid(a.dot(&planted));
            labels.push(if rng.random::<f64>() < prob { 1.0 } else { -1.0 });
            features.push(a);
        }
        data.push(LogisticData::new(features, labels)?);
    }
    Problem::logistic(data, regularization)
}
