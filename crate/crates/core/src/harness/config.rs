//! Experiment configuration: one TOML document with sections `problem`,
//! `compressor`, `estimator`, `run`, `metrics`, `output` and an optional
//! `sweep` grid. Unknown keys are rejected; errors carry the field path.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::compression::{BitAccounting, CompressorKind, CompressorSpec};
use crate::dynamics::{
    step_cap_opt, step_cap_opt_pl, step_cap_sampling, CapPolicy, InitLaw, RunSpec,
};
use crate::error::{Error, Result};
use crate::estimators::{CoinScope, EstimatorKind, EstimatorSpec};
use crate::metrics::HistSpec;
use crate::rng::{Purpose, Streams};
use crate::targets::{random_logistic, random_quadratic, random_streaming, MixtureSpec, Point, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default = "identity_compressor")]
    pub compressor: CompressorKind,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn identity_compressor() -> CompressorKind {
    CompressorKind::Identity
}

/// Problem instance. Random instances are drawn from `instance_seed`, or from
/// the run seed when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Diagonal quadratics whose summed spectrum lies in `curvature`.
    Quadratic {
        dim: usize,
        devices: usize,
        #[serde(default = "one")]
        samples: usize,
        #[serde(default = "unit_curvature")]
        curvature: [f64; 2],
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_seed: Option<u64>,
    },
    /// Quadratic devices observed through `N(0, σ²/d·I)`-perturbed gradients.
    Streaming {
        dim: usize,
        devices: usize,
        #[serde(default = "unit_curvature")]
        curvature: [f64; 2],
        #[serde(default)]
        offset: f64,
        #[serde(default = "unit")]
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_seed: Option<u64>,
    },
    /// Two-component Gaussian mixture split evenly over `devices`.
    Mixture {
        #[serde(default = "one")]
        devices: usize,
        weight: f64,
        mean1: Fill,
        mean2: Fill,
        variance: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// Synthetic logistic regression with an L2 term.
    Logistic {
        dim: usize,
        devices: usize,
        samples: usize,
        #[serde(default = "default_regularization")]
        regularization: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instance_seed: Option<u64>,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn unit_curvature() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_regularization() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    #[default]
    Vanilla,
    FiniteSum,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kind: EstimatorName,
    #[serde(default)]
    pub p: Auto<f64>,
    /// `b`, the online refresh batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// `b′`, the compressed-branch minibatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    #[serde(default)]
    pub coin_scope: CoinScope,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorName::Vanilla,
            p: Auto::Auto,
            batch: None,
            minibatch: None,
            coin_scope: CoinScope::Shared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// MARINA gradient descent.
    Optimize,
    /// Langevin-MARINA.
    Sample,
    /// Plain Langevin with exact gradients.
    Langevin,
}

impl Mode {
    pub fn is_sampling(self) -> bool {
        !matches!(self, Mode::Optimize)
    }
}

/// Step-size choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Value(f64),
    /// `cap-opt` for optimization, `cap-sampling` otherwise.
    AutoCap,
    CapOpt,
    CapOptPl,
    CapSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "auto_cap")]
    pub h: StepSize,
    pub iterations: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shared_noise_seed: bool,
    /// Abort when `h` exceeds the cap instead of warning.
    #[serde(default)]
    pub enforce_cap: bool,
    #[serde(default)]
    pub init: InitConfig,
}

fn auto_cap() -> StepSize {
    StepSize::AutoCap
}

/// `x_0 ~ N(mean, std²·I)`; `std = 0` is a point start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "zero_fill")]
    pub mean: Fill,
    #[serde(default)]
    pub std: f64,
}

fn zero_fill() -> Fill {
    Fill::Scalar(0.0)
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mean: zero_fill(),
            std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Fraction of iterations discarded before stationary summaries.
    #[serde(default = "half")]
    pub burn_in: f64,
    /// Moment summaries every this many iterations in sampling modes (0: off).
    #[serde(default = "one")]
    pub moments_every: usize,
    /// Histogram ranges, one `[lo, hi]` per coordinate; TV is skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_range: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_bins")]
    pub tv_bins: usize,
    /// Pool every this many post-burn-in iterations for TV.
    #[serde(default = "one")]
    pub pool_thin: usize,
    /// Fraction of final iterations averaged into the plateau metric.
    #[serde(default = "fifth")]
    pub plateau_fraction: f64,
}

fn half() -> f64 {
    0.5
}

fn fifth() -> f64 {
    0.2
}

fn default_bins() -> usize {
    HistSpec::DEFAULT_BINS
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            burn_in: half(),
            moments_every: 1,
            tv_range: None,
            tv_bins: default_bins(),
            pool_thin: 1,
            plateau_fraction: fifth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory receiving `trace.csv` and `run_header.toml`; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_b_val")]
    pub b_val: u64,
    #[serde(default = "default_b_idx")]
    pub b_idx: u64,
}

fn default_b_val() -> u64 {
    BitAccounting::default().b_val
}

fn default_b_idx() -> u64 {
    BitAccounting::default().b_idx
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            b_val: default_b_val(),
            b_idx: default_b_idx(),
        }
    }
}

/// Cartesian grid of overrides; absent axes keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<f64>,
    /// RandK `k`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub minibatch: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<usize>,
    /// Independent seeds per grid point, averaged in the summary.
    #[serde(default = "one")]
    pub replicates: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            h: Vec::new(),
            p: Vec::new(),
            k: Vec::new(),
            batch: Vec::new(),
            minibatch: Vec::new(),
            iterations: Vec::new(),
            replicates: 1,
        }
    }
}

/// A number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

/// A scalar broadcast to every coordinate, or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fill {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Fill {
    pub fn to_point(&self, dim: usize, path: &str) -> Result<Point> {
        match self {
            Fill::Scalar(v) => Ok(Point::from_element(dim, *v)),
            Fill::Vector(v) if v.len() == dim => Ok(Point::from_column_slice(v)),
            Fill::Vector(v) => Err(Error::config(path, format!("expected {dim} entries, got {}", v.len()))),
        }
    }
}

struct NumberOrKeyword<'a> {
    keywords: &'a [&'a str],
}

enum Parsed {
    Number(f64),
    Keyword(usize),
}

impl<'de> Visitor<'de> for NumberOrKeyword<'_> {
    type Value = Parsed;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a number or one of {:?}", self.keywords)
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Parsed, E> {
        Ok(Parsed::Number(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Parsed, E> {
        Ok(Parsed::Number(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Parsed, E> {
        Ok(Parsed::Number(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Parsed, E> {
        self.keywords
            .iter()
            .position(|k| *k == v)
            .map(Parsed::Keyword)
            .ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
    }
}

impl<'de> Deserialize<'de> for Auto<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match d.deserialize_any(NumberOrKeyword { keywords: &["auto"] })? {
            Parsed::Number(v) => Auto::Value(v),
            Parsed::Keyword(_) => Auto::Auto,
        })
    }
}

impl Serialize for Auto<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => s.serialize_f64(*v),
        }
    }
}

const STEP_KEYWORDS: [&str; 4] = ["auto-cap", "cap-opt", "cap-opt-pl", "cap-sampling"];

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match d.deserialize_any(NumberOrKeyword { keywords: &STEP_KEYWORDS })? {
            Parsed::Number(v) => StepSize::Value(v),
            Parsed::Keyword(0) => StepSize::AutoCap,
            Parsed::Keyword(1) => StepSize::CapOpt,
            Parsed::Keyword(2) => StepSize::CapOptPl,
            Parsed::Keyword(_) => StepSize::CapSampling,
        })
    }
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StepSize::Value(v) => s.serialize_f64(*v),
            StepSize::AutoCap => s.serialize_str(STEP_KEYWORDS[0]),
            StepSize::CapOpt => s.serialize_str(STEP_KEYWORDS[1]),
            StepSize::CapOptPl => s.serialize_str(STEP_KEYWORDS[2]),
            StepSize::CapSampling => s.serialize_str(STEP_KEYWORDS[3]),
        }
    }
}

impl std::str::FromStr for StepSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match STEP_KEYWORDS.iter().position(|k| *k == s) {
            Some(0) => Ok(StepSize::AutoCap),
            Some(1) => Ok(StepSize::CapOpt),
            Some(2) => Ok(StepSize::CapOptPl),
            Some(_) => Ok(StepSize::CapSampling),
            None => s
                .parse::<f64>()
                .map(StepSize::Value)
                .map_err(|_| format!("expected a number or one of {STEP_KEYWORDS:?}")),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn accounting(&self) -> BitAccounting {
        BitAccounting {
            b_val: self.output.b_val,
            b_idx: self.output.b_idx,
        }
    }

    /// Checks value ranges and cross-references without building anything.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.iterations == 0 {
            return Err(Error::config("run.iterations", "must be at least 1"));
        }
        if r.chains == 0 {
            return Err(Error::config("run.chains", "must be at least 1"));
        }
        if let StepSize::Value(h) = r.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("run.h", "must be positive"));
            }
        }
        if !(r.init.std >= 0.0) {
            return Err(Error::config("run.init.std", "must be nonnegative"));
        }
        let m = &self.metrics;
        if !(0.0..1.0).contains(&m.burn_in) {
            return Err(Error::config("metrics.burn_in", "must lie in [0, 1)"));
        }
        if !(m.plateau_fraction > 0.0 && m.plateau_fraction <= 1.0) {
            return Err(Error::config("metrics.plateau_fraction", "must lie in (0, 1]"));
        }
        if m.pool_thin == 0 {
            return Err(Error::config("metrics.pool_thin", "must be at least 1"));
        }
        if let Some(ranges) = &m.tv_range {
            if ranges.len() != self.problem.dim() {
                return Err(Error::config(
                    "metrics.tv_range",
                    format!("expected {} ranges, got {}", self.problem.dim(), ranges.len()),
                ));
            }
        }
        if let Err(e) = CompressorSpec::new(self.compressor, self.problem.dim()) {
            let field = match self.compressor {
                CompressorKind::Identity => "compressor.kind",
                CompressorKind::RandK { .. } => "compressor.k",
                CompressorKind::StochasticRound { .. } => "compressor.levels",
                CompressorKind::Bernoulli { .. } => "compressor.keep_prob",
            };
            return Err(Error::config(field, e.to_string()));
        }
        if self.output.b_val == 0 {
            return Err(Error::config("output.b_val", "must be positive"));
        }
        if let Auto::Value(p) = self.estimator.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config("estimator.p", "must lie in (0, 1]"));
            }
        }
        if let Some(g) = &self.sweep {
            if g.replicates == 0 {
                return Err(Error::config("sweep.replicates", "must be at least 1"));
            }
        }
        Ok(())
    }
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        match *self {
            ProblemConfig::Quadratic { dim, .. }
            | ProblemConfig::Streaming { dim, .. }
            | ProblemConfig::Mixture { dim, .. }
            | ProblemConfig::Logistic { dim, .. } => dim,
        }
    }

    fn build(&self, run_seed: u64) -> Result<Problem> {
        let seed_of = |s: Option<u64>| s.unwrap_or_else(|| Streams::new(run_seed).child_seed(Purpose::Instance, 0));
        let bad = |e: Error| Error::config("problem", e.to_string());
        match self {
            ProblemConfig::Quadratic {
                dim,
                devices,
                samples,
                curvature,
                offset,
                instance_seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_of(*instance_seed));
                random_quadratic(*dim, *devices, *samples, (curvature[0], curvature[1]), *offset, &mut rng)
            }
            ProblemConfig::Streaming {
                dim,
                devices,
                curvature,
                offset,
                sigma,
                instance_seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_of(*instance_seed));
                random_streaming(*dim, *devices, (curvature[0], curvature[1]), *offset, *sigma, &mut rng)
            }
            ProblemConfig::Mixture {
                devices,
                weight,
                mean1,
                mean2,
                variance,
                dim,
            } => {
                let spec = MixtureSpec::new(
                    *weight,
                    mean1.to_point(*dim, "problem.mean1")?,
                    mean2.to_point(*dim, "problem.mean2")?,
                    *variance,
                )
                .map_err(bad)?;
                Problem::mixture(spec, *devices)
            }
            ProblemConfig::Logistic {
                dim,
                devices,
                samples,
                regularization,
                instance_seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed_of(*instance_seed));
                random_logistic(*dim, *devices, *samples, *regularization, &mut rng)
            }
        }
        .map_err(bad)
    }
}

/// A configuration turned into runnable objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub mode: Mode,
    pub problem: Problem,
    /// The estimator driving the run; for plain Langevin the exact one
    /// (identity compressor, `p = 1`), used only for theory constants.
    pub estimator: EstimatorSpec,
    pub run: RunSpec,
    pub caps: Caps,
    pub hist: Option<HistSpec>,
}

/// Step-size caps that apply to the resolved problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Caps {
    pub opt: Option<f64>,
    pub opt_pl: Option<f64>,
    pub sampling: Option<f64>,
}

impl ExperimentConfig {
    /// Builds the problem, estimator and run, resolving `"auto"` fields.
    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let problem = self.problem.build(self.run.seed)?;
        let d = problem.dim();
        let accounting = self.accounting();

        let estimator = if self.run.mode == Mode::Langevin {
            EstimatorSpec::new(EstimatorKind::Vanilla, 1.0, CompressorSpec::identity(d)?)?
        } else {
            let compressor = CompressorSpec::new(self.compressor, d).map_err(|e| Error::config("compressor", e.to_string()))?;
            let e = &self.estimator;
            let need = |v: Option<usize>, field: &str| {
                v.ok_or_else(|| Error::config(format!("estimator.{field}"), format!("required for {:?} estimators", e.kind)))
            };
            let kind = match e.kind {
                EstimatorName::Vanilla => EstimatorKind::Vanilla,
                EstimatorName::FiniteSum => EstimatorKind::FiniteSum {
                    minibatch: need(e.minibatch, "minibatch")?,
                },
                EstimatorName::Online => EstimatorKind::Online {
                    batch: need(e.batch, "batch")?,
                    minibatch: e.minibatch.unwrap_or(1),
                },
            };
            let samples = (0..problem.devices()).filter_map(|i| problem.sample_count(i)).max();
            let spec = match e.p {
                Auto::Auto => EstimatorSpec::with_default_p(kind, compressor, samples),
                Auto::Value(p) => EstimatorSpec::new(kind, p, compressor),
            }
            .map_err(|err| Error::config("estimator", err.to_string()))?;
            spec.check_problem(&problem).map_err(|err| Error::config("estimator.kind", err.to_string()))?;
            spec.with_coin_scope(e.coin_scope)
        };
        let estimator = estimator.with_accounting(accounting);

        let c = estimator.constants(&problem)?;
        let consts = problem.constants();
        let l = consts.smoothness;
        let caps = Caps {
            opt: step_cap_opt(l, c.p, c.alpha).ok(),
            opt_pl: consts.mu_pl.and_then(|mu| step_cap_opt_pl(l, c.p, c.alpha, mu).ok()),
            sampling: match consts.mu_lsi {
                Some(mu) => step_cap_sampling(l, c.p, c.alpha, mu).ok(),
                None => step_cap_opt(l, c.p, c.alpha).ok().map(|_| (c.p / (1.0 + c.alpha)).sqrt() / (14.0 * l)),
            },
        };
        let pick = |cap: Option<f64>, name: &str| {
            cap.ok_or_else(|| Error::config("run.h", format!("{name} is unavailable for this problem")))
        };
        let h = match self.run.h {
            StepSize::Value(h) => h,
            StepSize::AutoCap if self.run.mode.is_sampling() => pick(caps.sampling, "cap-sampling")?,
            StepSize::AutoCap | StepSize::CapOpt => pick(caps.opt, "cap-opt")?,
            StepSize::CapOptPl => pick(caps.opt_pl, "cap-opt-pl")?,
            StepSize::CapSampling => pick(caps.sampling, "cap-sampling")?,
        };

        let mean = self.run.init.mean.to_point(d, "run.init.mean")?;
        let init = if self.run.init.std > 0.0 {
            InitLaw::Gaussian {
                mean,
                std: self.run.init.std,
            }
        } else {
            InitLaw::Point(mean)
        };
        let mut run = RunSpec::new(h, self.run.iterations, self.run.chains, self.run.seed, init);
        run.shared_noise_seed = self.run.shared_noise_seed;
        run.cap_policy = if self.run.enforce_cap {
            CapPolicy::Enforce
        } else {
            CapPolicy::Warn
        };

        let m = &self.metrics;
        let hist = match &m.tv_range {
            Some(ranges) if self.run.mode.is_sampling() => Some(
                HistSpec::new(ranges.iter().map(|r| (r[0], r[1])).collect(), m.tv_bins)
                    .map_err(|e| Error::config("metrics.tv_range", e.to_string()))?,
            ),
            _ => None,
        };
        if self.run.mode.is_sampling() {
            run.record.moments_every = m.moments_every;
            if hist.is_some() {
                run.record.pool_from = Some(burn_in_index(self.run.iterations, m.burn_in));
                run.record.pool_thin = m.pool_thin;
            }
        }
        run.record.keep_final = false;

        Ok(Resolved {
            mode: self.run.mode,
            problem,
            estimator,
            run,
            caps,
            hist,
        })
    }
}

/// First iteration kept after discarding a `fraction` of `0..=iterations`.
pub fn burn_in_index(iterations: usize, fraction: f64) -> usize {
    ((iterations as f64) * fraction).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [problem]
        kind = "quadratic"
        dim = 3
        devices = 2

        [run]
        mode = "optimize"
        h = 0.1
        iterations = 10
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.compressor, CompressorKind::Identity);
        assert_eq!(c.estimator.p, Auto::Auto);
        assert_eq!(c.run.chains, 1);
        assert_eq!(c.metrics.burn_in, 0.5);
        assert_eq!(c.output.b_val, 64);
        let r = c.resolve().unwrap();
        assert_eq!(r.run.h, 0.1);
        assert_eq!(r.problem.devices(), 2);
    }

    #[test]
    fn unknown_field_names_its_path() {
        let text = MINIMAL.replace("iterations = 10", "iterations = 10\nsteps = 3");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "run.steps");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_name_nested_paths() {
        let text = format!("{MINIMAL}\n[run.init]\nstd = \"wide\"\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "run.init.std"),
            other => panic!("unexpected {other:?}"),
        }
        let text = MINIMAL.replace("h = 0.1", "h = \"largest\"");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "run.h"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn range_errors_name_paths() {
        let text = format!("{MINIMAL}\n[estimator]\np = 1.5\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "estimator.p"),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{MINIMAL}\n[estimator]\nkind = \"online\"\n");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        match c.resolve() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "estimator.batch"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn auto_fields_resolve() {
        let text = MINIMAL
            .replace("h = 0.1", "h = \"auto-cap\"")
            .replace("dim = 3", "dim = 10")
            + "\n[compressor]\nkind = \"rand-k\"\nk = 2\n";
        let r = ExperimentConfig::from_toml_str(&text).unwrap().resolve().unwrap();
        assert!((r.estimator.p - 0.2).abs() < 1e-15);
        assert_eq!(Some(r.run.h), r.caps.opt);
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!(
            "{MINIMAL}\n[estimator]\np = 0.5\n[metrics]\ntv_range = [[-1.0, 1.0], [-2.0, 2.0], [0.0, 1.0]]\n[sweep]\nh = [0.1, 0.2]\n"
        );
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn step_size_parses_from_flags() {
        assert_eq!("0.25".parse::<StepSize>().unwrap(), StepSize::Value(0.25));
        assert_eq!("cap-opt-pl".parse::<StepSize>().unwrap(), StepSize::CapOptPl);
        assert!("fast".parse::<StepSize>().is_err());
    }
}
