//! Distances between distributions and moment summaries of chain ensembles.
//!
//! Closed forms are provided for Gaussian pairs (KL, W2, relative Fisher
//! information, 1-D TV). Empirical estimators cover 1-D W2 through the
//! quantile coupling and TV through fixed uniform binning against a density.
//!
//! Moment-matched summaries are exact for quadratic targets with exact
//! gradients, where every iterate law is Gaussian. For anything else they are
//! a Gaussian proxy and outputs label them as such.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};
use crate::targets::Point;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    /// Diagonal entries (variances).
    pub fn variances(&self) -> DVector<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.variances().sum()
    }
}

/// Mean and covariance of a (possibly approximate) Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Point,
    pub covariance: Covariance,
}

impl GaussianSummary {
    pub fn new(mean: Point, covariance: Covariance) -> Result<Self> {
        check_dim(mean.len(), covariance.dim())?;
        let ok = match &covariance {
            Covariance::Diagonal(v) => v.iter().all(|&s| s >= 0.0),
            Covariance::Full(m) => {
                let scale = m.amax().max(1.0);
                (m - m.transpose()).amax() <= 1e-10 * scale
                    && SymmetricEigen::new(m.clone()).eigenvalues.min() >= -1e-10 * scale
            }
        };
        if !ok {
            return Err(Error::invalid("covariance must be symmetric positive semidefinite"));
        }
        Ok(Self { mean, covariance })
    }

    /// `N(mean, var·I)`.
    pub fn isotropic(mean: Point, var: f64) -> Self {
        let d = mean.len();
        Self {
            mean,
            covariance: Covariance::Diagonal(DVector::from_element(d, var)),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density; `None` when the covariance is singular.
    pub fn log_density(&self, x: &Point) -> Option<f64> {
        let d = self.dim() as f64;
        let diff = x - &self.mean;
        let (quad, log_det) = match &self.covariance {
            Covariance::Diagonal(v) => {
                if v.iter().any(|&s| s <= 0.0) {
                    return None;
                }
                let quad = diff.iter().zip(v.iter()).map(|(z, s)| z * z / s).sum::<f64>();
                (quad, v.iter().map(|s| s.ln()).sum::<f64>())
            }
            Covariance::Full(m) => {
                let chol = Cholesky::new(m.clone())?;
                let quad = diff.dot(&chol.solve(&diff));
                (quad, 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            }
        };
        Some(-0.5 * (quad + log_det + d * (2.0 * std::f64::consts::PI).ln()))
    }
}

fn same_dim(a: &GaussianSummary, b: &GaussianSummary) -> Result<()> {
    check_dim(a.dim(), b.dim())?;
    check_dim(a.dim(), a.covariance.dim())?;
    check_dim(b.dim(), b.covariance.dim())
}

/// `KL(a ‖ b)`. Infinite when `a` is degenerate; an error when `b` is.
pub fn kl_gaussian(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    same_dim(a, b)?;
    let d = a.dim() as f64;
    let diff = &b.mean - &a.mean;
    if let (Covariance::Diagonal(va), Covariance::Diagonal(vb)) = (&a.covariance, &b.covariance) {
        if vb.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("second covariance must be positive definite"));
        }
        if va.iter().any(|&s| s <= 0.0) {
            return Ok(f64::INFINITY);
        }
        let mut total = 0.0;
        for j in 0..va.len() {
            let r = va[j] / vb[j];
            total += r - 1.0 - r.ln() + diff[j] * diff[j] / vb[j];
        }
        return Ok((0.5 * total).max(0.0));
    }
    let sb = b.covariance.to_dense();
    let chol_b = Cholesky::new(sb).ok_or_else(|| Error::invalid("second covariance must be positive definite"))?;
    let Some(chol_a) = Cholesky::new(a.covariance.to_dense()) else {
        return Ok(f64::INFINITY);
    };
    let log_det = |c: &Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol_b.solve(&a.covariance.to_dense()).trace();
    let quad = diff.dot(&chol_b.solve(&diff));
    Ok((0.5 * (trace + quad - d + log_det(&chol_b) - log_det(&chol_a))).max(0.0))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `W2(a, b)`. Diagonal pairs use the per-coordinate closed form; full
/// covariances use the Bures formula.
pub fn w2_gaussian(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    Ok(w2_squared_gaussian(a, b)?.sqrt())
}

/// `W2(a, b)²`.
pub fn w2_squared_gaussian(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    same_dim(a, b)?;
    let mean_part = (&a.mean - &b.mean).norm_squared();
    let cov_part = match (&a.covariance, &b.covariance) {
        (Covariance::Diagonal(va), Covariance::Diagonal(vb)) => va
            .iter()
            .zip(vb.iter())
            .map(|(x, y)| (x.max(0.0).sqrt() - y.max(0.0).sqrt()).powi(2))
            .sum(),
        _ => {
            let sa = a.covariance.to_dense();
            let sb = b.covariance.to_dense();
            let ra = psd_sqrt(&sa);
            let cross = psd_sqrt(&(&ra * &sb * &ra));
            (sa.trace() + sb.trace() - 2.0 * cross.trace()).max(0.0)
        }
    };
    Ok(mean_part + cov_part)
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("empirical W2 needs nonempty samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Empirical 1-D `W2` between two sample sets under the quantile coupling.
///
/// Unequal sizes are handled exactly by integrating the squared difference of
/// the two empirical quantile functions over `[0, 1]`.
pub fn w2_empirical_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    let a = sorted_finite(samples_a)?;
    let b = sorted_finite(samples_b)?;
    if a.len() == b.len() {
        let ms = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        return Ok(ms.sqrt());
    }
    // Breakpoints of the quantile functions are i/na and j/nb; merge them as
    // integer multiples of 1/(na·nb).
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut last: u128 = 0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * nb;
        let next_b = (j as u128 + 1) * na;
        let next = next_a.min(next_b);
        total += (next - last) as f64 * (a[i] - b[j]).powi(2);
        last = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok((total / (na * nb) as f64).sqrt())
}

/// Uniform binning over a 1-D interval or a 2-D rectangle, plus one overflow
/// bin for everything outside.
#[derive(Debug, Clone, PartialEq)]
pub struct HistSpec {
    pub ranges: Vec<(f64, f64)>,
    /// Bins per axis.
    pub bins: usize,
}

impl HistSpec {
    pub const DEFAULT_BINS: usize = 64;

    pub fn one_d(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![(lo, hi)], bins)
    }

    pub fn two_d(x: (f64, f64), y: (f64, f64), bins: usize) -> Result<Self> {
        Self::new(vec![x, y], bins)
    }

    pub fn new(ranges: Vec<(f64, f64)>, bins: usize) -> Result<Self> {
        if !(1..=2).contains(&ranges.len()) {
            return Err(Error::invalid("histograms are 1-D or 2-D"));
        }
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if ranges.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::invalid("histogram range must satisfy lo < hi"));
        }
        Ok(Self { ranges, bins })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Number of in-range cells.
    pub fn cells(&self) -> usize {
        self.bins.pow(self.dim() as u32)
    }

    fn width(&self, axis: usize) -> f64 {
        let (lo, hi) = self.ranges[axis];
        (hi - lo) / self.bins as f64
    }

    /// Cell index of `x`, or `None` when outside the range.
    fn locate(&self, x: &Point) -> Option<usize> {
        let mut index = 0;
        for (axis, &(lo, hi)) in self.ranges.iter().enumerate() {
            let v = x[axis];
            if !(v >= lo && v < hi) {
                return None;
            }
            let bin = (((v - lo) / self.width(axis)) as usize).min(self.bins - 1);
            index = index * self.bins + bin;
        }
        Some(index)
    }
}

/// Counts per cell, with the overflow count kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: HistSpec,
    pub counts: Vec<u64>,
    pub overflow: u64,
    pub total: u64,
}

impl Histogram {
    pub fn from_samples(spec: &HistSpec, samples: &[Point]) -> Result<Self> {
        let mut counts = vec![0u64; spec.cells()];
        let mut overflow = 0;
        for x in samples {
            check_dim(spec.dim(), x.len())?;
            match spec.locate(x) {
                Some(i) => counts[i] += 1,
                None => overflow += 1,
            }
        }
        Ok(Self {
            spec: spec.clone(),
            counts,
            overflow,
            total: samples.len() as u64,
        })
    }

    /// Cell masses followed by the overflow mass.
    pub fn masses(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts
            .iter()
            .chain(std::iter::once(&self.overflow))
            .map(|&c| c as f64 / t)
            .collect()
    }
}

// 8-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Target mass per cell by tensor Gauss–Legendre quadrature, followed by the
/// overflow mass `1 − Σ cells` (clamped at 0).
pub fn target_masses(spec: &HistSpec, density: impl Fn(&Point) -> f64) -> Vec<f64> {
    let mut masses = Vec::with_capacity(spec.cells() + 1);
    let node = |axis: usize, bin: usize, q: usize| {
        let w = spec.width(axis);
        let left = spec.ranges[axis].0 + bin as f64 * w;
        left + 0.5 * w * (GL_NODES[q] + 1.0)
    };
    match spec.dim() {
        1 => {
            let half = 0.5 * spec.width(0);
            for bin in 0..spec.bins {
                let mass: f64 = (0..8)
                    .map(|q| GL_WEIGHTS[q] * density(&Point::from_element(1, node(0, bin, q))))
                    .sum();
                masses.push(mass * half);
            }
        }
        _ => {
            let area = 0.25 * spec.width(0) * spec.width(1);
            for bx in 0..spec.bins {
                for by in 0..spec.bins {
                    let mut mass = 0.0;
                    for (qx, wx) in GL_WEIGHTS.iter().enumerate() {
                        for (qy, wy) in GL_WEIGHTS.iter().enumerate() {
                            let p = Point::from_column_slice(&[node(0, bx, qx), node(1, by, qy)]);
                            mass += wx * wy * density(&p);
                        }
                    }
                    masses.push(mass * area);
                }
            }
        }
    }
    let inside: f64 = masses.iter().sum();
    masses.push((1.0 - inside).max(0.0));
    masses
}

/// `½ Σ |empirical − target|` over cells and the overflow bin, with the target
/// mass of each cell integrated numerically from the normalized `density`.
pub fn tv_histogram(samples: &[Point], density: impl Fn(&Point) -> f64, spec: &HistSpec) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("TV estimate needs samples"));
    }
    let hist = Histogram::from_samples(spec, samples)?;
    let target = target_masses(spec, density);
    Ok(half_l1(&hist.masses(), &target))
}

/// `½ Σ |p − q|` between two histograms over the same spec.
pub fn tv_between(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::invalid("histograms must share a spec"));
    }
    Ok(half_l1(&a.masses(), &b.masses()))
}

fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    (0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Total variation between `N(m1, v1)` and `N(m2, v2)` on the line.
pub fn tv_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    // Density crossings solve a·x² + b·x + c = 0 (log p1 = log p2).
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + (s2 / s1).ln();
    let mut cuts = if a.abs() < 1e-14 * (1.0 / v1).max(1.0 / v2) {
        if b == 0.0 {
            return Ok(0.0);
        }
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            vec![]
        } else {
            let r = disc.sqrt();
            vec![(-b - r) / (2.0 * a), (-b + r) / (2.0 * a)]
        }
    };
    cuts.sort_by(f64::total_cmp);
    let cdf1 = |x: f64| normal_cdf((x - m1) / s1);
    let cdf2 = |x: f64| normal_cdf((x - m2) / s2);
    let log_ratio = |x: f64| -0.5 * (x - m1).powi(2) / v1 + 0.5 * (x - m2).powi(2) / v2 - (s1 / s2).ln();
    // Sum (P1 − P2) over the intervals where p1 > p2.
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts);
    edges.push(f64::INFINITY);
    let mut tv = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0 + lo.abs(),
            (false, true) => hi - 1.0 - hi.abs(),
            (false, false) => 0.0,
        };
        if log_ratio(probe) > 0.0 {
            tv += (cdf1(hi) - cdf1(lo)) - (cdf2(hi) - cdf2(lo));
        }
    }
    Ok(tv.clamp(0.0, 1.0))
}

/// Relative Fisher information `∫ ‖∇log(a/π)‖² da` between Gaussians.
pub fn fisher_gaussian(a: &GaussianSummary, target: &GaussianSummary) -> Result<f64> {
    same_dim(a, target)?;
    let singular = || Error::invalid("Fisher information needs positive definite covariances");
    let dm = &a.mean - &target.mean;
    if let (Covariance::Diagonal(va), Covariance::Diagonal(vt)) = (&a.covariance, &target.covariance) {
        if va.iter().chain(vt.iter()).any(|&s| s <= 0.0) {
            return Err(singular());
        }
        let mut total = 0.0;
        for j in 0..va.len() {
            let (pa, pt) = (1.0 / va[j], 1.0 / vt[j]);
            total += (pt - pa).powi(2) * va[j] + (pt * dm[j]).powi(2);
        }
        return Ok(total);
    }
    // ∇log(a/π)(x) = (P_π − P_a)(x − m_a) + P_π (m_a − m_π)
    let sa = a.covariance.to_dense();
    let pa = Cholesky::new(sa.clone()).ok_or_else(singular)?.inverse();
    let pt = Cholesky::new(target.covariance.to_dense())
        .ok_or_else(singular)?
        .inverse();
    let diff = &pt - &pa;
    Ok((&diff * &sa * &diff).trace() + (&pt * dm).norm_squared())
}

/// Sample mean and per-coordinate sample variance (denominator `R − 1`)
/// across chains.
pub fn moment_summary(chains: &[Point]) -> Result<GaussianSummary> {
    if chains.len() < 2 {
        return Err(Error::invalid("moment summary needs at least 2 chains"));
    }
    let d = chains[0].len();
    let mut mean = Point::zeros(d);
    let mut m2 = Point::zeros(d);
    for (i, x) in chains.iter().enumerate() {
        check_dim(d, x.len())?;
        let w = 1.0 / (i as f64 + 1.0);
        for j in 0..d {
            let delta = x[j] - mean[j];
            mean[j] += delta * w;
            m2[j] += delta * (x[j] - mean[j]);
        }
    }
    let r = chains.len() as f64;
    Ok(GaussianSummary {
        mean,
        covariance: Covariance::Diagonal(m2 / (r - 1.0)),
    })
}

/// Like [`moment_summary`] but with the full sample covariance.
pub fn moment_summary_full(chains: &[Point]) -> Result<GaussianSummary> {
    let (mean, m2) = welford(chains)?;
    let r = chains.len() as f64;
    let cov = m2 / (r - 1.0);
    Ok(GaussianSummary {
        mean,
        covariance: Covariance::Full(0.5 * (&cov + cov.transpose())),
    })
}

fn welford(chains: &[Point]) -> Result<(Point, DMatrix<f64>)> {
    if chains.len() < 2 {
        return Err(Error::invalid("moment summary needs at least 2 chains"));
    }
    let d = chains[0].len();
    let mut mean = Point::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    for (i, x) in chains.iter().enumerate() {
        check_dim(d, x.len())?;
        let delta = x - &mean;
        mean += &delta / (i as f64 + 1.0);
        let delta2 = x - &mean;
        m2 += &delta * delta2.transpose();
    }
    Ok((mean, m2))
}
