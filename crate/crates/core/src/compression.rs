//! Unbiased randomized compressors `Q` with `E[Q(x)] = x` and
//! `E‖Q(x) − x‖² ≤ ω‖x‖²`, plus their wire representation and bit cost.
//!
//! | kind              | ω                    | ζ (expected nonzeros) | wire   |
//! |-------------------|----------------------|-----------------------|--------|
//! | identity          | 0                    | d                     | dense  |
//! | rand-k            | d/k − 1              | k                     | sparse |
//! | stochastic round  | min(d/(4s²), √d/s)   | min(d, s(s + √d))     | sparse |
//! | bernoulli         | 1/q − 1              | q·d                   | sparse |
//!
//! Stochastic rounding is unbiased dithering onto `s` uniform levels of
//! `|x_j|/‖x‖`, with the norm kept exactly. Its ω is the analytic worst case:
//! the per-coordinate variance is `(‖x‖/s)²·r(1−r)` with `r` the fractional
//! part, bounded by both `¼` and `s|x_j|/‖x‖`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::targets::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompressorKind {
    Identity,
    /// Keep a uniformly random `k`-subset of coordinates, scaled by `d/k`.
    RandK { k: usize },
    /// Unbiased dithering onto `levels` levels per coordinate.
    StochasticRound { levels: u32 },
    /// Keep each coordinate independently with probability `keep_prob`, scaled by its inverse.
    Bernoulli { keep_prob: f64 },
}

impl CompressorKind {
    pub fn name(&self) -> &'static str {
        match self {
            CompressorKind::Identity => "identity",
            CompressorKind::RandK { .. } => "rand-k",
            CompressorKind::StochasticRound { .. } => "stochastic-round",
            CompressorKind::Bernoulli { .. } => "bernoulli",
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::invalid("compressor dimension must be positive"));
        }
        match *self {
            CompressorKind::RandK { k } if k == 0 || k > dim => Err(Error::invalid(format!(
                "rand-k needs 1 <= k <= d, got k = {k}, d = {dim}"
            ))),
            CompressorKind::StochasticRound { levels: 0 } => {
                Err(Error::invalid("stochastic rounding needs at least one level"))
            }
            CompressorKind::Bernoulli { keep_prob } if !(keep_prob > 0.0 && keep_prob < 1.0) => {
                Err(Error::invalid("bernoulli keep probability must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

/// Variance factor `ω` of `kind` in dimension `d`.
pub fn omega_of(kind: &CompressorKind, d: usize) -> f64 {
    let df = d as f64;
    match *kind {
        CompressorKind::Identity => 0.0,
        CompressorKind::RandK { k } => df / k as f64 - 1.0,
        CompressorKind::StochasticRound { levels } => {
            let s = levels as f64;
            (df / (4.0 * s * s)).min(df.sqrt() / s)
        }
        CompressorKind::Bernoulli { keep_prob } => 1.0 / keep_prob - 1.0,
    }
}

/// Worst-case expected nonzero count `ζ` of `kind` in dimension `d`.
pub fn zeta_of(kind: &CompressorKind, d: usize) -> f64 {
    let df = d as f64;
    match *kind {
        CompressorKind::Identity => df,
        CompressorKind::RandK { k } => k as f64,
        CompressorKind::StochasticRound { levels } => {
            let s = levels as f64;
            df.min(s * (s + df.sqrt()))
        }
        CompressorKind::Bernoulli { keep_prob } => keep_prob * df,
    }
}

/// A compressor bound to a dimension, with its constants resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub dim: usize,
    pub omega: f64,
    pub zeta: f64,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dim: usize) -> Result<Self> {
        kind.validate(dim)?;
        Ok(Self {
            kind,
            dim,
            omega: omega_of(&kind, dim),
            zeta: zeta_of(&kind, dim),
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(CompressorKind::Identity, dim)
    }

    pub fn rand_k(k: usize, dim: usize) -> Result<Self> {
        Self::new(CompressorKind::RandK { k }, dim)
    }

    /// Draws `Q(x)`.
    pub fn compress<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Result<CompressedMessage> {
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        Ok(match self.kind {
            CompressorKind::Identity => CompressedMessage::dense(x.clone()),
            CompressorKind::RandK { k } => {
                let mut subset = index::sample(rng, d, k).into_vec();
                subset.sort_unstable();
                rand_k_on_subset(x, &subset)
            }
            CompressorKind::StochasticRound { levels } => {
                let norm = x.norm();
                let s = levels as f64;
                let mut indices = Vec::new();
                let mut values = Vec::new();
                if norm > 0.0 {
                    for (j, &v) in x.iter().enumerate() {
                        let scaled = v.abs() / norm * s;
                        let low = scaled.floor();
                        let level = if rng.random::<f64>() < scaled - low { low + 1.0 } else { low };
                        if level > 0.0 {
                            indices.push(j as u32);
                            values.push(v.signum() * norm * level / s);
                        }
                    }
                }
                CompressedMessage::sparse(d, indices, values)
            }
            CompressorKind::Bernoulli { keep_prob } => {
                let mut indices = Vec::new();
                let mut values = Vec::new();
                for (j, &v) in x.iter().enumerate() {
                    if rng.random::<f64>() < keep_prob {
                        indices.push(j as u32);
                        values.push(v / keep_prob);
                    }
                }
                CompressedMessage::sparse(d, indices, values)
            }
        })
    }
}

/// Rand-k output for a fixed (sorted) coordinate subset. Every selected
/// coordinate is transmitted, zero or not.
pub fn rand_k_on_subset(x: &Point, subset: &[usize]) -> CompressedMessage {
    let scale = x.len() as f64 / subset.len() as f64;
    CompressedMessage::sparse(
        x.len(),
        subset.iter().map(|&j| j as u32).collect(),
        subset.iter().map(|&j| x[j] * scale).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Point),
    /// Strictly increasing indices with their values.
    Sparse { indices: Vec<u32>, values: Vec<f64> },
}

/// Wire form of `Q(x)`; [`CompressedMessage::decode`] reproduces it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub dim: usize,
    pub payload: Payload,
}

impl CompressedMessage {
    pub fn dense(x: Point) -> Self {
        Self {
            dim: x.len(),
            payload: Payload::Dense(x),
        }
    }

    pub fn sparse(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self {
            dim,
            payload: Payload::Sparse { indices, values },
        }
    }

    pub fn decode(&self) -> Point {
        match &self.payload {
            Payload::Dense(x) => x.clone(),
            Payload::Sparse { indices, values } => {
                let mut x = Point::zeros(self.dim);
                for (&j, &v) in indices.iter().zip(values) {
                    x[j as usize] = v;
                }
                x
            }
        }
    }

    /// Adds the decoded message into `acc` without materializing it.
    pub fn add_to(&self, acc: &mut Point, scale: f64) {
        match &self.payload {
            Payload::Dense(x) => acc.axpy(scale, x, 1.0),
            Payload::Sparse { indices, values } => {
                for (&j, &v) in indices.iter().zip(values) {
                    acc[j as usize] += scale * v;
                }
            }
        }
    }

    pub fn value_count(&self) -> usize {
        match &self.payload {
            Payload::Dense(x) => x.len(),
            Payload::Sparse { values, .. } => values.len(),
        }
    }

    pub fn index_count(&self) -> usize {
        match &self.payload {
            Payload::Dense(_) => 0,
            Payload::Sparse { indices, .. } => indices.len(),
        }
    }
}

/// Bit widths of one transmitted value and one transmitted index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BitAccounting {
    pub b_val: u64,
    pub b_idx: u64,
}

impl Default for BitAccounting {
    fn default() -> Self {
        Self { b_val: 64, b_idx: 32 }
    }
}

impl BitAccounting {
    /// Cost of sending `d` raw values.
    pub fn dense_bits(&self, d: usize) -> u64 {
        d as u64 * self.b_val
    }
}

/// `value_count·B_val + index_count·B_idx`.
pub fn encoded_bits(message: &CompressedMessage, accounting: &BitAccounting) -> u64 {
    message.value_count() as u64 * accounting.b_val + message.index_count() as u64 * accounting.b_idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pt(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn all_kinds(d: usize) -> Vec<CompressorSpec> {
        let mut kinds = vec![
            CompressorKind::Identity,
            CompressorKind::RandK { k: 1 },
            CompressorKind::RandK { k: d.div_ceil(2) },
            CompressorKind::RandK { k: d },
            CompressorKind::StochasticRound { levels: 1 },
            CompressorKind::StochasticRound { levels: 4 },
            CompressorKind::Bernoulli { keep_prob: 0.3 },
        ];
        kinds.dedup();
        kinds.into_iter().map(|k| CompressorSpec::new(k, d).unwrap()).collect()
    }

    #[test]
    fn identity_is_exact() {
        let spec = CompressorSpec::identity(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = spec.compress(&pt(&[1.0, 2.0, 3.0]), &mut rng).unwrap();
        assert_eq!(m.payload, Payload::Dense(pt(&[1.0, 2.0, 3.0])));
        assert_eq!(spec.omega, 0.0);
        assert_eq!(spec.zeta, 3.0);
        assert_eq!((omega_of(&CompressorKind::Identity, 7), zeta_of(&CompressorKind::Identity, 7)), (0.0, 7.0));
    }

    #[test]
    fn rand_k_enumeration() {
        let x = pt(&[1.0, 0.0, 0.0, 0.0]);
        let outcomes: Vec<Point> = (0..4).map(|j| rand_k_on_subset(&x, &[j]).decode()).collect();
        let mean = outcomes.iter().sum::<Point>() / 4.0;
        assert_eq!(mean, x);
        let var = outcomes.iter().map(|q| (q - &x).norm_squared()).sum::<f64>() / 4.0;
        assert_eq!(var, 3.0);
        let spec = CompressorSpec::rand_k(1, 4).unwrap();
        assert_eq!((spec.omega, spec.zeta), (3.0, 1.0));
    }

    #[test]
    fn rand_k_full_support_is_identity() {
        let spec = CompressorSpec::rand_k(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = pt(&[0.5, -2.0]);
        for _ in 0..10 {
            assert_eq!(spec.compress(&x, &mut rng).unwrap().decode(), x);
        }
        assert_eq!(spec.omega, 0.0);
    }

    #[test]
    fn rand_k_constants_and_monte_carlo_variance() {
        let spec = CompressorSpec::rand_k(5, 10).unwrap();
        assert_eq!((spec.omega, spec.zeta), (1.0, 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Point::from_fn(10, |j, _| j as f64 - 4.5);
        let draws = 100_000;
        let errs: Vec<f64> = (0..draws)
            .map(|_| (spec.compress(&x, &mut rng).unwrap().decode() - &x).norm_squared())
            .collect();
        let mean = errs.iter().sum::<f64>() / draws as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let exact = spec.omega * x.norm_squared();
        assert!((mean - exact).abs() <= 4.0 * sd / (draws as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn rand_k_errors() {
        assert!(CompressorSpec::rand_k(5, 4).is_err());
        assert!(CompressorSpec::rand_k(0, 4).is_err());
        let spec = CompressorSpec::rand_k(2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(spec.compress(&pt(&[1.0]), &mut rng), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bit_counts() {
        let acc = BitAccounting::default();
        let dense = CompressedMessage::dense(Point::zeros(100));
        assert_eq!(encoded_bits(&dense, &acc), 6400);
        let sparse = CompressedMessage::sparse(100, (0..10).collect(), vec![1.0; 10]);
        assert_eq!(encoded_bits(&sparse, &acc), 960);
        let spec = CompressorSpec::rand_k(10, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = Point::from_fn(100, |_, _| rng.sample::<f64, _>(StandardNormal));
            assert_eq!(encoded_bits(&spec.compress(&x, &mut rng).unwrap(), &acc), 960);
        }
    }

    /// Monte-Carlo unbiasedness at one point (4 standard errors per
    /// coordinate, 10⁵ draws) and the variance bound (5% slack) at 20 points.
    #[test]
    fn unbiased_with_bounded_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 6;
        for spec in all_kinds(d) {
            for trial in 0..20 {
                let x = Point::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let draws = if trial == 0 { 100_000 } else { 20_000 };
                let mut sum = Point::zeros(d);
                let mut sum_sq = Point::zeros(d);
                let mut err = 0.0;
                let mut nnz = 0usize;
                for _ in 0..draws {
                    let m = spec.compress(&x, &mut rng).unwrap();
                    let q = m.decode();
                    nnz += q.iter().filter(|v| **v != 0.0).count();
                    err += (&q - &x).norm_squared();
                    sum_sq += q.component_mul(&q);
                    sum += q;
                }
                let nf = draws as f64;
                let mean = &sum / nf;
                for j in 0..d {
                    if trial > 0 {
                        break;
                    }
                    let var = (sum_sq[j] / nf - mean[j] * mean[j]).max(0.0);
                    let se = (var / nf).sqrt();
                    assert!(
                        (mean[j] - x[j]).abs() <= 4.0 * se + 1e-9 * x[j].abs(),
                        "{}: coordinate {j} mean {} vs {}",
                        spec.kind.name(),
                        mean[j],
                        x[j]
                    );
                }
                assert!(err / nf <= spec.omega * x.norm_squared() * 1.05 + 1e-12, "{}", spec.kind.name());
                assert!(nnz as f64 / nf <= spec.zeta * 1.05, "{}", spec.kind.name());
            }
        }
    }

    #[test]
    fn stochastic_round_bound_is_attained_in_order() {
        // x = e_1 + tiny: a single dominant coordinate rounds exactly
        let spec = CompressorSpec::new(CompressorKind::StochasticRound { levels: 2 }, 4).unwrap();
        assert_relative_eq!(spec.omega, (4.0f64 / 16.0).min(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = spec.compress(&pt(&[3.0, 0.0, 0.0, 0.0]), &mut rng).unwrap().decode();
        assert_eq!(q, pt(&[3.0, 0.0, 0.0, 0.0]));
    }

    proptest! {
        #[test]
        fn zero_maps_to_zero(d in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for spec in all_kinds(d) {
                let m = spec.compress(&Point::zeros(d), &mut rng).unwrap();
                prop_assert_eq!(m.decode(), Point::zeros(d));
            }
        }

        #[test]
        fn decode_and_accumulate_agree(d in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Point::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            for spec in all_kinds(d) {
                let m = spec.compress(&x, &mut rng).unwrap();
                let mut acc = Point::from_element(d, 1.0);
                m.add_to(&mut acc, 2.0);
                prop_assert_eq!(acc, Point::from_element(d, 1.0) + m.decode() * 2.0);
                prop_assert_eq!(m.value_count(), match &m.payload {
                    Payload::Dense(_) => d,
                    Payload::Sparse { values, .. } => values.len(),
                });
                let acc = BitAccounting { b_val: 7, b_idx: 3 };
                prop_assert_eq!(
                    encoded_bits(&m, &acc),
                    7 * m.value_count() as u64 + 3 * m.index_count() as u64
                );
            }
        }

        #[test]
        fn rand_k_always_sends_k_entries(d in 1usize..20, kfrac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = 1 + ((d - 1) as f64 * kfrac) as usize;
            let spec = CompressorSpec::rand_k(k, d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Point::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = spec.compress(&x, &mut rng).unwrap();
            prop_assert_eq!(m.index_count(), k);
            let q = m.decode();
            for j in 0..d {
                prop_assert!(q[j] == 0.0 || q[j] == x[j] * (d as f64 / k as f64));
            }
        }

        #[test]
        fn omega_zero_only_without_compression(d in 1usize..50, k in 1usize..50) {
            prop_assume!(k <= d);
            let spec = CompressorSpec::rand_k(k, d).unwrap();
            prop_assert_eq!(spec.omega == 0.0, k == d);
            prop_assert!(spec.zeta <= d as f64);
        }
    }
}
