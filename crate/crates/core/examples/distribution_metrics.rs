//! Distances between Gaussians in closed form and from samples: KL, W2,
//! exact 1-D TV and histogram TV, with the Pinsker and Talagrand
//! inequalities that tie them together.
//!
//! ```text
//! cargo run --release --example distribution_metrics
//! ```

use langevin_marina::metrics::{
    kl_gaussian, tv_gaussian_1d, tv_histogram, w2_squared_gaussian, GaussianSummary, HistSpec,
};
use langevin_marina::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> langevin_marina::Result<()> {
    let target = GaussianSummary::isotropic(Point::zeros(1), 1.0);
    let density = |x: &Point| target.log_density(x).map_or(0.0, f64::exp);
    let hist = HistSpec::one_d(-5.0, 5.0, 64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    println!(
        "{:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "mean", "var", "KL", "W2^2", "TV exact", "TV hist", "sqrt(KL/2)", "2KL"
    );
    for (m, v) in [(0.0, 1.0), (0.5, 1.0), (0.0, 2.0), (1.0, 0.5), (2.0, 3.0)] {
        let rho = GaussianSummary::isotropic(Point::from_element(1, m), v);
        let kl = kl_gaussian(&rho, &target)?;
        let w2 = w2_squared_gaussian(&rho, &target)?;
        let tv = tv_gaussian_1d(m, v, 0.0, 1.0)?;
        let samples: Vec<Point> = (0..100_000)
            .map(|_| Point::from_element(1, m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let tv_hist = tv_histogram(&samples, density, &hist)?;
        // The target has μ = 1, so Talagrand reads W2² ≤ 2·KL.
        println!(
            "{m:>6} {v:>6} {kl:>10.4} {w2:>10.4} {tv:>10.4} {tv_hist:>10.4} {:>10.4} {:>10.4}",
            (kl / 2.0).sqrt(),
            2.0 * kl
        );
    }
    Ok(())
}
