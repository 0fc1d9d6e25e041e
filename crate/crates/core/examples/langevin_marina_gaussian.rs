//! Langevin-MARINA sampling a Gaussian target from a far start, compared with
//! uncompressed Langevin at the same step: distance to the target by moment
//! proxy, the W2 envelope, and the bits each method sent.
//!
//! ```text
//! cargo run --release --example langevin_marina_gaussian
//! ```

use langevin_marina::compression::{BitAccounting, CompressorSpec};
use langevin_marina::dynamics::{
    langevin_marina_run, langevin_run, step_cap_sampling, theory_bound, theory_params, BoundKind, InitLaw, RunSpec,
};
use langevin_marina::estimators::{EstimatorKind, EstimatorSpec};
use langevin_marina::metrics::w2_squared_gaussian;
use langevin_marina::targets::random_quadratic;
use langevin_marina::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> langevin_marina::Result<()> {
    let (d, n) = (10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let problem = random_quadratic(d, n, 1, (1.0, 2.0), 0.0, &mut rng)?;
    let target = problem.gaussian_target().expect("quadratic targets are Gaussian");
    let spec = EstimatorSpec::with_default_p(EstimatorKind::Vanilla, CompressorSpec::rand_k(2, d)?, None)?;
    let c = problem.constants();
    let alpha = spec.constants(&problem)?.alpha;
    let h = step_cap_sampling(c.smoothness, spec.p, alpha, c.mu_lsi.expect("strongly log-concave"))?;

    let init = InitLaw::Gaussian {
        mean: Point::from_element(d, 20.0),
        std: 1.0,
    };
    let mut run = RunSpec::new(h, 300, 2000, 11, init.clone());
    run.record.moments_every = 25;
    let compressed = langevin_marina_run(&problem, &spec, &run)?;
    let plain = langevin_run(&problem, &run, BitAccounting::default())?;
    let theory = theory_params(&problem, &spec, h, &init, true)?;

    println!("h = {h:.4e}, p = {}, alpha = {alpha:.3}", spec.p);
    println!("{:>5} {:>14} {:>14} {:>14}", "k", "W2^2 lmarina", "W2^2 langevin", "envelope");
    for (k, s) in &compressed.moments {
        let other = plain.moments_at(*k).expect("same recording schedule");
        println!(
            "{k:>5} {:>14.5e} {:>14.5e} {:>14.5e}",
            w2_squared_gaussian(s, &target)?,
            w2_squared_gaussian(other, &target)?,
            theory_bound(BoundKind::W22, &theory, *k)?
        );
    }
    // Devices regenerating the noise from a shared seed only need g_k broadcast.
    run.shared_noise_seed = true;
    run.chains = 1;
    let shared = langevin_marina_run(&problem, &spec, &run)?;
    println!(
        "bits sent: langevin {}, langevin-marina {}, with shared noise seed {}",
        plain.total_bits(),
        compressed.total_bits(),
        shared.total_bits()
    );
    Ok(())
}
