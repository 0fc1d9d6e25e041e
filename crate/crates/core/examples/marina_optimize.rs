//! MARINA on a random strongly convex quadratic at the PL step cap: the mean
//! objective gap stays below the linear-rate envelope.
//!
//! ```text
//! cargo run --release --example marina_optimize
//! ```

use langevin_marina::compression::CompressorSpec;
use langevin_marina::dynamics::{
    marina_run, step_cap_opt_pl, theory_bound, theory_params, BoundKind, InitLaw, RunSpec,
};
use langevin_marina::estimators::{EstimatorKind, EstimatorSpec};
use langevin_marina::targets::random_quadratic;
use langevin_marina::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> langevin_marina::Result<()> {
    let (d, n) = (8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = random_quadratic(d, n, 1, (1.0, 4.0), 1.0, &mut rng)?;
    let spec = EstimatorSpec::with_default_p(EstimatorKind::Vanilla, CompressorSpec::rand_k(2, d)?, None)?;
    let constants = spec.constants(&problem)?;
    let c = problem.constants();
    let mu = c.mu_pl.expect("quadratic targets are PL");
    let h = step_cap_opt_pl(c.smoothness, spec.p, constants.alpha, mu)?;

    let init = InitLaw::Point(Point::from_element(d, 3.0));
    let run = RunSpec::new(h, 500, 100, 5, init.clone());
    let trajectory = marina_run(&problem, &spec, &run)?;
    let theory = theory_params(&problem, &spec, h, &init, false)?;
    let f_star = theory.f_star.expect("quadratic minimum is known");

    println!("L = {:.3}, p = {}, alpha = {:.3}, h = {h:.4e}", c.smoothness, spec.p, constants.alpha);
    println!("{:>5} {:>14} {:>14} {:>12}", "k", "E F - F*", "envelope", "bits");
    for rec in trajectory.records.iter().step_by(50) {
        println!(
            "{:>5} {:>14.6e} {:>14.6e} {:>12}",
            rec.k,
            rec.objective - f_star,
            theory_bound(BoundKind::OptPl, &theory, rec.k)?,
            rec.cum_bits
        );
    }
    Ok(())
}
