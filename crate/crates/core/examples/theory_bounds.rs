//! Evaluates the convergence bounds in closed form: the contraction constant
//! `C`, the bias `τ`, and how the stationary KL floor responds to the step
//! size and refresh probability.
//!
//! ```text
//! cargo run --release --example theory_bounds
//! ```

use langevin_marina::compression::CompressorSpec;
use langevin_marina::dynamics::{theory_bound, theory_params, BoundKind, InitLaw};
use langevin_marina::estimators::{EstimatorKind, EstimatorSpec};
use langevin_marina::targets::random_quadratic;
use langevin_marina::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> langevin_marina::Result<()> {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let problem = random_quadratic(d, 4, 1, (1.0, 2.0), 0.0, &mut rng)?;
    let init = InitLaw::Gaussian {
        mean: Point::from_element(d, 5.0),
        std: 1.0,
    };
    println!("{:>6} {:>8} {:>10} {:>12} {:>12} {:>12}", "p", "h", "C", "tau", "KL(k=100)", "KL floor");
    for p in [0.1, 0.2, 0.5, 1.0] {
        let spec = EstimatorSpec::new(EstimatorKind::Vanilla, p, CompressorSpec::rand_k(2, d)?)?;
        for h in [0.002, 0.005, 0.01] {
            let theory = match theory_params(&problem, &spec, h, &init, true) {
                Ok(t) => t,
                Err(e) => {
                    println!("{p:>6} {h:>8} {e}");
                    continue;
                }
            };
            let (Ok(c), Ok(tau)) = (theory.c_exp(), theory.tau()) else {
                println!("{p:>6} {h:>8} {:>10}", "diverges");
                continue;
            };
            println!(
                "{p:>6} {h:>8} {c:>10.4} {tau:>12.4e} {:>12.4e} {:>12.4e}",
                theory_bound(BoundKind::Kl, &theory, 100)?,
                theory.kl_floor(usize::MAX)?
            );
        }
    }
    Ok(())
}
