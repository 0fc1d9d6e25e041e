//! Checks the unbiasedness and variance contract of each compressor by Monte
//! Carlo and prints the wire cost of one message.
//!
//! ```text
//! cargo run --release --example compression_contract
//! ```

use langevin_marina::compression::{encoded_bits, BitAccounting, CompressorKind, CompressorSpec};
use langevin_marina::harness::validate::compression_stats;
use langevin_marina::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> langevin_marina::Result<()> {
    let d = 16;
    let draws = 50_000;
    let accounting = BitAccounting::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Point::from_fn(d, |i, _| (i as f64 - 7.5) / 4.0);

    println!("{:<18} {:>8} {:>10} {:>10} {:>8}", "compressor", "omega", "mse/|x|^2", "max |z|", "bits");
    for kind in [
        CompressorKind::Identity,
        CompressorKind::RandK { k: 4 },
        CompressorKind::StochasticRound { levels: 4 },
        CompressorKind::Bernoulli { keep_prob: 0.3 },
    ] {
        let spec = CompressorSpec::new(kind, d)?;
        let stats = compression_stats(&spec, &x, draws, &mut rng)?;
        let bits = encoded_bits(&spec.compress(&x, &mut rng)?, &accounting);
        println!(
            "{:<18} {:>8.3} {:>10.3} {:>10.2} {:>8}",
            kind.name(),
            spec.omega,
            stats.mse / x.norm_squared(),
            stats.max_z,
            bits
        );
    }
    println!("dense message: {} bits", accounting.dense_bits(d));
    Ok(())
}
