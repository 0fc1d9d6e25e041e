//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream addressed by
//! `(master seed, purpose, chain, iteration, device)`. The address is hashed
//! into a ChaCha8 key, so a stream's contents depend only on its address and
//! never on the order in which chains or devices are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Initial point `x_0 ~ rho_0`.
    Init = 1,
    /// Server-side Gaussian noise `Z_{k+1}`.
    Noise = 2,
    /// Refresh coin of the estimator.
    Coin = 3,
    /// Per-device compression and minibatch sampling.
    Device = 4,
    /// Synthetic problem instance generation.
    Instance = 5,
    /// Monte-Carlo checks run by the property suite.
    Validate = 6,
    /// Seeds of sweep grid points.
    Sweep = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into a single well-mixed 64-bit value.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Factory for addressed random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Opens the stream at the given address.
    pub fn stream(&self, purpose: Purpose, chain: u64, iteration: u64, device: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let prefix = mix(&[self.seed, purpose as u64, chain, iteration, device]);
        for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
            chunk.copy_from_slice(&mix(&[prefix, lane as u64]).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// Derives an independent master seed, e.g. for a sweep grid point.
    pub fn child_seed(&self, purpose: Purpose, index: u64) -> u64 {
        mix(&[self.seed, purpose as u64, index])
    }
}

/// The streams available to one chain during one round of the algorithm.
#[derive(Debug, Clone, Copy)]
pub struct RoundRng {
    pub streams: Streams,
    pub chain: u64,
    pub iteration: u64,
}

impl RoundRng {
    pub fn new(streams: Streams, chain: u64, iteration: u64) -> Self {
        Self {
            streams,
            chain,
            iteration,
        }
    }

    /// Stream for the shared refresh coin (or device `i`'s coin when coins are per device).
    pub fn coin(&self, device: Option<usize>) -> ChaCha8Rng {
        let dev = device.map_or(u64::MAX, |d| d as u64);
        self.streams
            .stream(Purpose::Coin, self.chain, self.iteration, dev)
    }

    /// Stream owned by device `i` for compression and minibatch draws.
    pub fn device(&self, device: usize) -> ChaCha8Rng {
        self.streams
            .stream(Purpose::Device, self.chain, self.iteration, device as u64)
    }
}
