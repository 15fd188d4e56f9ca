//! Band-limited white measurement noise.
//!
//! One Gaussian draw per sample period `ts`, held constant until the next
//! sample instant. `power` is the spectral density of the underlying white
//! noise, so the held samples have variance `power / ts`.
//!
//! Stream: `ChaCha8Rng::seed_from_u64(seed)`, standard normals via
//! `rand_distr::StandardNormal`, sample `k` is the `k`-th draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NoiseChannel {
    power: f64,
    ts: f64,
    seed: u64,
    sigma: f64,
    current: f64,
    index: Option<u64>,
    rng: ChaCha8Rng,
}

impl NoiseChannel {
    pub fn new(power: f64, ts: f64, seed: u64) -> Result<Self> {
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::config(format!("noise sample period must be positive, got {ts}")));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::config(format!("noise power must be nonnegative, got {power}")));
        }
        Ok(NoiseChannel {
            power,
            ts,
            seed,
            sigma: (power / ts).sqrt(),
            current: 0.0,
            index: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn sample_period(&self) -> f64 {
        self.ts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Standard deviation of the held samples, `sqrt(power / ts)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Currently held value.
    pub fn current(&self) -> f64 {
        self.current
    }

    /// Value held over sample interval `k`, i.e. `[k ts, (k+1) ts)`.
    ///
    /// Queries are cheapest in nondecreasing order; going backwards replays
    /// the stream from the seed.
    pub fn sample_at_index(&mut self, k: u64) -> f64 {
        if self.power == 0.0 {
            self.index = Some(k);
            self.current = 0.0;
            return 0.0;
        }
        if matches!(self.index, Some(i) if k < i) {
            self.rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.index = None;
        }
        let start = self.index.map_or(0, |i| i + 1);
        for _ in start..=k {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.current = self.sigma * z;
        }
        self.index = Some(k);
        self.current
    }

    /// Value held at time `t >= 0`.
    pub fn sample(&mut self, t: f64) -> f64 {
        let k = ((t / self.ts) + 1e-9).floor().max(0.0) as u64;
        self.sample_at_index(k)
    }
}

/// Zero-mean Gaussian band-limited noise sample at `t`; see [`NoiseChannel`].
pub fn sample_noise(ch: &mut NoiseChannel, t: f64) -> f64 {
    ch.sample(t)
}

/// SplitMix64 finalizer, used to derive independent per-run seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
