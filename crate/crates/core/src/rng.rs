//! Counter-based random streams.
//!
//! Every random quantity in the harness (initial weights, training batches,
//! gradient noise, validation sets) is drawn from a stream identified by
//! `(seed, purpose tag, index)`. The generator is fully specified here so
//! that runs can be reproduced from any language:
//!
//! ```text
//! mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          z ^ (z >> 31)                              (SplitMix64 finalizer)
//! tag_hash = FNV-1a 64 over the UTF-8 bytes of the tag
//! key      = mix(mix(seed ^ tag_hash) ^ mix(index + 0x9E3779B97F4A7C15))
//! word[c]  = mix(key + (c + 1) * 0x9E3779B97F4A7C15)  (wrapping arithmetic)
//! uniform  = (word >> 11) * 2^-53                     in [0, 1)
//! normal   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)       (two words per draw)
//! ```
//!
//! The counter `c` is the stream position; it is all the state a stream has.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// A deterministic stream of 64-bit words keyed by seed, purpose and index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, tag: &str) -> Self {
        Self::indexed(seed, tag, 0)
    }

    /// Stream number `index` for a purpose, e.g. the batch for step `index`.
    pub fn indexed(seed: u64, tag: &str, index: u64) -> Self {
        let key = mix64(mix64(seed ^ fnv1a(tag)) ^ mix64(index.wrapping_add(GOLDEN)));
        Self { key, counter: 0 }
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn set_position(&mut self, counter: u64) {
        self.counter = counter;
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n` (n > 0), by rejection to avoid modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }
}
