//! Counter-based deterministic random number generation.
//!
//! The generator is SplitMix64: output k of a stream with seed `s` is
//! `mix64(s + (k+1) * 0x9E3779B97F4A7C15)`, where `mix64` is the finalizer
//! from the reference implementation. Because each output depends only on
//! (seed, counter), streams can be forked by key without shared state and
//! reproduce bit-identically on every platform.
//!
//! Reference test vectors (seed = 0): the first three outputs are
//! `0xE220A8397B1DCDAF`, `0x6E789E6AA1B965F4`, `0x06C45D188009454F`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A SplitMix64 stream identified by a seed, advanced by an explicit counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetRng {
    seed: u64,
    counter: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { seed, counter: 0 }
    }

    /// Derive an independent stream from this one's seed and a list of key
    /// parts. Forking does not consume state from `self`.
    pub fn fork(&self, parts: &[u64]) -> Self {
        let mut seed = self.seed;
        for &p in parts {
            seed = mix64(seed.wrapping_add(GOLDEN_GAMMA).wrapping_add(p));
        }
        DetRng { seed, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive; modulo bias is
    /// negligible for the small ranges used here.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per call; the
    /// second variate is discarded to keep the draw count predictable.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
