//! Self-contained deterministic PRNG: SplitMix64 seed expansion feeding
//! xoshiro256++, uniform doubles from the high 53 bits, Gaussians via
//! Box-Muller. Bit-identical across platforms and easy to port, which is
//! what the benchmark's reproducibility contract needs.

const TWO_POW_NEG53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 stream, used for seed expansion and seed derivation.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Derives a child seed from a base seed and a list of stream labels
/// (scene count, batch index, sigma bits, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut sm = SplitMix64::new(base);
    let mut h = sm.next_u64();
    for &p in parts {
        let mut sm = SplitMix64::new(h ^ p);
        h = sm.next_u64();
    }
    h
}

/// xoshiro256++ with a cached second Box-Muller variate.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    gauss_cache: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        Self {
            s: [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()],
            gauss_cache: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` from the high 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform in `(0, 1]`, safe as a logarithm argument.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 53-bit mantissa is plenty for the index ranges used here.
        (self.next_f64() * n as f64) as usize % n
    }

    /// Standard normal variate via Box-Muller; the paired variate is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.gauss_cache.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.gauss_cache = Some(r * theta.sin());
        r * theta.cos()
    }
}
