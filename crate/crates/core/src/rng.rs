//! Small deterministic random number generator.
//!
//! Everything in this crate that needs randomness (weight init, shuffling,
//! synthetic data) goes through [`Rng`] so that a seed fully determines every
//! output, independent of platform, crate versions, or thread count.
//! SplitMix64 is sufficient for simulation-quality randomness at this scale.

/// SplitMix64 generator with a Box-Muller cache for normal deviates.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            spare_normal: None,
        }
    }

    /// Derives an independent stream from this seed and a stream index.
    /// Used to give each video / component its own generator.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut r = Rng::new(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        // burn a few values so nearby streams decorrelate
        for _ in 0..4 {
            r.next_u64();
        }
        r
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 top bits -> uniform double
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // modulo bias is negligible for the small n used here
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal deviate (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = self.next_f64();
            let v = self.next_f64();
            if u > f64::MIN_POSITIVE {
                let r = (-2.0 * u.ln()).sqrt();
                let theta = 2.0 * std::f64::consts::PI * v;
                self.spare_normal = Some(r * theta.sin());
                return r * theta.cos();
            }
        }
    }

    /// Bernoulli draw with success probability `p`.
    pub fn coin(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Index drawn from an unnormalized weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut x = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            x -= w;
            if x < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Geometric run length with the given mean (support starts at 1).
    pub fn geometric_len(&mut self, mean: f64) -> usize {
        let m = mean.max(1.0);
        let p = 1.0 / m;
        let mut k = 1usize;
        while !self.coin(p) && k < 1_000_000 {
            k += 1;
        }
        k
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
