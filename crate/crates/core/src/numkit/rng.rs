use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Counter-based random stream keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8: the master seed selects the key, the stream id
/// selects the ChaCha stream, and the position inside the keystream is
/// the counter. Identical keys give identical sequences on every
/// platform, and any position can be reached directly with [`RngStream::at`].
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// What to draw from a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawKind {
    Uniform01,
    StandardGaussian,
    Choice(usize),
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    /// Stream positioned at `counter` 32-bit words into its keystream.
    pub fn at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self::new(master_seed, stream_id);
        s.rng.set_word_pos(u128::from(counter));
        s
    }

    /// A stream whose id is derived from this one's id and `parts`.
    pub fn derive(&self, parts: &[u64]) -> Self {
        Self::new(self.master_seed, stream_key(self.stream_id, parts))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// 32-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..n` (Lemire's multiply-and-reject).
    ///
    /// # Panics
    /// If `n == 0`.
    pub fn choice(&mut self, n: usize) -> usize {
        assert!(n >= 1, "choice over an empty range");
        let n = n as u64;
        let mut m = u128::from(self.rng.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.rng.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }

    /// Draws one value of the requested kind; indices are returned as `f64`.
    pub fn draw(&mut self, kind: DrawKind) -> f64 {
        match kind {
            DrawKind::Uniform01 => self.uniform01(),
            DrawKind::StandardGaussian => self.standard_gaussian(),
            DrawKind::Choice(n) => self.choice(n) as f64,
        }
    }

    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_gaussian()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.choice(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniformly distributed unit vector in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.gaussian_vec(dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into a 64-bit stream id rooted at `base`.
pub fn stream_key(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base ^ 0x9e37_79b9_7f4a_7c15), |acc, &p| {
        mix64(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(p))
    })
}
