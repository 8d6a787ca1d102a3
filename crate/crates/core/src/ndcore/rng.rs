use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Seeded generator: ChaCha8 keyed with `seed_from_u64(seed)`.
///
/// Floats are built from the top 53 bits of `next_u64`, so the draw sequence
/// depends only on the ChaCha8 stream, which is fixed across platforms.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`. Callers validate the range.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let x = lo + (hi - lo) * self.next_f64();
        // rounding can land exactly on `hi` for narrow ranges
        if x >= hi {
            hi.next_down()
        } else {
            x
        }
    }

    /// Uniform integer in `0..n`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        // rejection sampling keeps the distribution exact
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % n;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Sub-seed for one labelled unit of work.
///
/// FNV-1a (64-bit) over the parts joined by `0x1f`, XORed with the master
/// seed, then passed through the SplitMix64 finalizer.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(PRIME);
        }
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    splitmix64(h ^ master)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_labels() {
        let a = derive_seed(1, &["B.1.1.7", "LSTM", "25", "1"]);
        let b = derive_seed(1, &["B.1.1.7", "LSTM", "25", "2"]);
        let c = derive_seed(2, &["B.1.1.7", "LSTM", "25", "1"]);
        let d = derive_seed(1, &["B.1.1.7LSTM", "25", "1"]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_seed(1, &["B.1.1.7", "LSTM", "25", "1"]));
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Rng::new(5);
        assert!((0..1000).all(|_| rng.below(7) < 7));
    }
}
