//! Deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed derivation: FNV-1a over tagged parts, finalized with splitmix64.
/// Unlike `std::hash`, the result never changes across builds or platforms.
#[derive(Clone, Copy, Debug)]
pub struct SeedMixer(u64);

impl SeedMixer {
    pub fn new(base: u64) -> Self {
        Self(0xcbf2_9ce4_8422_2325).int(base)
    }

    fn bytes(mut self, bytes: &[u8]) -> Self {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self
    }

    pub fn int(self, v: u64) -> Self {
        self.bytes(&[0x01]).bytes(&v.to_le_bytes())
    }

    pub fn tag(self, s: &str) -> Self {
        self.bytes(&[0x02]).bytes(&(s.len() as u64).to_le_bytes()).bytes(s.as_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix(self.0)
    }
}
