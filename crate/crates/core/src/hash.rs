//! FNV-1a 64-bit hashing.
//!
//! Used for three unrelated but equally humble jobs: schema hashes of
//! feature-column lists, integrity checksums on the model container, and
//! manifest hashes that let a stage skip work when its inputs are
//! unchanged. FNV-1a is not cryptographic; it is stable, dependency-free,
//! and byte-for-byte reproducible across platforms, which is all the
//! pipeline needs.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Streaming FNV-1a 64 hasher.
#[derive(Clone, Debug)]
pub struct Fnv1a64 {
    state: u64,
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64 { state: FNV_OFFSET }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

/// One-shot hash of a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(bytes);
    h.finish()
}

/// Hash of a list of strings with an explicit separator so that
/// `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn fnv1a64_strings(parts: &[String]) -> u64 {
    let mut h = Fnv1a64::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(&[0x1f]);
    }
    h.finish()
}
