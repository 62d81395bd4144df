//! Stable, seedable hashing for deterministic pseudo-randomness.
//!
//! `std`'s default hasher is not guaranteed stable across releases, and
//! reproducibility of curation runs depends on these values never changing.

/// FNV-1a over bytes, folded into an accumulator.
fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(0x100000001b3);
    }
    state
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Hashable key parts for [`stable_hash`].
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Str(&'a str),
    U64(u64),
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(s: &'a str) -> Self {
        Part::Str(s)
    }
}

impl From<u64> for Part<'_> {
    fn from(v: u64) -> Self {
        Part::U64(v)
    }
}

impl From<u32> for Part<'_> {
    fn from(v: u32) -> Self {
        Part::U64(u64::from(v))
    }
}

impl From<usize> for Part<'_> {
    fn from(v: usize) -> Self {
        Part::U64(v as u64)
    }
}

/// Deterministic 64-bit hash of the given parts.
pub fn stable_hash(parts: &[Part<'_>]) -> u64 {
    let mut state = 0xcbf29ce484222325; // FNV offset basis
    for part in parts {
        match part {
            Part::Str(s) => {
                state = fnv1a(state, s.as_bytes());
                state = fnv1a(state, &[0xff]); // separator, avoids concat collisions
            }
            Part::U64(v) => {
                state = fnv1a(state, &v.to_le_bytes());
            }
        }
    }
    mix(state)
}

/// Uniform draw in [0, 1) derived from a stable hash.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
