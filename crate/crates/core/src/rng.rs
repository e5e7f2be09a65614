//! Seed derivation for independent, order-free random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(master seed, purpose tag, indices...)`. The key is hashed into a
//! ChaCha8 seed, so two streams share state only if their keys are equal,
//! and a replication's stream does not depend on which worker runs it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives the 32-byte seed for `(master, tag, indices)`.
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"nwfpp/v1");
    h.update(master.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update((indices.len() as u64).to_le_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}

/// Folds a derived seed down to 64 bits, for APIs that take a `u64` seed.
pub fn derive_u64(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let s = derive_seed(master, tag, indices);
    u64::from_le_bytes(s[..8].try_into().expect("8 bytes"))
}

pub fn stream(master: u64, tag: &str, indices: &[u64]) -> SimRng {
    SimRng::from_seed(derive_seed(master, tag, indices))
}

/// Exp(1) by inversion, `-ln(1 - U)` with `U` uniform on `[0, 1)`.
///
/// `U = 0` would give a zero weight; it is redrawn so samples are strictly
/// positive.
#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -(-u).ln_1p();
        }
    }
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
