//! Seed derivation for independent, scheduling-invariant random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream whose seed is the
//! master seed mixed with `(role, round, id)` through SplitMix64 finalizers.
//! Two streams never share state, so the order in which clients or workers are
//! scheduled cannot change what any of them draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Who is drawing from a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Partition = 1,
    ModelInit = 2,
    RoundPlan = 3,
    Client = 4,
    Synthetic = 5,
    Subsample = 6,
    Probe = 7,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, role: Role, round: u64, id: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ role as u64);
    h = splitmix64(h ^ round);
    splitmix64(h ^ id)
}

pub fn stream(master: u64, role: Role, round: u64, id: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, role, round, id))
}
