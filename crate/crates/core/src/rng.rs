//! Seeded random streams.
//!
//! Every random quantity in the crate comes from a [`ChaCha8Rng`] keyed by a
//! master seed. ChaCha is counter based and carries a 64-bit stream id, so
//! independent streams are obtained by keeping the key and changing the
//! stream rather than by reseeding. Stream ids are laid out as
//! `(purpose << 32) | index`:
//!
//! | purpose            | index                 |
//! |--------------------|-----------------------|
//! | [`Purpose::Simulate`]    | 0                |
//! | [`Purpose::Chain`]       | chain number     |
//! | [`Purpose::Replication`] | replication number |
//! | [`Purpose::Em`]          | 0                |
//! | [`Purpose::Design`]      | 0                |
//!
//! A validation replication derives a fresh master seed from its own stream
//! (see [`derive_seed`]) so that the chains it runs are again independent of
//! every other replication.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Simulate = 1,
    Chain = 2,
    Replication = 3,
    Em = 4,
    Design = 5,
}

/// The stream `index` of `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | u64::from(index));
    rng
}

/// A child master seed drawn from stream `index` of `purpose`.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u32) -> u64 {
    stream(seed, purpose, index).next_u64()
}
