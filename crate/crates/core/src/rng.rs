//! Counter-based random streams.
//!
//! Every consumer of randomness (a Markov chain, a pruning draw, an
//! initialization) gets its own ChaCha stream keyed by `(seed, domain, index)`.
//! Streams never share state, so results do not depend on execution order or
//! thread count, and a stream position is fully described by [`StreamState`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent purposes that draw from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Chain = 2,
    Prune = 3,
    Measure = 4,
    Ticket = 5,
    TicketMask = 6,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a sub-seed; used to give each training phase its own chain family.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64((domain as u64) << 48 ^ splitmix64(index)))
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64((domain as u64) << 48 ^ index));
    rng
}

/// Serializable position of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        StreamState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
