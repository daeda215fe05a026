//! Scoped, order-independent random streams.
//!
//! A stream is identified by `(root_seed, round, client, purpose)`. The scope
//! tuple is hashed into a ChaCha key, so drawing from one client's stream
//! never perturbs another's and the order in which streams are opened does
//! not matter.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// What a stream is used for. The tag is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Synth,
    Partition,
    Poison,
    Cohort,
    LocalSolve,
    Permutation,
    RandomQuota,
    Custom(u32),
}

impl Purpose {
    fn tag(self) -> u32 {
        match self {
            Purpose::Synth => 1,
            Purpose::Partition => 2,
            Purpose::Poison => 3,
            Purpose::Cohort => 4,
            Purpose::LocalSolve => 5,
            Purpose::Permutation => 6,
            Purpose::RandomQuota => 7,
            Purpose::Custom(t) => 0x8000_0000 | t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub root_seed: u64,
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

impl RngStream {
    pub fn new(root_seed: u64, purpose: Purpose) -> Self {
        Self {
            root_seed,
            round: 0,
            client: 0,
            purpose,
        }
    }

    pub fn at_round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn for_client(mut self, client: u64) -> Self {
        self.client = client;
        self
    }

    pub fn with_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"fedtoken.rng.v1");
        h.update(self.root_seed.to_le_bytes());
        h.update(self.round.to_le_bytes());
        h.update(self.client.to_le_bytes());
        h.update(self.purpose.tag().to_le_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        key
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key())
    }
}
