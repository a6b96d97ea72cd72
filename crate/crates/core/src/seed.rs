//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by a path of `(label, index)`
//! pairs below a master seed. The mixing function is:
//!
//! ```text
//! h   = avalanche(key ^ fnv1a64(label))
//! out = avalanche(h + GOLDEN * (index + 1))        (wrapping arithmetic)
//! ```
//!
//! where `avalanche` is the SplitMix64 finalizer and `GOLDEN` is
//! `0x9E37_79B9_7F4A_7C15`. Streams are drawn from ChaCha8 seeded with the
//! derived value, so results do not depend on platform or thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over the UTF-8 bytes of `label`.
pub fn stable_hash(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

fn mix(key: u64, label: &str, index: u64) -> u64 {
    let h = avalanche(key ^ stable_hash(label));
    avalanche(h.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// A master seed plus a derivation path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    pub master: u64,
    pub derivation: Vec<(String, u64)>,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            derivation: Vec::new(),
        }
    }

    /// The key of this node: the master folded through the derivation path.
    pub fn key(&self) -> u64 {
        self.derivation
            .iter()
            .fold(self.master, |key, (label, index)| mix(key, label, *index))
    }

    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        let mut derivation = self.derivation.clone();
        derivation.push((label.to_owned(), index));
        SeedTree {
            master: self.master,
            derivation,
        }
    }

    pub fn derive(&self, label: &str, index: u64) -> u64 {
        derive_seed(self, label, index)
    }

    /// A fresh ChaCha8 stream keyed by this node.
    pub fn rng(&self) -> ChaCha8Rng {
        rng_from_seed(self.key())
    }
}

pub fn derive_seed(tree: &SeedTree, label: &str, index: u64) -> u64 {
    mix(tree.key(), label, index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
