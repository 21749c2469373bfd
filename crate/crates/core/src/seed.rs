//! Root-seed expansion: every stage draws from its own stream so stages
//! can be rerun independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named randomness consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Split,
    Ica,
    KpcaSubsample,
    Init,
    Dropout,
    Shuffle,
}

impl Stage {
    fn tag(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Ica => "ica",
            Stage::KpcaSubsample => "kpca-subsample",
            Stage::Init => "init",
            Stage::Dropout => "dropout",
            Stage::Shuffle => "shuffle",
        }
    }
}

/// Derives a 64-bit seed for `(root, stage, salt)`.
pub fn stage_seed(root: u64, stage: Stage, salt: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.tag().as_bytes());
    h.update([0u8]);
    h.update(salt.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stage_rng(root: u64, stage: Stage, salt: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(root, stage, salt))
}
