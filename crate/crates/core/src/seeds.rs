//! Deterministic per-stage random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// Pipeline stages that consume randomness. Each gets its own ChaCha stream,
/// so re-running one stage never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Estimate = 1,
    Pac = 2,
    Pool = 3,
    Selection = 4,
    Training = 5,
    Baseline = 6,
    Probe = 7,
}

pub fn stage_rng(root: u64, stage: Stage) -> StageRng {
    substream(root, stage as u64)
}

/// Independent stream `index` below a root seed.
pub fn substream(root: u64, index: u64) -> StageRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index);
    rng
}

/// A derived 64-bit seed, for components that take a plain seed.
pub fn derive_seed(root: u64, stage: Stage, index: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = root
        .wrapping_add((stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
