//! Deterministic random-number streams.
//!
//! Every stochastic choice in the engine draws from a ChaCha stream derived
//! statelessly from `(seed, step, purpose)`. Nothing carries RNG state across
//! steps, so a resumed run replays the exact random decisions of an
//! uninterrupted one — the backbone of the bitwise-determinism guarantees.

use rand::SeedableRng;

pub use rand::Rng as RngCore;

/// The engine's RNG. ChaCha8 is deterministic, seedable from a `u64`, and
/// platform-independent.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Labels for independent random streams within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Parameter initialization.
    Init,
    /// Pixel selection for a ray batch.
    RayPixels,
    /// Stratified jitter for the coarsest sample set.
    Stratified,
    /// Inverse-transform resampling after proposal stage 0.
    Resample0,
    /// Inverse-transform resampling after proposal stage 1.
    Resample1,
    /// Per-step wavelength subset selection.
    Lambda,
    /// Image-cache refresh.
    Cache,
    /// Synthetic scene generation.
    Scene,
    /// Test trials and miscellaneous draws.
    Misc,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::RayPixels => 2,
            Purpose::Stratified => 3,
            Purpose::Resample0 => 4,
            Purpose::Resample1 => 5,
            Purpose::Lambda => 6,
            Purpose::Cache => 7,
            Purpose::Scene => 8,
            Purpose::Misc => 9,
        }
    }
}

/// SplitMix64 finalizer; decorrelates nearby seeds/steps.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the RNG stream for `(seed, step, purpose)`.
pub fn stream(seed: u64, step: u64, purpose: Purpose) -> Rng {
    let h = mix(mix(mix(seed) ^ step) ^ purpose.tag());
    Rng::seed_from_u64(h)
}
