//! Seed splitting. Every consumer of randomness asks for its own stream id so
//! that adding draws in one module never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids handed out to modules.
pub mod streams {
    pub const INIT_CLOUD: u64 = 1;
    pub const WARM_UP: u64 = 2;
    pub const WINDOWS: u64 = 3;
    pub const DENSIFY: u64 = 4;
    pub const DEMO_SCENE: u64 = 5;
    pub const TESTS: u64 = 99;
}

/// A counter-based generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
