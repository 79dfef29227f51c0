use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for one consumer of a run seed. `key` identifies the
/// agent, `purpose` separates draws that must not interfere with each other.
pub fn stream_rng(seed: u64, key: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.wrapping_mul(8).wrapping_add(purpose));
    rng
}

pub const PURPOSE_INITIAL_ITERATE: u64 = 0;
pub const PURPOSE_AGENT: u64 = 1;
pub const PURPOSE_FLEET: u64 = 2;
