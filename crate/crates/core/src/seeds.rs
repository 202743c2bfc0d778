//! Deterministic seed derivation and mixing.
//!
//! Every source of randomness in a run is derived from the run seed through
//! the functions here, so a run is reproducible from its config alone. The
//! mixer is a splitmix64 finalizer chain; it is stable across platforms and
//! Rust versions, unlike `std`'s hashers.

/// splitmix64 finalizer. Good avalanche on 64-bit inputs.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine two 64-bit values into one well-mixed value.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b)
}

/// Combine three 64-bit values.
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix(mix(a, b), c)
}

/// FNV-1a over a byte string; used to fold task ids and salts into seeds.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in s.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for rollout `index` of a task. Distinct indices give independent
/// rollouts; the same inputs always give the same seed.
pub fn rollout_seed(run_seed: u64, task_id: &str, index: u32) -> u64 {
    mix3(run_seed, hash_str(task_id), u64::from(index))
}

/// Seed for candidate `index` generated at `depth` below a node holding
/// `parent_seed`. Candidate 0 continues the parent's seed unchanged so that
/// width-1 searches replay the single-rollout path bit for bit.
pub fn candidate_seed(parent_seed: u64, depth: u32, index: u32) -> u64 {
    if index == 0 {
        parent_seed
    } else {
        mix3(parent_seed, hash_str("cand") ^ u64::from(depth), u64::from(index))
    }
}

/// Base seed for subtree `index` of a divided search. Subtree 0 keeps the
/// task seed so a single-subtree run is identical to a plain beam search.
pub fn subtree_seed(task_seed: u64, index: u32) -> u64 {
    if index == 0 {
        task_seed
    } else {
        mix3(task_seed, hash_str("subtree"), u64::from(index))
    }
}

/// Map a key to a uniform draw in `[0, 1)` using 53 mantissa bits.
pub fn unit(key: u64) -> f64 {
    (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64
}
