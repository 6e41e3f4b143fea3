//! Reproducible per-trajectory noise streams.
//!
//! Each trajectory gets its own ChaCha8 generator keyed by four SplitMix64
//! outputs of the run seed combined with the golden-ratio-scrambled
//! trajectory index. Streams for distinct indices under the same seed are
//! statistically independent, and the whole construction is a pure function
//! of (seed, trajectory index): reruns of the same build reproduce every
//! stream bit for bit. Cross-build or cross-language bit-exactness is not
//! promised (the normal transform is the `rand_distr` ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The generator for one trajectory's sub-stream.
pub fn trajectory_rng(seed: u64, traj_index: u64) -> ChaCha8Rng {
    let mut state = seed ^ traj_index.wrapping_mul(GOLDEN_GAMMA);
    // Fold the raw index in once more so (seed, index) pairs that collide in
    // the xor above still separate.
    let mut idx_state = traj_index;
    state = state.wrapping_add(splitmix64(&mut idx_state));
    let mut key = [0u8; 32];
    for word in 0..4 {
        let v = splitmix64(&mut state);
        key[word * 8..word * 8 + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Draw n standard normal variates from a stream.
pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draw n Wiener increments over step dt (variance dt each).
pub fn wiener_increments(rng: &mut ChaCha8Rng, n: usize, dt: f64) -> Vec<f64> {
    let root = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * root
        })
        .collect()
}
