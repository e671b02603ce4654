//! Deterministic random substreams.
//!
//! Every Monte Carlo loop splits its work into fixed-size chunks and seeds
//! each chunk from `(seed, domain, index)`, so results do not depend on how
//! many worker threads pick the chunks up.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Rng = ChaCha8Rng;

/// Samples per chunk in data-parallel loops.
pub const CHUNK: usize = 2048;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(splitmix(seed ^ splitmix(domain.wrapping_add(0x5eed))));
    rng.set_stream(index);
    rng
}

/// Stream keyed by a path and a coordinate, used to couple Brownian
/// increments across truncation levels.
pub fn path_coord_stream(seed: u64, domain: u64, path: usize, coord: usize) -> Rng {
    substream(seed, domain, ((path as u64) << 20) | coord as u64)
}

pub mod domain {
    pub const TRANSITION: u64 = 1;
    pub const RESOLVENT: u64 = 2;
    pub const DERIVATIVE: u64 = 3;
    pub const GALERKIN: u64 = 4;
    pub const EXACT_OU: u64 = 5;
    pub const LEMMA41: u64 = 6;
    pub const PERTURBATION: u64 = 7;
    pub const NEUMANN: u64 = 8;
    pub const SAMPLER: u64 = 9;
    pub const HOLDER: u64 = 10;
    pub const RESIDUAL: u64 = 11;
    pub const FINITE_DIFF: u64 = 12;
    pub const VALIDATION: u64 = 13;
}

/// Runs `work(chunk_index, range)` over fixed chunks of `0..count` in
/// parallel and returns the per-chunk results in chunk order.
pub fn par_chunks<T, F>(count: usize, chunk: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, std::ops::Range<usize>) -> T + Sync,
{
    let chunk = chunk.max(1);
    let chunks = count.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|c| work(c, c * chunk..((c + 1) * chunk).min(count)))
        .collect()
}
