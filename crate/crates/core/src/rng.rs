//! Keyed pseudo-random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream whose 256-bit key is
//! expanded from `(seed, domain)` with SplitMix64 and whose 64-bit stream id
//! packs two counters (usually round and client id). No generator state is
//! shared between draws, so results do not depend on the order in which
//! clients are processed.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::DenseMatrix;

/// Purpose tag mixed into the key so that independent uses of one seed never
/// share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sampling = 0x5341_4d50,
    Init = 0x494e_4954,
    Recovery = 0x5245_4356,
    Partition = 0x5041_5254,
    Synthetic = 0x5359_4e54,
    Eigen = 0x4549_4745,
    Holdout = 0x484f_4c44,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, domain, major, minor)`. `major` and `minor` are packed
/// into the 64-bit ChaCha stream id as `major << 32 | minor`.
pub fn keyed(seed: u64, domain: Domain, major: u64, minor: u64) -> ChaCha8Rng {
    let mut state = seed ^ (domain as u64).rotate_left(32);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((major << 32) ^ (minor & 0xFFFF_FFFF));
    rng
}

pub fn gaussian_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Matrix with independent standard normal entries, filled row by row.
pub fn gaussian_matrix<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
