//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a [`StreamKey`]: a
//! `(seed, replication, step, tag)` tuple hashed into the starting state of a
//! small SplitMix64 generator. A record can therefore be regenerated from its
//! coordinates alone, independent of thread scheduling or of how many draws
//! other steps consumed. Two chains that read the same key see the same noise.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const KEY_BASIS: u64 = 0x5851_f42d_4c95_7f2d;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, v: u64) -> u64 {
    mix64(h ^ mix64(v.wrapping_add(GOLDEN_GAMMA)))
}

/// Purpose of a stream. Distinct tags give independent streams for the same
/// `(seed, replication, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    /// Gaussian increment, component index and the regeneration fields of one transition.
    Transition = 1,
    /// Rejection loop of the residual kernel for one transition.
    Residual = 2,
    /// Draws of random initial states.
    Init = 3,
    /// Monte-Carlo scans in verification routines.
    Verify = 4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
    pub step: u64,
    pub tag: StreamTag,
}

impl StreamKey {
    pub fn new(seed: u64, replication: u64, step: u64, tag: StreamTag) -> Self {
        Self {
            seed,
            replication,
            step,
            tag,
        }
    }

    pub fn with_tag(self, tag: StreamTag) -> Self {
        Self { tag, ..self }
    }

    /// 64-bit digest of the key; the starting state of its stream.
    pub fn digest(&self) -> u64 {
        let h = absorb(KEY_BASIS, self.seed);
        let h = absorb(h, self.replication);
        let h = absorb(h, self.step);
        absorb(h, self.tag as u64)
    }

    pub fn rng(&self) -> CounterRng {
        CounterRng::from_state(self.digest())
    }
}

/// SplitMix64 generator started from a key digest.
#[derive(Clone, Debug)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn from_state(state: u64) -> Self {
        Self { state }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Uniform draw from the closed unit ball of dimension `out.len()`.
pub fn fill_uniform_in_unit_ball<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let d = out.len();
    loop {
        fill_standard_normal(rng, out);
        let norm = crate::linalg::norm(out);
        if norm > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / d as f64);
            let scale = radius / norm;
            out.iter_mut().for_each(|v| *v *= scale);
            return;
        }
    }
}
