//! Seeded, splittable random streams.
//!
//! Every ensemble member draws from a ChaCha8 generator keyed by the 64-bit
//! root seed (expanded with `seed_from_u64`) and a 64-bit stream id. Path `i`
//! uses stream `2 i` for its velocity noise and stream `2 i + 1` for tracer
//! initialisation, so the velocity realisation of a path never depends on how
//! many tracers it carries. The generator position (`word_pos`) is part of
//! every checkpoint.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct PathRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of a [`PathRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, stored as a decimal string because it is 128-bit.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn velocity(seed: u64, path: u64) -> Self {
        Self::new(seed, 2 * path)
    }

    pub fn tracers(seed: u64, path: u64) -> Self {
        Self::new(seed, 2 * path + 1)
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(state: RngState) -> Self {
        let mut rng = Self::new(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }
}

impl RngCore for PathRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn restore_continues_the_stream() {
        let mut a = PathRng::velocity(42, 3);
        for _ in 0..17 {
            let _: f64 = a.sample(StandardNormal);
        }
        let mut b = PathRng::restore(a.state());
        for _ in 0..50 {
            let x: f64 = a.sample(StandardNormal);
            let y: f64 = b.sample(StandardNormal);
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = PathRng::velocity(1, 0);
        let mut b = PathRng::tracers(1, 0);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
