//! Independent random streams derived from the single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Split,
    Shuffle(u64),
    Sample,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Split => 2,
            Stream::Sample => 3,
            Stream::Shuffle(epoch) => (1 << 32) + epoch,
        }
    }
}

/// ChaCha stream `stream` of the generator keyed by `seed`.
pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
