//! Reproducible random streams.
//!
//! Every consumer draws from its own ChaCha stream addressed by
//! `(master seed, domain, replication, index)`, so results do not depend on
//! scheduling or on how many draws other streams made.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for. Distinct domains never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Per-agent calibration data.
    AgentData,
    /// Per-agent private mechanism.
    Mechanism,
    /// Held-out test points.
    TestData,
    /// Anything else (heterogeneity draws, Monte Carlo diagnostics).
    Auxiliary,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::AgentData => 0x6461_7461,
            Domain::Mechanism => 0x6d65_6368,
            Domain::TestData => 0x7465_7374,
            Domain::Auxiliary => 0x6175_7869,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Factory for the streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, domain: Domain, rep: u64, index: u64) -> StreamRng {
        let mut state = self.master;
        let mut seed = [0u8; 32];
        let mix = [domain.tag(), rep];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            state ^= mix[i % 2].rotate_left(17 * i as u32);
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }
}
