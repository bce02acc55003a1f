//! Deterministic random substreams.
//!
//! Every random quantity is drawn from a ChaCha stream selected by
//! `(purpose, setup, index)`. Workers never share a stream, so results do not
//! depend on scheduling or on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Default master seed used when a configuration omits one.
pub const DEFAULT_SEED: u64 = 0xCE11_F4EE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Deployment = 1,
    Phases = 2,
    StatisticsDraw = 3,
    EvaluationDraw = 4,
    Diagnostic = 5,
}

/// Returns the generator for `(purpose, setup, index)` under `seed`.
///
/// The stream id packs 4 bits of purpose, 28 bits of setup and 32 bits of
/// index.
pub fn substream(seed: u64, purpose: Purpose, setup: u32, index: u32) -> SimRng {
    debug_assert!(setup < (1 << 28));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = ((purpose as u64) << 60) | (u64::from(setup & 0x0FFF_FFFF) << 32) | u64::from(index);
    rng.set_stream(stream);
    rng
}
