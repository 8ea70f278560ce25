//! Counter-keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, domain, stream id)`, so a trial's draws depend only on its index
//! and never on which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Domain tags keep the channel, interleaver and payload streams disjoint.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Domain {
    Trial = 1,
    Interleaver = 2,
    LinkTrial = 3,
    Auxiliary = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded family of independent streams.
#[derive(Clone)]
pub(crate) struct StreamFamily {
    base: ChaCha8Rng,
}

impl StreamFamily {
    pub(crate) fn new(seed: u64, domain: Domain) -> Self {
        let key = splitmix64(seed ^ splitmix64(domain as u64));
        Self {
            base: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub(crate) fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng.set_word_pos(0);
        rng
    }
}

/// Trials per work unit. Fixed, so partial sums are combined in the same
/// grouping whatever the thread count.
pub(crate) const CHUNK: u64 = 1 << 14;

/// Runs `body` for every trial in `0..trials`, accumulating per chunk and
/// merging chunk results in index order.
pub(crate) fn par_trials<A, I, B, M>(trials: u64, init: I, body: B, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    B: Fn(&mut A, u64) + Sync,
    M: Fn(&mut A, A),
{
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(trials);
            for t in c * CHUNK..end {
                body(&mut acc, t);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in parts {
        merge(&mut total, p);
    }
    total
}
