use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pattern_candidates, ProcessPoint, RuleDatabase, RuleStatus};
use crate::cstm::{Discovery, Hooks};
use crate::Multiset;

/// Stream reserved for exploration draws.
const EXPLORE_STREAM: u64 = 2;

/// Seeded sampler over a pool of latent rules the planner never sees.
pub struct Explorer<'a> {
    pool: &'a RuleDatabase,
    rng: ChaCha8Rng,
}

impl<'a> Explorer<'a> {
    pub fn new(pool: &'a RuleDatabase, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EXPLORE_STREAM);
        Explorer { pool, rng }
    }

    /// Draw a latent rule whose pattern is present in `contents`, and a
    /// condition point inside its window.
    pub fn sample(&mut self, contents: &Multiset) -> Option<Discovery> {
        let pool = self.pool;
        let cands = pattern_candidates(pool.rules.values(), contents);
        if cands.is_empty() {
            return None;
        }
        let r = cands[self.rng.random_range(0..cands.len())];
        let mut draw = |lo: f64, hi: f64| if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
        let point = ProcessPoint {
            temp: draw(r.temp_range[0], r.temp_range[1]),
            duration: draw(r.duration_range[0], r.duration_range[1]),
        };
        let mut rule = r.clone();
        rule.status = RuleStatus::Novel;
        rule.occurrences = 0;
        Some(Discovery {
            byproduct: pool.has_byproduct(&rule.id),
            rule,
            point,
        })
    }
}

impl Hooks for Explorer<'_> {
    fn explore(&mut self, contents: &Multiset) -> Option<Discovery> {
        self.sample(contents)
    }
}
