//! Replay-stable Bernoulli erasure sampling.
//!
//! Every stochastic event has a 64-bit id. Its outcome in round `r` is the
//! `r`-th `f64` drawn from a ChaCha8 stream keyed by the master seed (little
//! endian in the first 8 key bytes, remaining key bytes zero) with the stream
//! number set to the event id. A draw `u < lsp` is a success. Since each
//! round consumes exactly one 64-bit word pair of its event's stream, the
//! outcome depends only on `(seed, event, round)`, and reading a stream
//! sequentially gives the same values as random access.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atom::{AtomSpec, FlowIdx, LinkIdx};

const ACK_UPLINK_BASE: u64 = 1 << 32;
const ACK_BROADCAST_BASE: u64 = 2 << 32;
const ACK_OVERHEAR_BASE: u64 = 3 << 32;

/// Event id of a data link.
pub fn link_event(link: LinkIdx) -> u64 {
    link as u64
}

/// Destination of `flow` to relay.
pub fn ack_uplink_event(flow: FlowIdx) -> u64 {
    ACK_UPLINK_BASE + flow as u64
}

/// Relay ACK broadcast heard by the source of `flow`.
pub fn ack_broadcast_event(flow: FlowIdx) -> u64 {
    ACK_BROADCAST_BASE + flow as u64
}

/// Relay ACK broadcast overheard by the destination of `flow`.
pub fn ack_overhear_event(flow: FlowIdx) -> u64 {
    ACK_OVERHEAR_BASE + flow as u64
}

/// Outcomes of every event of one round, keyed by event id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundChannelOutcome {
    pub round: u64,
    pub events: BTreeMap<u64, bool>,
}

impl RoundChannelOutcome {
    pub fn get(&self, event: u64) -> Option<bool> {
        self.events.get(&event).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelSampler {
    seed: u64,
}

fn keyed(seed: u64, event: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(event);
    rng
}

impl ChannelSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw of `event` in `round`.
    pub fn uniform(&self, event: u64, round: u64) -> f64 {
        let mut rng = keyed(self.seed, event);
        rng.set_word_pos(round as u128 * 2);
        rng.random::<f64>()
    }

    pub fn draw(&self, event: u64, round: u64, lsp: f64) -> bool {
        self.uniform(event, round) < lsp
    }

    /// Sequential reader of one event, starting at round 0.
    pub fn stream(&self, event: u64) -> EventStream {
        EventStream {
            rng: keyed(self.seed, event),
        }
    }

    /// Samples every data-link event of `atom` for `round`, plus the ACK
    /// events of every flow when `with_ack` is set.
    pub fn sample_round(&self, atom: &AtomSpec, round: u64, with_ack: bool) -> RoundChannelOutcome {
        let mut events = BTreeMap::new();
        for (i, l) in atom.links.iter().enumerate() {
            events.insert(link_event(i), self.draw(link_event(i), round, l.lsp));
        }
        if with_ack {
            for f in 0..atom.flows.len() {
                let Ok(paths) = atom.ack_paths(f) else { continue };
                events.insert(ack_uplink_event(f), self.draw(ack_uplink_event(f), round, paths.uplink));
                events.insert(
                    ack_broadcast_event(f),
                    self.draw(ack_broadcast_event(f), round, paths.broadcast),
                );
                events.insert(ack_overhear_event(f), self.draw(ack_overhear_event(f), round, paths.overhear));
            }
        }
        RoundChannelOutcome { round, events }
    }
}

/// One event's outcomes in round order.
#[derive(Debug, Clone)]
pub struct EventStream {
    rng: ChaCha8Rng,
}

impl EventStream {
    pub fn uniform(&mut self) -> f64 {
        // Same conversion as `Rng::random::<f64>` so streams match random access.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next(&mut self, lsp: f64) -> bool {
        self.uniform() < lsp
    }

    /// Skips `rounds` outcomes.
    pub fn skip(&mut self, rounds: u64) {
        let pos = self.rng.get_word_pos() + rounds as u128 * 2;
        self.rng.set_word_pos(pos);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{builtin_cross_atom, CrossLsp};

    #[test]
    fn perfect_links_always_succeed() {
        let atom = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        let s = ChannelSampler::new(9);
        for r in 0..200 {
            assert!(s.sample_round(&atom, r, true).events.values().all(|&b| b));
        }
    }

    #[test]
    fn tiny_probability_never_succeeds() {
        let s = ChannelSampler::new(1);
        assert!((0..1000).all(|r| !s.draw(3, r, 1e-12)));
    }

    #[test]
    fn stream_matches_random_access() {
        let s = ChannelSampler::new(0xdead_beef);
        let mut st = s.stream(4);
        for r in 0..50 {
            assert_eq!(st.uniform(), s.uniform(4, r));
        }
        let mut st = s.stream(ack_broadcast_event(1));
        st.skip(1000);
        assert_eq!(st.uniform(), s.uniform(ack_broadcast_event(1), 1000));
    }

    #[test]
    fn replay_is_order_independent() {
        let atom = builtin_cross_atom(CrossLsp::homogeneous(0.7, 0.6)).unwrap();
        let s = ChannelSampler::new(42);
        let forward: Vec<_> = (0..20).map(|r| s.sample_round(&atom, r, true)).collect();
        for r in (0..20).rev() {
            assert_eq!(s.sample_round(&atom, r, true), forward[r as usize]);
        }
        assert_eq!(forward[0].events.len(), 5 + 6);
    }

    #[test]
    fn different_seeds_differ() {
        let a = ChannelSampler::new(1);
        let b = ChannelSampler::new(2);
        assert!((0..64).any(|r| a.uniform(0, r) != b.uniform(0, r)));
    }
}
