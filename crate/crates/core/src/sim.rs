//! Round-driven simulation of an atom under end-to-end ARQ.

use std::fmt;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arq::{decode_sack, encode_sack, AckCounter, ArqError, SackFrame, WindowState};
use crate::atom::{validate_atom, AtomSpec, FlowIdx, PatternDelivery, Violation};
use crate::channel::{
    ack_broadcast_event, ack_overhear_event, ack_uplink_event, link_event, ChannelSampler, EventStream,
};
use crate::seqset::SeqSet;
use crate::tracking::{Extraction, NativeId, PoolSet, TrackingMode, Via, XorItem};

pub use crate::arq::Coupling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AckMode {
    /// Error-free, zero-airtime feedback after every round.
    Idealized,
    /// SACK frames every N coded receptions over lossy reverse links.
    Realistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tracking {
    /// Nothing is kept across rounds.
    Off,
    Single,
    Multi,
}

impl fmt::Display for AckMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AckMode::Idealized => "ideal",
            AckMode::Realistic => "realistic",
        })
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coupling::Coupled => "coupled",
            Coupling::NonCoupled => "noncoupled",
        })
    }
}

impl fmt::Display for Tracking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tracking::Off => "off",
            Tracking::Single => "single",
            Tracking::Multi => "multi",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("window size W must be at least 1")]
    ZeroWindow,
    #[error("ACK frequency N must be at least 1")]
    ZeroFrequency,
    #[error("data packet size D must be positive")]
    ZeroPacketSize,
    #[error("rounds ({rounds}) must exceed warmup ({warmup})")]
    WarmupTooLong { rounds: u64, warmup: u64 },
    #[error("need at least 2 batches and one round per batch, got {batches} batches over {measured} rounds")]
    BadBatches { batches: usize, measured: u64 },
    #[error("coupled ARQ is only defined with idealized ACK and W = 1")]
    CoupledUnsupported,
    #[error("invalid atom: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidAtom(Vec<Violation>),
    #[error(transparent)]
    Arq(#[from] ArqError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub atom: AtomSpec,
    pub mode: AckMode,
    pub coupling: Coupling,
    pub tracking: Tracking,
    pub w: usize,
    pub n: u32,
    /// ACK header bytes.
    pub k: u32,
    /// Data packet bytes.
    pub d: u32,
    pub seed: u64,
    /// Total rounds executed, warmup included.
    pub rounds: u64,
    pub warmup: u64,
    /// Batches for the batch-means confidence interval.
    pub batches: usize,
}

impl SimConfig {
    /// Idealized, non-coupled, single-iteration tracking, W = N = 1,
    /// K = 30, D = 600, 2e5 rounds with 1e4 warmup.
    pub fn new(atom: AtomSpec) -> Self {
        Self {
            atom,
            mode: AckMode::Idealized,
            coupling: Coupling::NonCoupled,
            tracking: Tracking::Single,
            w: 1,
            n: 1,
            k: 30,
            d: 600,
            seed: 1,
            rounds: 200_000,
            warmup: 10_000,
            batches: 50,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.w == 0 {
            return Err(SimError::ZeroWindow);
        }
        if self.n == 0 {
            return Err(SimError::ZeroFrequency);
        }
        if self.d == 0 {
            return Err(SimError::ZeroPacketSize);
        }
        if self.rounds <= self.warmup {
            return Err(SimError::WarmupTooLong {
                rounds: self.rounds,
                warmup: self.warmup,
            });
        }
        let measured = self.rounds - self.warmup;
        if self.batches < 2 || (self.batches as u64) > measured {
            return Err(SimError::BadBatches {
                batches: self.batches,
                measured,
            });
        }
        if self.coupling == Coupling::Coupled && (self.mode != AckMode::Idealized || self.w != 1) {
            return Err(SimError::CoupledUnsupported);
        }
        validate_atom(&self.atom).map_err(SimError::InvalidAtom)
    }

    /// Airtime of one ACK slot in data-slot units: (K + W/8) / D.
    pub fn ack_slot_cost(&self) -> f64 {
        (self.k as f64 + self.w as f64 / 8.0) / self.d as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    /// Rounds counted (warmup excluded).
    pub rounds: u64,
    pub slots_per_round: usize,
    pub delivered: Vec<u64>,
    pub data_slots: u64,
    /// ACK airtime in data-slot equivalents.
    pub ack_airtime: f64,
    pub transmissions: u64,
    pub wasteful: u64,
    pub boundary_wraps: u64,
    /// SACK frames sent by destinations.
    pub ack_events: u64,
    /// SACK frames that never reached their source.
    pub ack_lost: u64,
    /// ACK slots with three or more simultaneous senders.
    pub ack_collisions: u64,
    /// ACKs applied at sources.
    pub acks_applied: u64,
    pub extractions: u64,
    pub multi_extractions: u64,
    /// Distinct sequence numbers each source transmitted over the whole run.
    pub distinct_sent: Vec<u64>,
    pub max_o_pool: usize,
    pub max_c_pool: usize,
    pub throughput_per_round: f64,
    pub throughput_per_slot: f64,
    /// 95% half-width of the per-round throughput (batch means).
    pub ci95: f64,
}

impl SimStats {
    pub fn delivered_total(&self) -> u64 {
        self.delivered.iter().sum()
    }

    pub fn wasteful_fraction(&self) -> f64 {
        ratio(self.wasteful, self.transmissions)
    }

    pub fn ack_loss_fraction(&self) -> f64 {
        ratio(self.ack_lost, self.ack_events)
    }

    pub fn multi_iter_fraction(&self) -> f64 {
        ratio(self.multi_extractions, self.extractions)
    }

    pub const CSV_HEADER: &'static str = "seed,atom,mode,coupling,tracking,W,N,K,D,rounds,delivered,\
throughput_per_round,throughput_per_slot,ci95,wasteful_fraction,ack_events,ack_loss_fraction,multi_iter_fraction";

    /// One CSV row matching [`SimStats::CSV_HEADER`]. Per-flow delivered
    /// counts are joined with `;`.
    pub fn csv_row(&self, cfg: &SimConfig) -> String {
        let delivered: Vec<String> = self.delivered.iter().map(u64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            cfg.seed,
            cfg.atom.name,
            cfg.mode,
            cfg.coupling,
            cfg.tracking,
            cfg.w,
            cfg.n,
            cfg.k,
            cfg.d,
            self.rounds,
            delivered.join(";"),
            self.throughput_per_round,
            self.throughput_per_slot,
            self.ci95,
            self.wasteful_fraction(),
            self.ack_events,
            self.ack_loss_fraction(),
            self.multi_iter_fraction(),
        )
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Relative throughput loss against a benchmark.
pub fn degradation(actual: f64, benchmark: f64) -> f64 {
    (benchmark - actual) / benchmark
}

/// Extra airtime per packet relative to the benchmark: `Th1/Th_a - 1`.
pub fn overhead_metric(actual: f64, benchmark: f64) -> f64 {
    benchmark / actual - 1.0
}

struct AckStreams {
    uplink: EventStream,
    broadcast: EventStream,
    overhear: EventStream,
    uplink_p: f64,
    broadcast_p: f64,
    overhear_p: f64,
}

#[derive(Default, Clone, Copy)]
struct Batch {
    delivered: u64,
    slots: f64,
}

pub fn run(cfg: &SimConfig) -> Result<SimStats, SimError> {
    run_with_audit(cfg, |_, _, _| {})
}

/// Runs independent configurations in parallel; results keep input order.
pub fn run_many(cfgs: &[SimConfig]) -> Vec<Result<SimStats, SimError>> {
    cfgs.par_iter().map(run).collect()
}

/// Like [`run`], calling `audit(round, destination_flow, extraction)` for
/// every extraction, warmup included.
pub fn run_with_audit(
    cfg: &SimConfig,
    mut audit: impl FnMut(u64, FlowIdx, &Extraction),
) -> Result<SimStats, SimError> {
    cfg.validate()?;
    let atom = &cfg.atom;
    let n_flows = atom.flows.len();
    let spr = atom.slots_per_round();
    let realistic = cfg.mode == AckMode::Realistic;
    let sampler = ChannelSampler::new(cfg.seed);

    let mut link_streams: Vec<EventStream> = (0..atom.links.len()).map(|l| sampler.stream(link_event(l))).collect();
    let lsp: Vec<f64> = atom.links.iter().map(|l| l.lsp).collect();
    let mut ack_streams: Vec<AckStreams> = Vec::new();
    if realistic {
        for f in 0..n_flows {
            let p = atom.ack_paths(f).map_err(|_| SimError::InvalidAtom(Vec::new()))?;
            ack_streams.push(AckStreams {
                uplink: sampler.stream(ack_uplink_event(f)),
                broadcast: sampler.stream(ack_broadcast_event(f)),
                overhear: sampler.stream(ack_overhear_event(f)),
                uplink_p: p.uplink,
                broadcast_p: p.broadcast,
                overhear_p: p.overhear,
            });
        }
    }

    let mode = match cfg.tracking {
        Tracking::Multi => TrackingMode::Multi,
        _ => TrackingMode::Single,
    };
    let mut windows: Vec<WindowState> = (0..n_flows)
        .map(|_| WindowState::new(cfg.w))
        .collect::<Result<_, _>>()?;
    let mut pools: Vec<PoolSet> = (0..n_flows).map(|f| PoolSet::new(f, mode)).collect();
    let mut counters: Vec<AckCounter> = (0..n_flows)
        .map(|_| AckCounter::new(cfg.n))
        .collect::<Result<_, _>>()?;
    let mut dest_flow: Vec<Option<FlowIdx>> = vec![None; atom.nodes.len()];
    for (f, fl) in atom.flows.iter().enumerate() {
        dest_flow[fl.destination] = Some(f);
    }
    let mut sent: Vec<SeqSet> = vec![SeqSet::new(); n_flows];

    let measured = cfg.rounds - cfg.warmup;
    let ack_cost = cfg.ack_slot_cost();
    let mut st = SimStats {
        rounds: measured,
        slots_per_round: spr,
        delivered: vec![0; n_flows],
        data_slots: 0,
        ack_airtime: 0.0,
        transmissions: 0,
        wasteful: 0,
        boundary_wraps: 0,
        ack_events: 0,
        ack_lost: 0,
        ack_collisions: 0,
        acks_applied: 0,
        extractions: 0,
        multi_extractions: 0,
        distinct_sent: vec![0; n_flows],
        max_o_pool: 0,
        max_c_pool: 0,
        throughput_per_round: 0.0,
        throughput_per_slot: 0.0,
        ci95: 0.0,
    };
    let mut batches = vec![Batch::default(); cfg.batches];

    let mut seqs = vec![0u64; n_flows];
    let mut link_ok = vec![false; atom.links.len()];
    let mut deliveries: Vec<PatternDelivery> = Vec::new();
    let mut coded_rx = vec![false; n_flows];
    let mut frames: Vec<Option<SackFrame>> = vec![None; n_flows];

    for round in 0..cfg.rounds {
        let counting = round >= cfg.warmup;
        let batch = if counting {
            ((round - cfg.warmup) * cfg.batches as u64 / measured) as usize
        } else {
            0
        };

        // Sources pick their packets.
        match cfg.coupling {
            Coupling::NonCoupled => {
                for f in 0..n_flows {
                    let (seq, wrapped) = windows[f].next_to_send();
                    seqs[f] = seq;
                    if counting {
                        st.boundary_wraps += u64::from(wrapped);
                        st.wasteful += u64::from(pools[f].is_delivered(seq));
                    }
                }
            }
            Coupling::Coupled => {
                let i = pools.iter().map(|p| p.delivered().floor()).min().unwrap_or(0);
                seqs.iter_mut().for_each(|s| *s = i);
            }
        }
        for f in 0..n_flows {
            sent[f].insert(seqs[f]);
        }
        if counting {
            st.transmissions += n_flows as u64;
            st.data_slots += spr as u64;
            batches[batch].slots += spr as f64;
        }

        // Data slots.
        for (l, s) in link_streams.iter_mut().enumerate() {
            link_ok[l] = s.next(lsp[l]);
        }
        deliveries.clear();
        atom.execute_pattern(|l| link_ok[l], |d| deliveries.push(d));
        coded_rx.iter_mut().for_each(|c| *c = false);
        let mut any_extracted = false;
        for d in &deliveries {
            let Some(f) = dest_flow[d.node] else { continue };
            let item = XorItem::from_flows(&d.flows, |g| seqs[g]);
            if d.via == Via::RelayDownlink && item.touches_flow(f) {
                coded_rx[f] = true;
            }
            for e in pools[f].on_receive(item, d.via) {
                any_extracted = true;
                audit(round, f, &e);
                if counting {
                    st.delivered[f] += 1;
                    st.extractions += 1;
                    st.multi_extractions += u64::from(e.iteration >= 2);
                    batches[batch].delivered += 1;
                }
            }
        }

        // Feedback.
        if realistic {
            let due_list: Vec<FlowIdx> = (0..n_flows)
                .filter(|&f| counters[f].record_reception(coded_rx[f]))
                .collect();
            let draws: Vec<(bool, bool, bool)> = ack_streams
                .iter_mut()
                .map(|a| {
                    (
                        a.uplink.next(a.uplink_p),
                        a.broadcast.next(a.broadcast_p),
                        a.overhear.next(a.overhear_p),
                    )
                })
                .collect();
            if !due_list.is_empty() {
                for &f in &due_list {
                    frames[f] = Some(encode_sack(pools[f].delivered(), cfg.w)?);
                }
                let collided = due_list.len() >= 3;
                let relay_got: Vec<FlowIdx> = if collided {
                    Vec::new()
                } else {
                    due_list.iter().copied().filter(|&f| draws[f].0).collect()
                };
                for &f in &due_list {
                    if let Some(frame) = frames[f].as_ref() {
                        if relay_got.contains(&f) && draws[f].1 {
                            windows[f].apply_sack(frame)?;
                            if counting {
                                st.acks_applied += 1;
                            }
                        } else if counting {
                            st.ack_lost += 1;
                        }
                    }
                }
                // Destinations overhearing the relay's combined ACK learn
                // which packets of other flows are done.
                if !relay_got.is_empty() {
                    for g in 0..n_flows {
                        if !draws[g].2 {
                            continue;
                        }
                        let updates: Vec<(FlowIdx, SeqSet)> = relay_got
                            .iter()
                            .filter(|&&f| f != g)
                            .filter_map(|&f| frames[f].as_ref().map(|fr| (f, decode_sack(fr))))
                            .collect();
                        if !updates.is_empty() {
                            let refs: Vec<(FlowIdx, &SeqSet)> = updates.iter().map(|(f, s)| (*f, s)).collect();
                            pools[g].prune(&refs);
                        }
                    }
                }
                if counting {
                    st.ack_events += due_list.len() as u64;
                    st.ack_collisions += u64::from(collided);
                    let air = 2.0 * ack_cost;
                    st.ack_airtime += air;
                    batches[batch].slots += air;
                }
                for f in due_list {
                    frames[f] = None;
                }
            }
        } else {
            for f in 0..n_flows {
                windows[f].sync_delivered(pools[f].delivered());
            }
            if any_extracted {
                // Coupled sources keep resending delivered packets until the
                // common index moves, so only packets below it are dead.
                let snapshot: Vec<SeqSet> = match cfg.coupling {
                    Coupling::NonCoupled => pools.iter().map(|p| p.delivered().clone()).collect(),
                    Coupling::Coupled => {
                        let i = pools.iter().map(|p| p.delivered().floor()).min().unwrap_or(0);
                        vec![SeqSet::with_prefix(i); n_flows]
                    }
                };
                let refs: Vec<(FlowIdx, &SeqSet)> = snapshot.iter().enumerate().collect();
                for p in pools.iter_mut() {
                    p.prune(&refs);
                }
            }
        }

        if counting {
            for p in &pools {
                st.max_o_pool = st.max_o_pool.max(p.o_pool_len());
                st.max_c_pool = st.max_c_pool.max(p.c_pool_len());
            }
        }
        if cfg.tracking == Tracking::Off {
            pools.iter_mut().for_each(PoolSet::clear_pools);
        }
    }

    for f in 0..n_flows {
        st.distinct_sent[f] = sent[f].len();
    }
    let total_slots = st.data_slots as f64 + st.ack_airtime;
    let delivered = st.delivered_total() as f64;
    st.throughput_per_slot = delivered / total_slots;
    st.throughput_per_round = st.throughput_per_slot * spr as f64;
    let per_batch: Vec<f64> = batches
        .iter()
        .filter(|b| b.slots > 0.0)
        .map(|b| b.delivered as f64 / b.slots * spr as f64)
        .collect();
    st.ci95 = batch_means_half_width(&per_batch);
    Ok(st)
}

/// 95% half-width of the mean of `xs` treating them as i.i.d. batch means.
fn batch_means_half_width(xs: &[f64]) -> f64 {
    let b = xs.len();
    if b < 2 {
        return f64::INFINITY;
    }
    let mean = xs.iter().sum::<f64>() / b as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    t * (var / b as f64).sqrt()
}

/// Identity used in audit logs.
pub fn format_extraction(round: u64, dest_flow: FlowIdx, e: &Extraction, atom: &AtomSpec) -> String {
    let name = |id: &NativeId| format!("{}{}", atom.flows[id.flow].id, id.seq);
    let chain: Vec<String> = e
        .chain
        .iter()
        .map(|it| it.ids().iter().map(name).collect::<Vec<_>>().join("^"))
        .collect();
    format!(
        "{},{},{},{}",
        round,
        atom.flows[dest_flow].id,
        name(&e.id),
        chain.join(" ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{builtin_cross_atom, CrossLsp};

    fn cross(p: f64) -> AtomSpec {
        builtin_cross_atom(CrossLsp::homogeneous(p, p)).unwrap()
    }

    fn cfg(p: f64) -> SimConfig {
        SimConfig {
            rounds: 20_000,
            warmup: 1_000,
            ..SimConfig::new(cross(p))
        }
    }

    #[test]
    fn perfect_channels_give_two_per_round() {
        let st = run(&cfg(1.0)).unwrap();
        assert_eq!(st.throughput_per_round, 2.0);
        assert_eq!(st.wasteful, 0);
        assert_eq!(st.delivered, vec![19_000, 19_000]);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(0.8);
        c.w = 0;
        assert_eq!(c.validate(), Err(SimError::ZeroWindow));
        let mut c = cfg(0.8);
        c.warmup = c.rounds;
        assert!(matches!(c.validate(), Err(SimError::WarmupTooLong { .. })));
        let mut c = cfg(0.8);
        c.coupling = Coupling::Coupled;
        c.mode = AckMode::Realistic;
        assert_eq!(c.validate(), Err(SimError::CoupledUnsupported));
        c.mode = AckMode::Idealized;
        c.w = 4;
        assert_eq!(c.validate(), Err(SimError::CoupledUnsupported));
        let mut c = cfg(0.8);
        c.n = 0;
        assert_eq!(c.validate(), Err(SimError::ZeroFrequency));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut c = cfg(0.7);
        c.mode = AckMode::Realistic;
        c.w = 16;
        c.n = 2;
        assert_eq!(run(&c).unwrap(), run(&c).unwrap());
        let mut other = c.clone();
        other.seed = 2;
        assert_ne!(run(&c).unwrap().delivered, run(&other).unwrap().delivered);
    }

    #[test]
    fn realistic_perfect_channel_pays_only_airtime() {
        let mut c = cfg(1.0);
        c.mode = AckMode::Realistic;
        c.w = 8;
        c.n = 4;
        let st = run(&c).unwrap();
        assert_eq!(st.ack_lost, 0);
        assert_eq!(st.wasteful, 0);
        assert!(st.throughput_per_round < 2.0);
        assert!(st.throughput_per_round > 1.9);
    }

    #[test]
    fn csv_row_matches_header_width() {
        let c = cfg(0.9);
        let st = run(&c).unwrap();
        let cols = SimStats::CSV_HEADER.split(',').count();
        assert_eq!(st.csv_row(&c).split(',').count(), cols);
    }

    #[test]
    fn degradation_and_overhead() {
        assert!((degradation(1.11, 1.14) - 0.0263).abs() < 1e-3);
        assert!((overhead_metric(1.11, 1.14) - 0.027).abs() < 1e-3);
        assert!((degradation(1.67, 1.73) - 0.0347).abs() < 1e-3);
        assert!((overhead_metric(1.67, 1.73) - 0.0359).abs() < 1e-3);
        assert_eq!(degradation(1.3, 1.3), 0.0);
        assert_eq!(overhead_metric(1.3, 1.3), 0.0);
    }
}
