//! ARQ for physical-layer network coding (PNC) building blocks.
//!
//! A PNC *atom* is a small relay topology plus a per-slot transmission
//! pattern that is repeated once per *round*. This crate provides:
//!
//! - [`atom`] / [`pattern`]: declarative atoms (cross and star built in, others
//!   loadable from pattern files) and their validation.
//! - [`channel`]: replay-stable Bernoulli erasure sampling per link and round.
//! - [`arq`]: Selective Repeat windows, SACK frames, ACK counters and flow
//!   coupling.
//! - [`tracking`]: destination-side O-pool / C-pool storage and XOR extraction.
//! - [`sim`]: the round-driven simulator producing throughput and overhead
//!   statistics.
//! - [`markov`]: exact idealized throughputs from absorbing Markov chains.
//! - [`optimize`]: feedback-budget driven search over window size and ACK
//!   frequency.
//! - [`reference`]: published reference values used for table comparison.

pub mod arq;
pub mod atom;
pub mod channel;
pub mod markov;
pub mod optimize;
pub mod pattern;
pub mod reference;
pub mod seqset;
pub mod sim;
pub mod tracking;

pub use arq::{AckCounter, ArqError, SackFrame, WindowState};
pub use atom::{
    builtin_cross_atom, builtin_star_atom, validate_atom, AtomError, AtomSpec, CrossLsp, FlowIdx,
    LinkIdx, LinkKind, NodeIdx, Violation,
};
pub use channel::{ChannelSampler, RoundChannelOutcome};
pub use markov::{hop_by_hop, th1, th2, th3, th3_heterogeneous, AbsorbingChain, MarkovError};
pub use optimize::{OptimizeError, OptimizeResult, OverheadBudget};
pub use pattern::{load_pattern, serialize_pattern, PatternError};
pub use seqset::SeqSet;
pub use sim::{degradation, overhead_metric, AckMode, Coupling, SimConfig, SimError, SimStats, Tracking};
pub use tracking::{Extraction, NativeId, PoolSet, TrackingMode, Via, XorItem};
