//! Declarative PNC atoms: nodes, lossy links, unicast flows and the
//! transmission pattern executed once per round.

use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

use crate::tracking::{PoolSet, TrackingMode, Via, XorItem};

pub type NodeIdx = usize;
pub type LinkIdx = usize;
pub type FlowIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Source,
    Relay,
    Destination,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Source => "source",
            NodeRole::Relay => "relay",
            NodeRole::Destination => "destination",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(NodeRole::Source),
            "relay" => Some(NodeRole::Relay),
            "destination" => Some(NodeRole::Destination),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    /// Sources to relay; the relay decodes the XOR of everything on the link.
    RelayDecode,
    /// Relay broadcast to a destination.
    Downlink,
    /// A non-intended receiver picking up a source transmission.
    Overhear,
    /// Destination to relay ACK path. Derived, never scheduled in a pattern.
    AckUplink,
    /// Relay to source ACK path. Derived, never scheduled in a pattern.
    AckBroadcast,
}

impl LinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::RelayDecode => "relay-decode",
            LinkKind::Downlink => "downlink",
            LinkKind::Overhear => "overhear",
            LinkKind::AckUplink => "ack-uplink",
            LinkKind::AckBroadcast => "ack-broadcast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relay-decode" => Some(LinkKind::RelayDecode),
            "downlink" => Some(LinkKind::Downlink),
            "overhear" => Some(LinkKind::Overhear),
            "ack-uplink" => Some(LinkKind::AckUplink),
            "ack-broadcast" => Some(LinkKind::AckBroadcast),
            _ => None,
        }
    }
}

/// A lossy link. `from` holds several nodes for superposed transmissions
/// (PNC uplink, or overhearing a two-source superposition).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub id: String,
    pub kind: LinkKind,
    pub from: Vec<NodeIdx>,
    pub to: NodeIdx,
    /// Link success probability, in (0, 1].
    pub lsp: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSpec {
    pub id: String,
    pub source: NodeIdx,
    pub destination: NodeIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxItem {
    /// Current packet of the given flow (transmitted by that flow's source).
    Native(FlowIdx),
    /// Whatever the relay decoded earlier in the round.
    RelayBuffer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub node: NodeIdx,
    pub item: TxItem,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemRule {
    /// XOR of the current packets of these flows (sorted, distinct).
    Xor(Vec<FlowIdx>),
    /// The relay's decoded buffer.
    RelayBuffer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reception {
    pub receiver: NodeIdx,
    pub link: LinkIdx,
    pub rule: ItemRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Slot {
    pub transmissions: Vec<Transmission>,
    pub receptions: Vec<Reception>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransmissionPattern {
    pub slots: Vec<Slot>,
}

/// Topology plus per-slot schedule of one PNC building block.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpec {
    pub name: String,
    pub nodes: Vec<Node>,
    pub links: Vec<LinkSpec>,
    pub flows: Vec<FlowSpec>,
    pub pattern: TransmissionPattern,
}

/// An item handed to a destination node while executing the pattern: the XOR
/// of the current packets of `flows`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternDelivery {
    pub slot: usize,
    pub node: NodeIdx,
    pub link: LinkIdx,
    pub via: Via,
    pub flows: SmallVec<[FlowIdx; 4]>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AtomError {
    #[error("link success probability {value} out of (0,1]")]
    ProbabilityOutOfRange { value: f64 },
    #[error("atom has no relay node")]
    NoRelay,
    #[error("no {kind} link serving node {node}")]
    MissingLink { kind: &'static str, node: String },
    #[error("atom failed validation: {}", display_list(.0))]
    Invalid(Vec<Violation>),
}

fn display_list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One broken atom invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LspOutOfRange { link: String, lsp: f64 },
    BadIndex { what: &'static str, index: usize },
    RelayCount(usize),
    SourceIsDestination { flow: String },
    DestinationReachable { flow: String },
    DuplicateDestination { node: String },
    RelayTxAndRx { slot: usize },
    DecodeLinkCount { slot: usize, count: usize },
    RuleMismatch { slot: usize, link: String },
    RelayBufferEmpty { slot: usize },
    AckLinkScheduled { slot: usize, link: String },
    NotInRelayBroadcast { flow: String },
    MissingAckPath { node: String },
    NotDecodable { flow: String, source: String, destination: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LspOutOfRange { link, lsp } => {
                write!(f, "link {link}: lsp {lsp} out of (0,1]")
            }
            Violation::BadIndex { what, index } => write!(f, "{what} index {index} out of range"),
            Violation::RelayCount(n) => write!(f, "expected exactly one relay, found {n}"),
            Violation::SourceIsDestination { flow } => {
                write!(f, "flow {flow}: source equals destination")
            }
            Violation::DestinationReachable { flow } => {
                write!(f, "flow {flow}: destination directly reachable from source")
            }
            Violation::DuplicateDestination { node } => {
                write!(f, "node {node} is the destination of more than one flow")
            }
            Violation::RelayTxAndRx { slot } => {
                write!(f, "slot {slot}: relay transmits and receives in the same slot")
            }
            Violation::DecodeLinkCount { slot, count } => write!(
                f,
                "slot {slot}: multiple sources transmit but {count} relay-decode links are scheduled"
            ),
            Violation::RuleMismatch { slot, link } => write!(
                f,
                "slot {slot}: item rule on link {link} does not match what its transmitters send"
            ),
            Violation::RelayBufferEmpty { slot } => {
                write!(f, "slot {slot}: relay broadcasts before decoding anything")
            }
            Violation::AckLinkScheduled { slot, link } => {
                write!(f, "slot {slot}: ack link {link} cannot carry data")
            }
            Violation::NotInRelayBroadcast { flow } => {
                write!(f, "flow {flow} is never embedded in a relay broadcast")
            }
            Violation::MissingAckPath { node } => {
                write!(f, "node {node} has no link to derive its ACK path from")
            }
            Violation::NotDecodable {
                flow,
                source,
                destination,
            } => write!(
                f,
                "flow {flow} {source}->{destination} not decodable under perfect channels"
            ),
        }
    }
}

/// Link success probabilities of the cross atom.
///
/// Roles: `relay_decode` is the PNC uplink (A,B -> R), `downlink_c` /
/// `downlink_d` are R -> C and R -> D, `overhear_c` is B -> C and
/// `overhear_d` is A -> D. Without tracking the atom delivers
/// `relay_decode * (downlink_c * overhear_c + downlink_d * overhear_d)`
/// packets per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossLsp {
    pub relay_decode: f64,
    pub downlink_c: f64,
    pub downlink_d: f64,
    pub overhear_c: f64,
    pub overhear_d: f64,
}

impl CrossLsp {
    /// All direct links (uplink decode, downlinks) at `direct`, both overhear
    /// links at `overhear`.
    pub fn homogeneous(direct: f64, overhear: f64) -> Self {
        Self {
            relay_decode: direct,
            downlink_c: direct,
            downlink_d: direct,
            overhear_c: overhear,
            overhear_d: overhear,
        }
    }

    /// Five link probabilities in the order relay-decode, R->C, R->D, B->C, A->D.
    pub fn from_array(p: [f64; 5]) -> Self {
        Self {
            relay_decode: p[0],
            downlink_c: p[1],
            downlink_d: p[2],
            overhear_c: p[3],
            overhear_d: p[4],
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.relay_decode,
            self.downlink_c,
            self.downlink_d,
            self.overhear_c,
            self.overhear_d,
        ]
    }
}

pub(crate) fn check_probability(p: f64) -> Result<(), AtomError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(AtomError::ProbabilityOutOfRange { value: p })
    }
}

fn node(name: &str, role: NodeRole) -> Node {
    Node {
        name: name.to_string(),
        role,
    }
}

fn link(id: &str, kind: LinkKind, from: &[NodeIdx], to: NodeIdx, lsp: f64) -> LinkSpec {
    LinkSpec {
        id: id.to_string(),
        kind,
        from: from.to_vec(),
        to,
        lsp,
    }
}

fn flow(id: &str, source: NodeIdx, destination: NodeIdx) -> FlowSpec {
    FlowSpec {
        id: id.to_string(),
        source,
        destination,
    }
}

fn rx(receiver: NodeIdx, link: LinkIdx, flows: &[FlowIdx]) -> Reception {
    Reception {
        receiver,
        link,
        rule: ItemRule::Xor(flows.to_vec()),
    }
}

fn rx_relay(receiver: NodeIdx, link: LinkIdx) -> Reception {
    Reception {
        receiver,
        link,
        rule: ItemRule::RelayBuffer,
    }
}

fn tx(node: NodeIdx, flow: FlowIdx) -> Transmission {
    Transmission {
        node,
        item: TxItem::Native(flow),
    }
}

/// The cross atom: flows A -> C and B -> D through relay R, with C
/// overhearing B and D overhearing A. Two slots per round.
pub fn builtin_cross_atom(lsp: CrossLsp) -> Result<AtomSpec, AtomError> {
    for p in lsp.as_array() {
        check_probability(p)?;
    }
    const A: NodeIdx = 0;
    const B: NodeIdx = 1;
    const R: NodeIdx = 2;
    const C: NodeIdx = 3;
    const D: NodeIdx = 4;
    let nodes = vec![
        node("A", NodeRole::Source),
        node("B", NodeRole::Source),
        node("R", NodeRole::Relay),
        node("C", NodeRole::Destination),
        node("D", NodeRole::Destination),
    ];
    let links = vec![
        link("uplink", LinkKind::RelayDecode, &[A, B], R, lsp.relay_decode),
        link("r-c", LinkKind::Downlink, &[R], C, lsp.downlink_c),
        link("r-d", LinkKind::Downlink, &[R], D, lsp.downlink_d),
        link("b-c", LinkKind::Overhear, &[B], C, lsp.overhear_c),
        link("a-d", LinkKind::Overhear, &[A], D, lsp.overhear_d),
    ];
    let flows = vec![flow("ac", A, C), flow("bd", B, D)];
    let pattern = TransmissionPattern {
        slots: vec![
            Slot {
                transmissions: vec![tx(A, 0), tx(B, 1)],
                receptions: vec![rx(R, 0, &[0, 1]), rx(C, 3, &[1]), rx(D, 4, &[0])],
            },
            Slot {
                transmissions: vec![Transmission {
                    node: R,
                    item: TxItem::RelayBuffer,
                }],
                receptions: vec![rx_relay(C, 1), rx_relay(D, 2)],
            },
        ],
    };
    Ok(AtomSpec {
        name: "cross".to_string(),
        nodes,
        links,
        flows,
        pattern,
    })
}

/// The star atom with every link at probability `p`.
///
/// Flows S1 -> T1, S2 -> T2, S3 -> T3. Slot 1: S1 sends X to the relay while
/// T2 and T3 overhear it. Slot 2: S2 and S3 send Y and Z together; the relay
/// decodes Y^Z, T1 overhears the superposition as Y^Z, T2 overhears Z and T3
/// overhears Y. Slot 3: the relay broadcasts X^Y^Z.
pub fn builtin_star_atom(p: f64) -> Result<AtomSpec, AtomError> {
    check_probability(p)?;
    const S1: NodeIdx = 0;
    const S2: NodeIdx = 1;
    const S3: NodeIdx = 2;
    const R: NodeIdx = 3;
    const T1: NodeIdx = 4;
    const T2: NodeIdx = 5;
    const T3: NodeIdx = 6;
    let nodes = vec![
        node("S1", NodeRole::Source),
        node("S2", NodeRole::Source),
        node("S3", NodeRole::Source),
        node("R", NodeRole::Relay),
        node("T1", NodeRole::Destination),
        node("T2", NodeRole::Destination),
        node("T3", NodeRole::Destination),
    ];
    let links = vec![
        link("up1", LinkKind::RelayDecode, &[S1], R, p),
        link("up23", LinkKind::RelayDecode, &[S2, S3], R, p),
        link("s1-t2", LinkKind::Overhear, &[S1], T2, p),
        link("s1-t3", LinkKind::Overhear, &[S1], T3, p),
        link("s23-t1", LinkKind::Overhear, &[S2, S3], T1, p),
        link("s3-t2", LinkKind::Overhear, &[S3], T2, p),
        link("s2-t3", LinkKind::Overhear, &[S2], T3, p),
        link("r-t1", LinkKind::Downlink, &[R], T1, p),
        link("r-t2", LinkKind::Downlink, &[R], T2, p),
        link("r-t3", LinkKind::Downlink, &[R], T3, p),
    ];
    let flows = vec![flow("f1", S1, T1), flow("f2", S2, T2), flow("f3", S3, T3)];
    let pattern = TransmissionPattern {
        slots: vec![
            Slot {
                transmissions: vec![tx(S1, 0)],
                receptions: vec![rx(R, 0, &[0]), rx(T2, 2, &[0]), rx(T3, 3, &[0])],
            },
            Slot {
                transmissions: vec![tx(S2, 1), tx(S3, 2)],
                receptions: vec![
                    rx(R, 1, &[1, 2]),
                    rx(T1, 4, &[1, 2]),
                    rx(T2, 5, &[2]),
                    rx(T3, 6, &[1]),
                ],
            },
            Slot {
                transmissions: vec![Transmission {
                    node: R,
                    item: TxItem::RelayBuffer,
                }],
                receptions: vec![rx_relay(T1, 7), rx_relay(T2, 8), rx_relay(T3, 9)],
            },
        ],
    };
    Ok(AtomSpec {
        name: "star".to_string(),
        nodes,
        links,
        flows,
        pattern,
    })
}

/// Link success probabilities of the derived reverse (ACK) paths of a flow.
/// Reverse links mirror the forward links serving the same node pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckPaths {
    /// Destination -> relay, mirrors the relay -> destination downlink.
    pub uplink: f64,
    /// Relay -> source, mirrors the source's relay-decode uplink.
    pub broadcast: f64,
    /// Relay -> destination when the destination overhears the combined ACK.
    pub overhear: f64,
}

impl AtomSpec {
    pub fn slots_per_round(&self) -> usize {
        self.pattern.slots.len()
    }

    pub fn relay(&self) -> Option<NodeIdx> {
        self.nodes.iter().position(|n| n.role == NodeRole::Relay)
    }

    pub fn node_index(&self, name: &str) -> Option<NodeIdx> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn link_index(&self, id: &str) -> Option<LinkIdx> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn flow_index(&self, id: &str) -> Option<FlowIdx> {
        self.flows.iter().position(|f| f.id == id)
    }

    /// The flow whose destination is `node`.
    pub fn flow_to(&self, node: NodeIdx) -> Option<FlowIdx> {
        self.flows.iter().position(|f| f.destination == node)
    }

    /// Number of stochastic data-link events sampled per round.
    pub fn link_events_per_round(&self) -> usize {
        self.links
            .iter()
            .filter(|l| !matches!(l.kind, LinkKind::AckUplink | LinkKind::AckBroadcast))
            .count()
    }

    /// Copy of this atom with every link at probability `p`.
    pub fn with_uniform_lsp(&self, p: f64) -> Result<AtomSpec, AtomError> {
        check_probability(p)?;
        let mut out = self.clone();
        for l in &mut out.links {
            l.lsp = p;
        }
        Ok(out)
    }

    /// Reverse ACK paths of `flow`, derived from its forward links.
    pub fn ack_paths(&self, flow: FlowIdx) -> Result<AckPaths, AtomError> {
        let f = &self.flows[flow];
        let relay = self.relay().ok_or(AtomError::NoRelay)?;
        let down = self
            .links
            .iter()
            .find(|l| l.kind == LinkKind::Downlink && l.to == f.destination && l.from == [relay])
            .ok_or_else(|| AtomError::MissingLink {
                kind: "downlink",
                node: self.nodes[f.destination].name.clone(),
            })?;
        let up = self
            .links
            .iter()
            .find(|l| l.kind == LinkKind::RelayDecode && l.from.contains(&f.source))
            .ok_or_else(|| AtomError::MissingLink {
                kind: "relay-decode",
                node: self.nodes[f.source].name.clone(),
            })?;
        Ok(AckPaths {
            uplink: down.lsp,
            broadcast: up.lsp,
            overhear: down.lsp,
        })
    }

    /// Runs the pattern once. `link_ok` decides each link event; every item
    /// reaching a destination node is passed to `sink` in slot order.
    ///
    /// The relay forwards the XOR of everything it decoded during the round,
    /// and forwards nothing if any of its decode receptions failed.
    pub fn execute_pattern(
        &self,
        mut link_ok: impl FnMut(LinkIdx) -> bool,
        mut sink: impl FnMut(PatternDelivery),
    ) {
        let relay = self.relay();
        let mut buffer: SmallVec<[FlowIdx; 4]> = SmallVec::new();
        let mut buffer_ok = true;
        let mut buffer_filled = false;
        for (slot_idx, slot) in self.pattern.slots.iter().enumerate() {
            for r in &slot.receptions {
                let ok = link_ok(r.link);
                if Some(r.receiver) == relay {
                    buffer_filled = true;
                    if !ok {
                        buffer_ok = false;
                    } else if let ItemRule::Xor(fs) = &r.rule {
                        for &f in fs {
                            match buffer.iter().position(|&x| x == f) {
                                Some(i) => {
                                    buffer.remove(i);
                                }
                                None => buffer.push(f),
                            }
                        }
                    }
                    continue;
                }
                if !ok {
                    continue;
                }
                let flows: SmallVec<[FlowIdx; 4]> = match &r.rule {
                    ItemRule::Xor(fs) => fs.iter().copied().collect(),
                    ItemRule::RelayBuffer => {
                        if !(buffer_ok && buffer_filled) || buffer.is_empty() {
                            continue;
                        }
                        let mut b = buffer.clone();
                        b.sort_unstable();
                        b
                    }
                };
                let via = match self.links[r.link].kind {
                    LinkKind::Downlink => Via::RelayDownlink,
                    _ => Via::Overhear,
                };
                sink(PatternDelivery {
                    slot: slot_idx,
                    node: r.receiver,
                    link: r.link,
                    via,
                    flows,
                });
            }
        }
    }
}

/// Checks every structural invariant of `spec`, including decodability of
/// every flow when all links succeed. Returns all violations found.
pub fn validate_atom(spec: &AtomSpec) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let n_nodes = spec.nodes.len();
    let n_links = spec.links.len();
    let n_flows = spec.flows.len();

    let relays: Vec<NodeIdx> = spec
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.role == NodeRole::Relay)
        .map(|(i, _)| i)
        .collect();
    if relays.len() != 1 {
        v.push(Violation::RelayCount(relays.len()));
    }
    let relay = relays.first().copied();

    for l in &spec.links {
        if !(l.lsp > 0.0 && l.lsp <= 1.0) {
            v.push(Violation::LspOutOfRange {
                link: l.id.clone(),
                lsp: l.lsp,
            });
        }
        for &n in l.from.iter().chain(std::iter::once(&l.to)) {
            if n >= n_nodes {
                v.push(Violation::BadIndex {
                    what: "node",
                    index: n,
                });
            }
        }
    }
    for f in &spec.flows {
        if f.source >= n_nodes || f.destination >= n_nodes {
            v.push(Violation::BadIndex {
                what: "node",
                index: f.source.max(f.destination),
            });
            continue;
        }
        if f.source == f.destination {
            v.push(Violation::SourceIsDestination { flow: f.id.clone() });
        }
        if spec
            .links
            .iter()
            .any(|l| l.from.contains(&f.source) && l.to == f.destination)
        {
            v.push(Violation::DestinationReachable { flow: f.id.clone() });
        }
    }
    for (i, f) in spec.flows.iter().enumerate() {
        if spec.flows[..i].iter().any(|g| g.destination == f.destination) {
            v.push(Violation::DuplicateDestination {
                node: spec.nodes.get(f.destination).map_or_else(String::new, |n| n.name.clone()),
            });
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    let mut relay_has_buffer = false;
    let mut in_broadcast = vec![false; n_flows];
    for (si, slot) in spec.pattern.slots.iter().enumerate() {
        let slot_no = si + 1;
        let mut sent: Vec<(NodeIdx, &TxItem)> = Vec::new();
        for t in &slot.transmissions {
            if t.node >= n_nodes {
                v.push(Violation::BadIndex {
                    what: "node",
                    index: t.node,
                });
                continue;
            }
            if let TxItem::Native(f) = t.item {
                if f >= n_flows {
                    v.push(Violation::BadIndex {
                        what: "flow",
                        index: f,
                    });
                    continue;
                }
            }
            sent.push((t.node, &t.item));
        }
        let relay_tx = relay.is_some_and(|r| sent.iter().any(|(n, _)| *n == r));
        let relay_rx = relay.is_some_and(|r| slot.receptions.iter().any(|x| x.receiver == r));
        if relay_tx && relay_rx {
            v.push(Violation::RelayTxAndRx { slot: slot_no });
        }
        if relay_tx && !relay_has_buffer {
            v.push(Violation::RelayBufferEmpty { slot: slot_no });
        }
        let native_senders = sent
            .iter()
            .filter(|(_, it)| matches!(it, TxItem::Native(_)))
            .count();
        if native_senders > 1 {
            let decodes = slot
                .receptions
                .iter()
                .filter(|r| r.link < n_links && spec.links[r.link].kind == LinkKind::RelayDecode)
                .count();
            if decodes != 1 {
                v.push(Violation::DecodeLinkCount {
                    slot: slot_no,
                    count: decodes,
                });
            }
        }
        for r in &slot.receptions {
            if r.link >= n_links || r.receiver >= n_nodes {
                v.push(Violation::BadIndex {
                    what: "link",
                    index: r.link,
                });
                continue;
            }
            let l = &spec.links[r.link];
            if matches!(l.kind, LinkKind::AckUplink | LinkKind::AckBroadcast) {
                v.push(Violation::AckLinkScheduled {
                    slot: slot_no,
                    link: l.id.clone(),
                });
                continue;
            }
            let mut expect: Vec<FlowIdx> = Vec::new();
            let mut expect_buffer = false;
            for (n, it) in &sent {
                if l.from.contains(n) {
                    match it {
                        TxItem::Native(f) => expect.push(*f),
                        TxItem::RelayBuffer => expect_buffer = true,
                    }
                }
            }
            expect.sort_unstable();
            let senders_present = l.from.iter().all(|n| sent.iter().any(|(s, _)| s == n));
            let matches = senders_present
                && l.to == r.receiver
                && match &r.rule {
                    ItemRule::Xor(fs) => !expect_buffer && *fs == expect,
                    ItemRule::RelayBuffer => expect_buffer && expect.is_empty(),
                };
            if !matches {
                v.push(Violation::RuleMismatch {
                    slot: slot_no,
                    link: l.id.clone(),
                });
            }
            if Some(r.receiver) == relay {
                relay_has_buffer = true;
                if let ItemRule::Xor(fs) = &r.rule {
                    for &f in fs {
                        if f < n_flows {
                            in_broadcast[f] = true;
                        }
                    }
                }
            }
        }
    }
    let relay_broadcasts = spec
        .pattern
        .slots
        .iter()
        .any(|s| s.transmissions.iter().any(|t| t.item == TxItem::RelayBuffer));
    for (i, f) in spec.flows.iter().enumerate() {
        if !(in_broadcast[i] && relay_broadcasts) {
            v.push(Violation::NotInRelayBroadcast { flow: f.id.clone() });
        }
    }
    for i in 0..n_flows {
        if let Err(AtomError::MissingLink { node, .. }) = spec.ack_paths(i) {
            v.push(Violation::MissingAckPath { node });
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    // Perfect-channel decodability, using the same extraction code as the
    // simulator.
    let mut pools: Vec<PoolSet> = (0..n_flows)
        .map(|f| PoolSet::new(f, TrackingMode::Single))
        .collect();
    spec.execute_pattern(
        |_| true,
        |d| {
            if let Some(f) = spec.flow_to(d.node) {
                let item = XorItem::from_flows(&d.flows, |_| 0);
                pools[f].on_receive(item, d.via);
            }
        },
    );
    for (i, f) in spec.flows.iter().enumerate() {
        if !pools[i].is_delivered(0) {
            v.push(Violation::NotDecodable {
                flow: f.id.clone(),
                source: spec.nodes[f.source].name.clone(),
                destination: spec.nodes[f.destination].name.clone(),
            });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_atom_structure() {
        let a = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        assert_eq!(a.slots_per_round(), 2);
        assert_eq!(a.flows.len(), 2);
        assert_eq!(a.link_events_per_round(), 5);
        assert_eq!(validate_atom(&a), Ok(()));
    }

    #[test]
    fn star_atom_validates() {
        let a = builtin_star_atom(0.9).unwrap();
        assert_eq!(a.slots_per_round(), 3);
        assert_eq!(a.flows.len(), 3);
        assert_eq!(validate_atom(&a), Ok(()));
    }

    #[test]
    fn builtins_reject_bad_probabilities() {
        assert!(builtin_cross_atom(CrossLsp::homogeneous(0.0, 0.5)).is_err());
        assert!(builtin_cross_atom(CrossLsp::from_array([0.9, 0.8, 1.2, 0.7, 0.7])).is_err());
        assert!(builtin_star_atom(-0.1).is_err());
        assert!(builtin_star_atom(f64::NAN).is_err());
    }

    #[test]
    fn removing_the_broadcast_breaks_decodability() {
        let mut a = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        a.pattern.slots[1].receptions.clear();
        let errs = validate_atom(&a).unwrap_err();
        let text: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        assert!(
            text.contains(&"flow ac A->C not decodable under perfect channels".to_string()),
            "{text:?}"
        );
    }

    #[test]
    fn zero_lsp_is_reported() {
        let mut a = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        a.links[3].lsp = 0.0;
        let errs = validate_atom(&a).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.to_string().contains("lsp 0 out of (0,1]")));
    }

    #[test]
    fn relay_cannot_send_and_receive_together() {
        let mut a = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        let relay_rx = a.pattern.slots[0].receptions[0].clone();
        a.pattern.slots[1].receptions.push(relay_rx);
        let errs = validate_atom(&a).unwrap_err();
        assert!(errs.contains(&Violation::RelayTxAndRx { slot: 2 }));
    }

    #[test]
    fn cross_pattern_deliveries_under_perfect_channels() {
        let a = builtin_cross_atom(CrossLsp::homogeneous(1.0, 1.0)).unwrap();
        let mut got = Vec::new();
        a.execute_pattern(|_| true, |d| got.push((d.node, d.via, d.flows.to_vec())));
        assert_eq!(
            got,
            vec![
                (3, Via::Overhear, vec![1]),
                (4, Via::Overhear, vec![0]),
                (3, Via::RelayDownlink, vec![0, 1]),
                (4, Via::RelayDownlink, vec![0, 1]),
            ]
        );
    }

    #[test]
    fn failed_decode_silences_the_broadcast() {
        let a = builtin_cross_atom(CrossLsp::homogeneous(0.5, 0.5)).unwrap();
        let mut got = Vec::new();
        a.execute_pattern(|l| l != 0, |d| got.push(d.via));
        assert_eq!(got, vec![Via::Overhear, Via::Overhear]);
    }

    #[test]
    fn ack_paths_mirror_forward_links() {
        let a = builtin_cross_atom(CrossLsp::from_array([0.9, 0.8, 0.7, 0.6, 0.5])).unwrap();
        let p0 = a.ack_paths(0).unwrap();
        assert_eq!((p0.uplink, p0.broadcast, p0.overhear), (0.8, 0.9, 0.8));
        let p1 = a.ack_paths(1).unwrap();
        assert_eq!(p1.uplink, 0.7);
    }
}
