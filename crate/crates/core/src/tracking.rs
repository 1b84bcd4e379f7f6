//! Destination-side stored-packet tracking.
//!
//! A destination keeps overheard items in its O-pool and relay items that
//! embed one of its desired packets in its C-pool. Every new item is matched
//! against the complementary pool; a match that leaves exactly one desired
//! native packet is an extraction. Stored items are dropped once they can no
//! longer help: C-pool items when their desired packet is extracted, O-pool
//! items when all their packets are known delivered to their own
//! destinations.

use std::collections::{HashMap, HashSet, VecDeque};
use std::ops::BitXor;

use smallvec::SmallVec;

use crate::atom::FlowIdx;
use crate::seqset::SeqSet;

/// Identity of one native packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NativeId {
    pub flow: FlowIdx,
    pub seq: u64,
}

impl NativeId {
    pub fn new(flow: FlowIdx, seq: u64) -> Self {
        Self { flow, seq }
    }
}

/// XOR of a set of native packets, kept as the sorted set of their ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct XorItem {
    ids: SmallVec<[NativeId; 4]>,
}

impl XorItem {
    pub fn native(id: NativeId) -> Self {
        let mut ids = SmallVec::new();
        ids.push(id);
        Self { ids }
    }

    /// XOR of all `ids`; repeated ids cancel.
    pub fn from_ids(ids: impl IntoIterator<Item = NativeId>) -> Self {
        ids.into_iter()
            .fold(XorItem::default(), |acc, id| &acc ^ &XorItem::native(id))
    }

    /// XOR of the current packets of `flows`, where `seq_of` gives each flow's
    /// current sequence number.
    pub fn from_flows(flows: &[FlowIdx], seq_of: impl Fn(FlowIdx) -> u64) -> Self {
        Self::from_ids(flows.iter().map(|&f| NativeId::new(f, seq_of(f))))
    }

    pub fn ids(&self) -> &[NativeId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: NativeId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn as_native(&self) -> Option<NativeId> {
        match self.ids.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    /// The unique id of `flow` in this item, if exactly one is present.
    pub fn id_of_flow(&self, flow: FlowIdx) -> Option<NativeId> {
        let mut it = self.ids.iter().filter(|id| id.flow == flow);
        match (it.next(), it.next()) {
            (Some(id), None) => Some(*id),
            _ => None,
        }
    }

    pub fn touches_flow(&self, flow: FlowIdx) -> bool {
        self.ids.iter().any(|id| id.flow == flow)
    }
}

impl BitXor for &XorItem {
    type Output = XorItem;

    /// Symmetric difference of the id sets.
    fn bitxor(self, rhs: &XorItem) -> XorItem {
        let (a, b) = (&self.ids, &rhs.ids);
        let mut out = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        XorItem { ids: out }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Via {
    Overhear,
    RelayDownlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackingMode {
    /// Each new item is combined with at most one stored composite item plus
    /// the natives already known.
    Single,
    /// Derived packets re-enter matching until nothing more can be peeled.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pool {
    O,
    C,
}

#[derive(Debug, Clone)]
struct Stored {
    item: XorItem,
    pool: Pool,
    /// 1 for received items, higher for items derived by peeling.
    level: u32,
}

/// One extracted desired packet together with its audit trail: the XOR of
/// `chain` equals the extracted native.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub id: NativeId,
    /// 1 for extractions driven directly by the received item, higher when
    /// derived packets from earlier peeling steps were needed.
    pub iteration: u32,
    pub chain: Vec<XorItem>,
}

/// Per-destination tracking state.
#[derive(Debug, Clone)]
pub struct PoolSet {
    desired: FlowIdx,
    mode: TrackingMode,
    slots: Vec<Option<Stored>>,
    free: Vec<usize>,
    by_id: HashMap<NativeId, SmallVec<[usize; 4]>>,
    by_item: HashMap<XorItem, usize>,
    known: HashSet<NativeId>,
    delivered: SeqSet,
    peer_acked: Vec<SeqSet>,
    o_len: usize,
    c_len: usize,
}

impl PoolSet {
    pub fn new(desired: FlowIdx, mode: TrackingMode) -> Self {
        Self {
            desired,
            mode,
            slots: Vec::new(),
            free: Vec::new(),
            by_id: HashMap::new(),
            by_item: HashMap::new(),
            known: HashSet::new(),
            delivered: SeqSet::new(),
            peer_acked: Vec::new(),
            o_len: 0,
            c_len: 0,
        }
    }

    pub fn desired_flow(&self) -> FlowIdx {
        self.desired
    }

    pub fn delivered(&self) -> &SeqSet {
        &self.delivered
    }

    pub fn is_delivered(&self, seq: u64) -> bool {
        self.delivered.contains(seq)
    }

    pub fn o_pool_len(&self) -> usize {
        self.o_len
    }

    pub fn c_pool_len(&self) -> usize {
        self.c_len
    }

    pub fn o_pool(&self) -> Vec<XorItem> {
        self.pool_items(Pool::O)
    }

    pub fn c_pool(&self) -> Vec<XorItem> {
        self.pool_items(Pool::C)
    }

    fn pool_items(&self, pool: Pool) -> Vec<XorItem> {
        let mut v: Vec<XorItem> = self
            .slots
            .iter()
            .flatten()
            .filter(|s| s.pool == pool)
            .map(|s| s.item.clone())
            .collect();
        v.sort();
        v
    }

    pub fn peer_acked(&self, flow: FlowIdx) -> Option<&SeqSet> {
        self.peer_acked.get(flow)
    }

    fn is_peer_acked(&self, id: NativeId) -> bool {
        self.peer_acked
            .get(id.flow)
            .is_some_and(|s| s.contains(id.seq))
    }

    fn is_known(&self, id: NativeId) -> bool {
        if id.flow == self.desired {
            self.delivered.contains(id.seq)
        } else {
            self.known.contains(&id)
        }
    }

    /// Drops every stored item (tracking off: nothing survives the round).
    pub fn clear_pools(&mut self) {
        self.slots.clear();
        self.free.clear();
        self.by_id.clear();
        self.by_item.clear();
        self.known.clear();
        self.o_len = 0;
        self.c_len = 0;
    }

    fn insert(&mut self, item: XorItem, pool: Pool, level: u32) -> Option<usize> {
        if item.is_empty() {
            return None;
        }
        if let Some(&i) = self.by_item.get(&item) {
            if let Some(s) = self.slots[i].as_mut() {
                s.level = s.level.min(level);
            }
            return None;
        }
        let idx = match self.free.pop() {
            Some(i) => i,
            None => {
                self.slots.push(None);
                self.slots.len() - 1
            }
        };
        for id in item.ids() {
            self.by_id.entry(*id).or_default().push(idx);
        }
        if pool == Pool::O {
            if let Some(n) = item.as_native() {
                self.known.insert(n);
            }
            self.o_len += 1;
        } else {
            self.c_len += 1;
        }
        self.by_item.insert(item.clone(), idx);
        self.slots[idx] = Some(Stored { item, pool, level });
        Some(idx)
    }

    fn remove(&mut self, idx: usize) -> Option<Stored> {
        let s = self.slots.get_mut(idx)?.take()?;
        for id in s.item.ids() {
            if let Some(v) = self.by_id.get_mut(id) {
                v.retain(|&mut x| x != idx);
                if v.is_empty() {
                    self.by_id.remove(id);
                }
            }
        }
        self.by_item.remove(&s.item);
        if s.pool == Pool::O {
            if let Some(n) = s.item.as_native() {
                self.known.remove(&n);
            }
            self.o_len -= 1;
        } else {
            self.c_len -= 1;
        }
        self.free.push(idx);
        Some(s)
    }

    /// Stored slots whose item shares at least one id with `item`.
    fn touching(&self, item: &XorItem, pool: Pool) -> SmallVec<[usize; 8]> {
        let mut out: SmallVec<[usize; 8]> = SmallVec::new();
        for id in item.ids() {
            if let Some(v) = self.by_id.get(id) {
                for &i in v {
                    if !out.contains(&i) && self.slots[i].as_ref().is_some_and(|s| s.pool == pool) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    /// Strips the known natives out of `item`, appending the natives used to
    /// `chain`.
    fn reduce(&self, item: &XorItem, chain: &mut Vec<XorItem>) -> XorItem {
        let mut out = item.clone();
        for &id in item.ids() {
            if self.is_known(id) {
                let n = XorItem::native(id);
                out = &out ^ &n;
                chain.push(n);
            }
        }
        out
    }

    fn wanted(&self, r: &XorItem) -> Option<NativeId> {
        r.as_native()
            .filter(|n| n.flow == self.desired && !self.delivered.contains(n.seq))
    }

    /// Feeds one received item and returns the desired packets it unlocked.
    ///
    /// Items embedding a desired packet go to the C-pool, everything else to
    /// the O-pool. A relay item whose desired packet is already delivered is
    /// discarded.
    pub fn on_receive(&mut self, item: XorItem, via: Via) -> Vec<Extraction> {
        let _ = via;
        let mut out = Vec::new();
        if item.is_empty() {
            return out;
        }
        let pool = match item.id_of_flow(self.desired) {
            Some(d) => {
                if self.delivered.contains(d.seq) {
                    return out;
                }
                Pool::C
            }
            None => Pool::O,
        };
        let mut queue: VecDeque<(XorItem, Pool, u32)> = VecDeque::new();
        self.insert(item.clone(), pool, 1);
        queue.push_back((item, pool, 1));
        while let Some((trigger, pool, level)) = queue.pop_front() {
            match pool {
                Pool::C => self.match_coded(&trigger, level, &mut out, &mut queue),
                Pool::O => self.match_overheard(&trigger, level, &mut out, &mut queue),
            }
        }
        out
    }

    fn match_coded(
        &mut self,
        coded: &XorItem,
        level: u32,
        out: &mut Vec<Extraction>,
        queue: &mut VecDeque<(XorItem, Pool, u32)>,
    ) {
        let mut chain = vec![coded.clone()];
        let r = self.reduce(coded, &mut chain);
        if let Some(d) = self.wanted(&r) {
            self.extract(d, level, chain, out, queue);
            return;
        }
        for idx in self.touching(&r, Pool::O) {
            let Some(s) = self.slots[idx].as_ref() else {
                continue;
            };
            if s.item.len() < 2 {
                continue;
            }
            let mut c2 = chain.clone();
            c2.push(s.item.clone());
            let rs = self.reduce(&s.item, &mut c2);
            if let Some(d) = self.wanted(&(&r ^ &rs)) {
                self.extract(d, level, c2, out, queue);
                return;
            }
        }
    }

    fn match_overheard(
        &mut self,
        overheard: &XorItem,
        level: u32,
        out: &mut Vec<Extraction>,
        queue: &mut VecDeque<(XorItem, Pool, u32)>,
    ) {
        let composite = overheard.len() > 1;
        for idx in self.touching(overheard, Pool::C) {
            let Some(s) = self.slots[idx].as_ref() else {
                continue;
            };
            let coded = s.item.clone();
            let mut chain = vec![coded.clone()];
            let r = self.reduce(&coded, &mut chain);
            if let Some(d) = self.wanted(&r) {
                self.extract(d, level, chain, out, queue);
                continue;
            }
            if composite {
                let mut c2 = chain.clone();
                c2.push(overheard.clone());
                let ro = self.reduce(overheard, &mut c2);
                if let Some(d) = self.wanted(&(&r ^ &ro)) {
                    self.extract(d, level, c2, out, queue);
                }
            }
        }
        if self.mode == TrackingMode::Multi {
            if let Some(n) = overheard.as_native() {
                self.peel_overheard(n, level, queue);
            }
        }
    }

    /// Multi-iteration only: composite O-pool items that reduce to a single
    /// unknown native once `n` is known yield that native.
    fn peel_overheard(&mut self, n: NativeId, level: u32, queue: &mut VecDeque<(XorItem, Pool, u32)>) {
        let probe = XorItem::native(n);
        for idx in self.touching(&probe, Pool::O) {
            let Some(s) = self.slots[idx].as_ref() else {
                continue;
            };
            if s.item.len() < 2 {
                continue;
            }
            let item = s.item.clone();
            let r = self.reduce(&item, &mut Vec::new());
            if let Some(m) = r.as_native() {
                if !self.is_known(m) && self.insert(r.clone(), Pool::O, level + 1).is_some() {
                    queue.push_back((r, Pool::O, level + 1));
                }
            }
        }
    }

    fn extract(
        &mut self,
        d: NativeId,
        level: u32,
        chain: Vec<XorItem>,
        out: &mut Vec<Extraction>,
        queue: &mut VecDeque<(XorItem, Pool, u32)>,
    ) {
        if !self.delivered.insert(d.seq) {
            return;
        }
        // A stored item learned by peeling in an earlier round still makes
        // this a multi-iteration extraction.
        let iteration = chain
            .iter()
            .filter_map(|it| self.by_item.get(it))
            .filter_map(|&i| self.slots[i].as_ref())
            .map(|s| s.level)
            .fold(level, u32::max);
        out.push(Extraction { id: d, iteration, chain });
        // Every C-pool item embedding d is now useless for extraction.
        let probe = XorItem::native(d);
        for idx in self.touching(&probe, Pool::C) {
            let Some(s) = self.remove(idx) else { continue };
            if self.mode != TrackingMode::Multi {
                continue;
            }
            let rest = self.reduce(&s.item, &mut Vec::new());
            if rest.is_empty() {
                continue;
            }
            if let Some(m) = rest.as_native() {
                if self.is_known(m) {
                    continue;
                }
            }
            if self.insert(rest.clone(), Pool::O, level + 1).is_some() {
                queue.push_back((rest, Pool::O, level + 1));
            }
        }
    }

    /// Merges knowledge that packets of other flows reached their own
    /// destinations, then removes stored items that can no longer help.
    /// Returns the removed items.
    pub fn prune(&mut self, peer_updates: &[(FlowIdx, &SeqSet)]) -> Vec<XorItem> {
        for (flow, acked) in peer_updates {
            if *flow == self.desired {
                continue;
            }
            if self.peer_acked.len() <= *flow {
                self.peer_acked.resize(*flow + 1, SeqSet::new());
            }
            self.peer_acked[*flow].union_with(acked);
        }
        let mut doomed = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            let Some(s) = s else { continue };
            let stale = match s.pool {
                Pool::C => s
                    .item
                    .id_of_flow(self.desired)
                    .is_none_or(|d| self.delivered.contains(d.seq)),
                Pool::O => s.item.ids().iter().all(|&id| self.is_peer_acked(id)),
            };
            if stale {
                doomed.push(i);
            }
        }
        doomed
            .into_iter()
            .filter_map(|i| self.remove(i).map(|s| s.item))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: FlowIdx = 0;
    const B: FlowIdx = 1;

    fn a(seq: u64) -> NativeId {
        NativeId::new(A, seq)
    }
    fn b(seq: u64) -> NativeId {
        NativeId::new(B, seq)
    }
    fn x(ids: &[NativeId]) -> XorItem {
        XorItem::from_ids(ids.iter().copied())
    }

    fn chain_xor(e: &Extraction) -> XorItem {
        e.chain.iter().fold(XorItem::default(), |acc, it| &acc ^ it)
    }

    #[test]
    fn xor_is_symmetric_difference() {
        let p = x(&[a(1), b(1)]);
        let q = x(&[a(1), b(2)]);
        assert_eq!(&p ^ &q, x(&[b(1), b(2)]));
        assert!((&p ^ &p).is_empty());
        assert_eq!(x(&[a(1), a(1), b(3)]), x(&[b(3)]));
    }

    #[test]
    fn overhearing_the_partner_extracts_from_stored_coded() {
        // Node D wants flow B.
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        assert!(pool.on_receive(x(&[a(1), b(1)]), Via::RelayDownlink).is_empty());
        assert_eq!(pool.c_pool_len(), 1);
        let got = pool.on_receive(x(&[a(1)]), Via::Overhear);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, b(1));
        assert_eq!(chain_xor(&got[0]), XorItem::native(b(1)));
        assert_eq!(pool.c_pool_len(), 0);
        // The overheard packet stays for later reuse.
        assert_eq!(pool.o_pool(), vec![x(&[a(1)])]);
    }

    #[test]
    fn stored_overheard_extracts_later_coded() {
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        pool.on_receive(x(&[a(4)]), Via::Overhear);
        let first = pool.on_receive(x(&[a(4), b(1)]), Via::RelayDownlink);
        let second = pool.on_receive(x(&[a(4), b(2)]), Via::RelayDownlink);
        assert_eq!(first[0].id, b(1));
        assert_eq!(second[0].id, b(2));
        assert_eq!(pool.o_pool_len(), 1);
    }

    #[test]
    fn one_overheard_packet_unlocks_several_coded() {
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        for j in [1, 5, 9] {
            pool.on_receive(x(&[a(2), b(j)]), Via::RelayDownlink);
        }
        let mut got: Vec<u64> = pool
            .on_receive(x(&[a(2)]), Via::Overhear)
            .iter()
            .map(|e| e.id.seq)
            .collect();
        got.sort();
        assert_eq!(got, vec![1, 5, 9]);
    }

    #[test]
    fn single_vs_multi_iteration_peeling() {
        let coded = [x(&[a(1), b(1)]), x(&[a(1), b(2)]), x(&[a(2), b(2)])];

        let mut single = PoolSet::new(B, TrackingMode::Single);
        for c in &coded {
            single.on_receive(c.clone(), Via::RelayDownlink);
        }
        let got: Vec<_> = single.on_receive(x(&[a(2)]), Via::Overhear);
        assert_eq!(got.iter().map(|e| e.id).collect::<Vec<_>>(), vec![b(2)]);

        let mut multi = PoolSet::new(B, TrackingMode::Multi);
        for c in &coded {
            multi.on_receive(c.clone(), Via::RelayDownlink);
        }
        let got = multi.on_receive(x(&[a(2)]), Via::Overhear);
        let ids: Vec<_> = got.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![b(2), b(1)]);
        assert_eq!(got[0].iteration, 1);
        assert!(got[1].iteration >= 2);
        // A1 was learned along the way and kept as an overheard native.
        assert!(multi.o_pool().contains(&x(&[a(1)])));
        for e in &got {
            assert_eq!(chain_xor(e), XorItem::native(e.id));
        }
    }

    #[test]
    fn empty_pools_store_overheard() {
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        assert!(pool.on_receive(x(&[a(1)]), Via::Overhear).is_empty());
        assert_eq!(pool.o_pool(), vec![x(&[a(1)])]);
        assert_eq!(pool.c_pool_len(), 0);
    }

    #[test]
    fn coded_for_delivered_packet_is_discarded() {
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        pool.on_receive(x(&[a(1)]), Via::Overhear);
        pool.on_receive(x(&[a(1), b(1)]), Via::RelayDownlink);
        assert!(pool.on_receive(x(&[a(7), b(1)]), Via::RelayDownlink).is_empty());
        assert_eq!(pool.c_pool_len(), 0);
    }

    #[test]
    fn prune_drops_overheard_once_peer_acked() {
        // Node D holds A1 and learns A1 reached node C.
        let mut pool = PoolSet::new(B, TrackingMode::Single);
        pool.on_receive(x(&[a(1)]), Via::Overhear);
        pool.on_receive(x(&[a(2)]), Via::Overhear);
        let acked: SeqSet = [1].into_iter().collect();
        let removed = pool.prune(&[(A, &acked)]);
        assert_eq!(removed, vec![x(&[a(1)])]);
        assert_eq!(pool.o_pool(), vec![x(&[a(2)])]);
        // Idempotent.
        assert!(pool.prune(&[(A, &acked)]).is_empty());
        assert!(pool.prune(&[]).is_empty());
    }

    #[test]
    fn three_flow_reduction_uses_known_natives() {
        // Star-style destination wanting flow 1, holding X (flow 0) and Z (flow 2).
        let (f0, f1, f2) = (0, 1, 2);
        let mut pool = PoolSet::new(f1, TrackingMode::Single);
        let xyz = XorItem::from_ids([NativeId::new(f0, 0), NativeId::new(f1, 0), NativeId::new(f2, 0)]);
        pool.on_receive(xyz.clone(), Via::RelayDownlink);
        assert!(pool.on_receive(XorItem::native(NativeId::new(f0, 0)), Via::Overhear).is_empty());
        let got = pool.on_receive(XorItem::native(NativeId::new(f2, 0)), Via::Overhear);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, NativeId::new(f1, 0));
        assert_eq!(chain_xor(&got[0]), XorItem::native(NativeId::new(f1, 0)));
    }

    #[test]
    fn superposition_overhear_pairs_with_coded() {
        let (f0, f1, f2) = (0, 1, 2);
        let mut pool = PoolSet::new(f0, TrackingMode::Single);
        let yz = XorItem::from_ids([NativeId::new(f1, 3), NativeId::new(f2, 8)]);
        pool.on_receive(yz.clone(), Via::Overhear);
        let xyz = &yz ^ &XorItem::native(NativeId::new(f0, 5));
        let got = pool.on_receive(xyz, Via::RelayDownlink);
        assert_eq!(got[0].id, NativeId::new(f0, 5));
    }
}
