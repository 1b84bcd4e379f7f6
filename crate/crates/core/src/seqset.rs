//! Compact set of sequence numbers: a contiguous prefix plus sparse extras.

use std::collections::BTreeSet;

/// Set of `u64` sequence numbers stored as "everything below `floor`" plus the
/// out-of-order members above it.
///
/// `floor` is always the smallest sequence number *not* in the set, which is
/// exactly the cumulative-ACK value of a SACK frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeqSet {
    floor: u64,
    above: BTreeSet<u64>,
}

impl SeqSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// All sequence numbers strictly below `floor`.
    pub fn with_prefix(floor: u64) -> Self {
        Self {
            floor,
            above: BTreeSet::new(),
        }
    }

    /// Smallest sequence number not in the set.
    pub fn floor(&self) -> u64 {
        self.floor
    }

    pub fn contains(&self, seq: u64) -> bool {
        seq < self.floor || self.above.contains(&seq)
    }

    /// Inserts `seq`; returns `true` when it was not already present.
    pub fn insert(&mut self, seq: u64) -> bool {
        if seq < self.floor {
            return false;
        }
        if seq == self.floor {
            self.floor += 1;
            while self.above.remove(&self.floor) {
                self.floor += 1;
            }
            true
        } else {
            self.above.insert(seq)
        }
    }

    /// Adds every sequence number below `floor`.
    pub fn raise_floor(&mut self, floor: u64) {
        if floor <= self.floor {
            return;
        }
        self.floor = floor;
        self.above = self.above.split_off(&floor);
        while self.above.remove(&self.floor) {
            self.floor += 1;
        }
    }

    /// Members above the floor, ascending.
    pub fn above_floor(&self) -> impl Iterator<Item = u64> + '_ {
        self.above.iter().copied()
    }

    /// Largest member, if any.
    pub fn max(&self) -> Option<u64> {
        self.above
            .last()
            .copied()
            .or_else(|| self.floor.checked_sub(1))
    }

    /// Number of members.
    pub fn len(&self) -> u64 {
        self.floor + self.above.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn union_with(&mut self, other: &SeqSet) {
        self.raise_floor(other.floor);
        for s in other.above_floor() {
            self.insert(s);
        }
    }
}

impl FromIterator<u64> for SeqSet {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut s = SeqSet::new();
        for x in iter {
            s.insert(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_advances_through_out_of_order_members() {
        let mut s: SeqSet = [2, 3, 5].into_iter().collect();
        assert_eq!(s.floor(), 0);
        assert!(s.insert(0));
        assert_eq!(s.floor(), 1);
        assert!(s.insert(1));
        assert_eq!(s.floor(), 4);
        assert!(s.contains(5));
        assert!(!s.contains(4));
        assert!(!s.insert(2));
        assert_eq!(s.len(), 5);
        assert_eq!(s.max(), Some(5));
    }

    #[test]
    fn raise_floor_absorbs_members() {
        let mut s: SeqSet = [4, 6, 9].into_iter().collect();
        s.raise_floor(5);
        assert_eq!(s.floor(), 5);
        assert_eq!(s.above_floor().collect::<Vec<_>>(), vec![6, 9]);
        s.raise_floor(6);
        assert_eq!(s.floor(), 7);
        assert_eq!(s.above_floor().collect::<Vec<_>>(), vec![9]);
    }
}
