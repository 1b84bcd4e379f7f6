//! Selective Repeat sender window, SACK frames, ACK frequency counters and
//! flow coupling.

use std::collections::VecDeque;

use thiserror::Error;

use crate::seqset::SeqSet;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArqError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("ACK frequency must be at least 1")]
    ZeroFrequency,
    #[error("bitmap has {got} bits, window {w} needs one less than the window size")]
    BitmapLength { w: usize, got: usize },
    #[error("delivered packet {seq} lies beyond window {w} starting at {cum}")]
    OutOfWindow { seq: u64, cum: u64, w: usize },
    #[error("SACK desync: frame acknowledges {seq} outside window {w} starting at {sn_min}")]
    Desync { seq: u64, sn_min: u64, w: usize },
    #[error("SACK frame needs {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("non-zero padding bits in SACK bitmap")]
    BadPadding,
    #[error("coupled ARQ needs idealized ACK and window size 1")]
    CoupledUnsupported,
}

/// Status of one packet inside the sender window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Unsent,
    SentUnacked,
    Acked,
}

/// Sender side of a Selective Repeat window of `w` packets starting at
/// `sn_min`.
///
/// The cursor is the next offset to try. It may equal `w` after the last
/// offset was sent, in which case the next call to [`next_to_send`] wraps.
///
/// [`next_to_send`]: WindowState::next_to_send
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowState {
    sn_min: u64,
    status: VecDeque<SlotStatus>,
    cursor: usize,
}

impl WindowState {
    pub fn new(w: usize) -> Result<Self, ArqError> {
        Self::starting_at(0, w)
    }

    pub fn starting_at(sn_min: u64, w: usize) -> Result<Self, ArqError> {
        if w == 0 {
            return Err(ArqError::ZeroWindow);
        }
        Ok(Self {
            sn_min,
            status: std::iter::repeat_n(SlotStatus::Unsent, w).collect(),
            cursor: 0,
        })
    }

    pub fn sn_min(&self) -> u64 {
        self.sn_min
    }

    pub fn size(&self) -> usize {
        self.status.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn status(&self, offset: usize) -> Option<SlotStatus> {
        self.status.get(offset).copied()
    }

    pub fn statuses(&self) -> impl Iterator<Item = SlotStatus> + '_ {
        self.status.iter().copied()
    }

    pub fn is_acked(&self, seq: u64) -> bool {
        if seq < self.sn_min {
            return true;
        }
        self.status
            .get((seq - self.sn_min) as usize)
            .is_some_and(|s| *s == SlotStatus::Acked)
    }

    /// Picks the next packet to transmit and marks it sent. Returns the
    /// sequence number and whether the cursor had to wrap back from the
    /// right boundary.
    pub fn next_to_send(&mut self) -> (u64, bool) {
        let w = self.status.len();
        let mut wrapped = false;
        let mut off = self.cursor;
        loop {
            while off < w && self.status[off] == SlotStatus::Acked {
                off += 1;
            }
            if off < w {
                break;
            }
            wrapped = true;
            off = 0;
        }
        self.status[off] = SlotStatus::SentUnacked;
        self.cursor = off + 1;
        (self.sn_min + off as u64, wrapped)
    }

    /// Slides the left boundary up to `new_min`, bringing unsent packets in on
    /// the right. Offsets below the new boundary are dropped.
    fn slide_to(&mut self, new_min: u64) {
        if new_min <= self.sn_min {
            return;
        }
        let w = self.status.len();
        let shift = (new_min - self.sn_min).min(w as u64) as usize;
        for _ in 0..shift {
            self.status.pop_front();
            self.status.push_back(SlotStatus::Unsent);
        }
        if new_min - self.sn_min > w as u64 {
            self.status.iter_mut().for_each(|s| *s = SlotStatus::Unsent);
        }
        self.cursor = self.cursor.saturating_sub(shift);
        self.sn_min = new_min;
        self.skip_acked_prefix();
    }

    fn skip_acked_prefix(&mut self) {
        while self.status[0] == SlotStatus::Acked {
            self.status.pop_front();
            self.status.push_back(SlotStatus::Unsent);
            self.sn_min += 1;
            self.cursor = self.cursor.saturating_sub(1);
        }
    }

    /// Applies a selective acknowledgment from this flow's destination and
    /// wraps the cursor back to the left boundary.
    pub fn apply_sack(&mut self, frame: &SackFrame) -> Result<(), ArqError> {
        let w = self.status.len();
        if frame.bitmap.len() + 1 != w {
            return Err(ArqError::BitmapLength {
                w,
                got: frame.bitmap.len(),
            });
        }
        let right = self.sn_min + w as u64;
        if frame.cum > right {
            return Err(ArqError::Desync {
                seq: frame.cum - 1,
                sn_min: self.sn_min,
                w,
            });
        }
        for seq in frame.acked_above_cum() {
            if seq >= right {
                return Err(ArqError::Desync {
                    seq,
                    sn_min: self.sn_min,
                    w,
                });
            }
        }
        // A frame behind the left boundary only repeats what is known.
        self.slide_to(frame.cum);
        for seq in frame.acked_above_cum() {
            if seq >= self.sn_min {
                self.status[(seq - self.sn_min) as usize] = SlotStatus::Acked;
            }
        }
        self.skip_acked_prefix();
        self.cursor = 0;
        Ok(())
    }

    /// Adopts exact knowledge of the destination's delivered set without
    /// moving the cursor (idealized feedback).
    pub fn sync_delivered(&mut self, delivered: &SeqSet) {
        self.slide_to(delivered.floor());
        let right = self.sn_min + self.status.len() as u64;
        for seq in delivered.above_floor() {
            if seq >= right {
                break;
            }
            if seq >= self.sn_min {
                self.status[(seq - self.sn_min) as usize] = SlotStatus::Acked;
            }
        }
        self.skip_acked_prefix();
    }
}

/// Selective acknowledgment: every packet below `cum` was received, and bit
/// `k - 1` of `bitmap` says whether packet `cum + k` was, for `k` in
/// `1..W`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SackFrame {
    pub cum: u64,
    pub bitmap: Vec<bool>,
}

impl SackFrame {
    pub fn window(&self) -> usize {
        self.bitmap.len() + 1
    }

    fn acked_above_cum(&self) -> impl Iterator<Item = u64> + '_ {
        self.bitmap
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(k, _)| self.cum + k as u64 + 1)
    }

    /// Bitmap as a string of `0`/`1` characters, for display.
    pub fn bitmap_string(&self) -> String {
        self.bitmap.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }

    /// Number of bitmap bytes on the wire for window `w`.
    pub fn bitmap_bytes(w: usize) -> usize {
        (w.saturating_sub(1)).div_ceil(8)
    }

    /// Wire form: 4-byte big-endian `cum` (mod 2^32), then the bitmap packed
    /// MSB first, zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + Self::bitmap_bytes(self.window()));
        out.extend_from_slice(&(self.cum as u32).to_be_bytes());
        for chunk in self.bitmap.chunks(8) {
            let mut byte = 0u8;
            for (i, b) in chunk.iter().enumerate() {
                if *b {
                    byte |= 0x80 >> i;
                }
            }
            out.push(byte);
        }
        out
    }

    /// Parses the wire form for window `w`. The 32-bit `cum` is widened to
    /// the value congruent to it that lies closest to `reference`.
    pub fn from_bytes(bytes: &[u8], w: usize, reference: u64) -> Result<Self, ArqError> {
        if w == 0 {
            return Err(ArqError::ZeroWindow);
        }
        let nb = Self::bitmap_bytes(w);
        if bytes.len() != 4 + nb {
            return Err(ArqError::Truncated {
                need: 4 + nb,
                got: bytes.len(),
            });
        }
        let wire = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let cum = widen_seq(wire, reference);
        let bits = w - 1;
        let mut bitmap = Vec::with_capacity(bits);
        for k in 0..bits {
            bitmap.push(bytes[4 + k / 8] & (0x80 >> (k % 8)) != 0);
        }
        if !bits.is_multiple_of(8) {
            let pad_mask = 0xffu8 >> (bits % 8);
            if bytes[4 + nb - 1] & pad_mask != 0 {
                return Err(ArqError::BadPadding);
            }
        }
        Ok(Self { cum, bitmap })
    }
}

/// The 64-bit sequence number congruent to `wire` mod 2^32 nearest to
/// `reference`.
fn widen_seq(wire: u32, reference: u64) -> u64 {
    let base = reference & !0xffff_ffff;
    let candidates = [
        base.checked_sub(1 << 32),
        Some(base),
        base.checked_add(1 << 32),
    ];
    candidates
        .into_iter()
        .flatten()
        .map(|b| b | wire as u64)
        .min_by_key(|c| c.abs_diff(reference))
        .unwrap_or(wire as u64)
}

/// Builds the SACK describing `delivered` for window size `w`.
pub fn encode_sack(delivered: &SeqSet, w: usize) -> Result<SackFrame, ArqError> {
    if w == 0 {
        return Err(ArqError::ZeroWindow);
    }
    let cum = delivered.floor();
    let mut bitmap = vec![false; w - 1];
    for seq in delivered.above_floor() {
        let k = seq - cum;
        if k >= w as u64 {
            return Err(ArqError::OutOfWindow { seq, cum, w });
        }
        bitmap[k as usize - 1] = true;
    }
    Ok(SackFrame { cum, bitmap })
}

/// Received set described by `frame`: everything below `cum` plus the
/// flagged packets.
pub fn decode_sack(frame: &SackFrame) -> SeqSet {
    let mut s = SeqSet::with_prefix(frame.cum);
    for seq in frame.acked_above_cum() {
        s.insert(seq);
    }
    s
}

/// Counts coded receptions from the relay; an ACK is due every `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckCounter {
    count: u32,
    n: u32,
}

impl AckCounter {
    pub fn new(n: u32) -> Result<Self, ArqError> {
        if n == 0 {
            return Err(ArqError::ZeroFrequency);
        }
        Ok(Self { count: 0, n })
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn threshold(&self) -> u32 {
        self.n
    }

    /// Records one round's outcome at the destination. Returns whether an ACK
    /// is due now.
    pub fn record_reception(&mut self, coded_received: bool) -> bool {
        if !coded_received {
            return false;
        }
        self.count += 1;
        if self.count == self.n {
            self.count = 0;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coupling {
    Coupled,
    NonCoupled,
}

/// Chooses the packet each source sends this round.
///
/// Non-coupled: every flow follows its own window. Coupled: every flow sends
/// the lowest index not yet delivered to all destinations, as told by
/// `shared` (one delivered set per flow). Coupled mode needs windows of size 1.
/// Each entry is `(seq, boundary_wrap)`.
pub fn advance_flow(
    coupling: Coupling,
    windows: &mut [WindowState],
    shared: &[&SeqSet],
) -> Result<Vec<(u64, bool)>, ArqError> {
    match coupling {
        Coupling::NonCoupled => Ok(windows.iter_mut().map(|w| w.next_to_send()).collect()),
        Coupling::Coupled => {
            if windows.iter().any(|w| w.size() != 1) {
                return Err(ArqError::CoupledUnsupported);
            }
            let i = shared.iter().map(|s| s.floor()).min().unwrap_or(0);
            Ok(windows.iter().map(|_| (i, false)).collect())
        }
    }
}
