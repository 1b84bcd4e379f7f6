//! Fixtures shared by the criterion benchmarks in `benches/`.

use pnc_arq::{builtin_cross_atom, AckMode, CrossLsp, SeqSet, SimConfig};

/// Realistic cross-atom configuration at the optimized operating point.
pub fn realistic_cross(p: f64, rounds: u64) -> SimConfig {
    SimConfig {
        mode: AckMode::Realistic,
        w: 170,
        n: 4,
        rounds,
        warmup: rounds / 10,
        ..SimConfig::new(builtin_cross_atom(CrossLsp::homogeneous(p, p)).expect("valid p"))
    }
}

/// A delivered set with every third packet above `floor` missing.
pub fn sparse_delivered(floor: u64, w: usize) -> SeqSet {
    let mut s = SeqSet::with_prefix(floor);
    for k in 1..w as u64 {
        if k % 3 != 0 {
            s.insert(floor + k);
        }
    }
    s
}
