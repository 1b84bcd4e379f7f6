use std::collections::HashSet;

use pnc_arq::sim::{run, run_with_audit};
use pnc_arq::*;

fn cross(p: f64) -> AtomSpec {
    builtin_cross_atom(CrossLsp::homogeneous(p, p)).unwrap()
}

fn cfg(atom: AtomSpec, rounds: u64) -> SimConfig {
    SimConfig {
        rounds,
        warmup: 5_000,
        ..SimConfig::new(atom)
    }
}

#[test]
fn idealized_never_wastes() {
    for (w, tracking) in [(1, Tracking::Single), (8, Tracking::Single), (32, Tracking::Multi), (4, Tracking::Off)] {
        for p in [0.6, 0.8, 0.95] {
            let st = run(&SimConfig { w, tracking, ..cfg(cross(p), 40_000) }).unwrap();
            assert_eq!(st.wasteful, 0, "W={w} p={p} {tracking:?}");
            assert_eq!(st.ack_airtime, 0.0);
        }
    }
    let st = run(&cfg(builtin_star_atom(0.8).unwrap(), 40_000)).unwrap();
    assert_eq!(st.wasteful, 0);
}

#[test]
fn perfect_channels_are_exact() {
    let st = run(&cfg(cross(1.0), 20_000)).unwrap();
    assert_eq!(st.throughput_per_round, 2.0);
    assert_eq!(st.ci95, 0.0);
    let st = run(&cfg(builtin_star_atom(1.0).unwrap(), 20_000)).unwrap();
    assert_eq!(st.throughput_per_slot, 1.0);
    let st = run(&SimConfig {
        coupling: Coupling::Coupled,
        ..cfg(cross(1.0), 20_000)
    })
    .unwrap();
    assert_eq!(st.throughput_per_round, 2.0);
}

#[test]
fn same_seed_same_stats() {
    let base = SimConfig {
        mode: AckMode::Realistic,
        w: 40,
        n: 4,
        seed: 0xDEAD_BEEF,
        ..cfg(cross(0.75), 30_000)
    };
    assert_eq!(run(&base).unwrap(), run(&base).unwrap());
    let other = run(&SimConfig { seed: 2, ..base.clone() }).unwrap();
    assert_ne!(run(&base).unwrap().delivered, other.delivered);
}

#[test]
fn idealized_throughput_ignores_window_size() {
    let stats: Vec<SimStats> = [1, 4, 16]
        .iter()
        .map(|&w| run(&SimConfig { w, ..cfg(cross(0.8), 200_000) }).unwrap())
        .collect();
    for a in &stats {
        for b in &stats {
            assert!(
                (a.throughput_per_round - b.throughput_per_round).abs() <= a.ci95 + b.ci95,
                "{} vs {}",
                a.throughput_per_round,
                b.throughput_per_round
            );
        }
    }
}

#[test]
fn delivered_never_exceeds_distinct_sent() {
    for mode in [AckMode::Idealized, AckMode::Realistic] {
        let st = run(&SimConfig {
            mode,
            w: 20,
            n: 2,
            ..cfg(cross(0.7), 30_000)
        })
        .unwrap();
        for f in 0..2 {
            assert!(st.delivered[f] <= st.distinct_sent[f]);
        }
        assert!(st.wasteful <= st.transmissions);
    }
}

#[test]
fn every_extraction_replays() {
    let c = SimConfig {
        mode: AckMode::Realistic,
        tracking: Tracking::Multi,
        w: 16,
        n: 2,
        ..cfg(cross(0.7), 20_000)
    };
    let mut seen = HashSet::new();
    let mut count = 0u64;
    run_with_audit(&c, |_, flow, e| {
        let folded = e.chain.iter().fold(XorItem::default(), |acc, it| &acc ^ it);
        assert_eq!(folded, XorItem::native(e.id), "chain does not telescope: {:?}", e.chain);
        assert_eq!(e.id.flow, flow);
        assert!(seen.insert(e.id), "{:?} delivered twice", e.id);
        count += 1;
    })
    .unwrap();
    assert!(count > 10_000);
}

#[test]
fn throughput_rises_with_p() {
    let mut last = (0.0, 0.0);
    for p in [0.57, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95] {
        let st = run(&cfg(cross(p), 60_000)).unwrap();
        assert!(st.throughput_per_round + st.ci95 >= last.0 - last.1, "p={p}");
        last = (st.throughput_per_round, st.ci95);
    }
}

#[test]
fn pools_stay_bounded_under_realistic_acks() {
    for w in [16, 64] {
        let st = run(&SimConfig {
            mode: AckMode::Realistic,
            w,
            n: 4,
            rounds: 1_000_000,
            warmup: 10_000,
            ..SimConfig::new(cross(0.6))
        })
        .unwrap();
        // Stale overheard items linger until an ACK broadcast is overheard.
        assert!(st.max_o_pool <= 4 * w, "W={w} o-pool {}", st.max_o_pool);
        assert!(st.max_c_pool <= 2 * w, "W={w} c-pool {}", st.max_c_pool);
    }
}

#[test]
fn realistic_accounting() {
    let st = run(&SimConfig {
        mode: AckMode::Realistic,
        w: 170,
        n: 4,
        ..cfg(cross(0.8), 50_000)
    })
    .unwrap();
    assert!(st.ack_events > 0);
    assert!(st.ack_lost <= st.ack_events);
    assert!(st.ack_airtime > 0.0);
    let slots = st.data_slots as f64 + st.ack_airtime;
    let expect = st.delivered_total() as f64 / slots * 2.0;
    assert!((st.throughput_per_round - expect).abs() < 1e-12);
    // Two destinations never collide.
    assert_eq!(st.ack_collisions, 0);
}

#[test]
fn star_acks_can_collide() {
    let st = run(&SimConfig {
        mode: AckMode::Realistic,
        w: 130,
        n: 3,
        ..cfg(builtin_star_atom(0.8).unwrap(), 50_000)
    })
    .unwrap();
    assert!(st.ack_collisions > 0);
    assert!(st.throughput_per_round > 0.0);
}

#[test]
fn bad_configs_rejected() {
    let base = cfg(cross(0.8), 1_000);
    assert!(matches!(run(&SimConfig { w: 0, ..base.clone() }), Err(SimError::ZeroWindow)));
    assert!(matches!(run(&SimConfig { n: 0, ..base.clone() }), Err(SimError::ZeroFrequency)));
    assert!(matches!(
        run(&SimConfig { warmup: 1_000, ..base.clone() }),
        Err(SimError::WarmupTooLong { .. })
    ));
    assert!(run(&SimConfig {
        coupling: Coupling::Coupled,
        mode: AckMode::Realistic,
        ..base.clone()
    })
    .is_err());
    assert!(run(&SimConfig {
        coupling: Coupling::Coupled,
        w: 4,
        ..base
    })
    .is_err());
}
