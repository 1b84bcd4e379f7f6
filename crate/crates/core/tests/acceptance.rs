//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! numbers for every cell that missed its tolerance.
//!
//! The report always exits 0 so that known reproduction gaps do not mask
//! regressions in the gating tests. Set `ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a non-zero exit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pnc_arq::arq::{decode_sack, encode_sack};
use pnc_arq::markov::{enumerate_round_transitions, grid_check, margin, Proposition, Protocol};
use pnc_arq::optimize::{optimize, OptimizeOptions};
use pnc_arq::reference;
use pnc_arq::sim::run;
use pnc_arq::*;

const TABLE2_P: [f64; 9] = [0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.57];
const DESK_ROUNDS: u64 = 200_000;
const ORACLE_ROUNDS: u64 = 1_000_000;
const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    summary: String,
    misses: Vec<String>,
}

impl Outcome {
    fn new(summary: impl Into<String>) -> Self {
        Self {
            pass: true,
            summary: summary.into(),
            misses: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.pass = false;
            self.misses.push(detail());
        }
    }
}

fn cross(p: f64) -> AtomSpec {
    builtin_cross_atom(CrossLsp::homogeneous(p, p)).unwrap()
}

fn reference(table: u8, row: &str, p: f64) -> f64 {
    reference::value(table, row, &format!("{p}")).unwrap_or_else(|| panic!("no reference for table {table} {row} {p}"))
}

fn sim(cfg: SimConfig) -> SimStats {
    run(&cfg).unwrap_or_else(|e| panic!("simulation failed: {e}"))
}

fn realistic(atom: AtomSpec, w: usize, n: u32) -> SimConfig {
    SimConfig {
        mode: AckMode::Realistic,
        w,
        n,
        k: 30,
        d: 600,
        rounds: DESK_ROUNDS,
        seed: SEED,
        ..SimConfig::new(atom)
    }
}

fn c1_benchmark() -> Outcome {
    let mut o = Outcome::new("th1(p,p) vs benchmark row, tol 0.01");
    for p in TABLE2_P {
        let got = th1(p, p).unwrap();
        let want = reference(2, "benchmark", p);
        o.check((got - want).abs() <= 0.01, || format!("p={p}: th1={got:.4}, want {want}"));
    }
    o
}

fn c2_oracle() -> Outcome {
    let mut o = Outcome::new("idealized sim vs th1/th2/th3 within 95% CI, 1e6 rounds");
    for p in [0.6, 0.7, 0.8, 0.9] {
        let base = SimConfig {
            rounds: ORACLE_ROUNDS,
            seed: SEED,
            ..SimConfig::new(cross(p))
        };
        let cases = [
            ("th1", base.clone(), th1(p, p).unwrap()),
            (
                "th2",
                SimConfig {
                    coupling: Coupling::Coupled,
                    ..base.clone()
                },
                th2(p, p).unwrap(),
            ),
            (
                "th3",
                SimConfig {
                    tracking: Tracking::Off,
                    ..base
                },
                th3(p, p).unwrap(),
            ),
        ];
        for (name, cfg, want) in cases {
            let st = sim(cfg);
            let diff = st.throughput_per_round - want;
            o.check(diff.abs() <= st.ci95, || {
                format!("p={p} {name}: sim={:.4} +- {:.4}, solver={want:.4}", st.throughput_per_round, st.ci95)
            });
        }
    }
    o
}

fn c3_propositions() -> Outcome {
    let mut o = Outcome::new("grid checks positive, f(0.8,0.7)=0.19 +- 0.005");
    for prop in [Proposition::TrackingGain, Proposition::NonCoupledGain] {
        let r = grid_check(prop, 0.05).unwrap();
        o.check(r.all_positive, || format!("{prop:?}: min margin {:.4} at {:?}", r.min_margin, r.argmin));
    }
    let f = margin(Proposition::TrackingGain, 0.8, 0.7).unwrap();
    o.check((f - 0.19).abs() <= 0.005, || format!("f(0.8,0.7)={f:.4}, want 0.19"));
    o
}

fn c4_gains() -> Outcome {
    let mut o = Outcome::new("Th1/Th3-1 at 0.9 and 0.5; Th1/Th2-1 at 0.95 and 0.57");
    for (p, want) in [(0.9, 0.03), (0.5, 0.75)] {
        let g = th1(p, p).unwrap() / th3(p, p).unwrap() - 1.0;
        o.check((g - want).abs() <= 0.02, || format!("tracking gain at p={p}: {:.2}%, want {:.0}%", g * 100.0, want * 100.0));
    }
    for p in [0.95, 0.57] {
        let g = th1(p, p).unwrap() / th2(p, p).unwrap() - 1.0;
        o.check((0.06..=0.27).contains(&g), || format!("non-coupled gain at p={p}: {:.2}%", g * 100.0));
    }
    o
}

fn c5_optimized() -> (Outcome, Vec<f64>) {
    let mut o = Outcome::new("W=170 N=4: degradation < 4%, throughput +- 0.02, overhead +- 1pp");
    let mut through = Vec::new();
    for p in TABLE2_P {
        let st = sim(realistic(cross(p), 170, 4));
        let bench = th1(p, p).unwrap();
        let th = st.throughput_per_round;
        through.push(th);
        let deg = degradation(th, bench);
        o.check(deg < 0.04, || format!("p={p}: degradation {:.2}%", deg * 100.0));
        let want = reference(2, "pnc-opt", p);
        o.check((th - want).abs() <= 0.02, || format!("p={p}: throughput {th:.4}, want {want}"));
        let ovh = overhead_metric(th, bench);
        let want_ovh = reference(2, "overhead", p);
        o.check((ovh - want_ovh).abs() <= 0.01, || {
            format!("p={p}: overhead {:.2}%, want {:.1}%", ovh * 100.0, want_ovh * 100.0)
        });
    }
    (o, through)
}

fn c6_naive(optimized: &[f64]) -> Outcome {
    let mut o = Outcome::new("W=1 N=1 vs table row +- 0.02, gain at 0.57 = 167% +- 10pp");
    let mut naive_057 = f64::NAN;
    for p in TABLE2_P {
        let th = sim(realistic(cross(p), 1, 1)).throughput_per_round;
        if p == 0.57 {
            naive_057 = th;
        }
        let want = reference(3, "w1-n1", p);
        o.check((th - want).abs() <= 0.02, || format!("p={p}: {th:.4}, want {want}"));
    }
    let gain = optimized[TABLE2_P.len() - 1] / naive_057 - 1.0;
    o.check((gain - 1.67).abs() <= 0.10, || format!("gain at 0.57: {:.1}%", gain * 100.0));
    o
}

fn c7_multi() -> Outcome {
    let mut o = Outcome::new("multi-iteration share <= 3% on [0.5,0.9], +- 0.5pp at 0.9/0.7/0.5");
    let ps = [0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5];
    for p in ps {
        let st = sim(SimConfig {
            tracking: Tracking::Multi,
            w: 170,
            seed: SEED,
            ..SimConfig::new(cross(p))
        });
        let share = st.multi_iter_fraction();
        o.check(share <= 0.03, || format!("p={p}: share {:.2}%", share * 100.0));
        if [0.9, 0.7, 0.5].contains(&p) {
            let want = reference(1, "multi-iteration share", p);
            o.check((share - want).abs() <= 0.005, || {
                format!("p={p}: share {:.2}%, want {:.1}%", share * 100.0, want * 100.0)
            });
        }
    }
    o
}

fn c8_properties() -> Outcome {
    let mut o = Outcome::new("SACK round trip, zero waste, p=1 exact, determinism, W invariance, chain checks");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..10_000 {
        let w = rng.random_range(1..=256usize);
        let mut set = SeqSet::with_prefix(rng.random_range(0..1u64 << 40));
        for k in 1..w as u64 {
            if rng.random_bool(0.4) {
                set.insert(set.floor() + k);
            }
        }
        let frame = encode_sack(&set, w).unwrap();
        let wire = SackFrame::from_bytes(&frame.to_bytes(), w, set.floor()).unwrap();
        if decode_sack(&wire) != set {
            bad += 1;
        }
    }
    o.check(bad == 0, || format!("{bad} SACK round trips failed"));

    let wasted: u64 = [(1, 0.6), (16, 0.8)]
        .iter()
        .map(|&(w, p)| sim(SimConfig { w, ..SimConfig::new(cross(p)) }).wasteful)
        .sum();
    o.check(wasted == 0, || format!("{wasted} wasteful transmissions under idealized ACK"));

    let perfect = sim(SimConfig::new(cross(1.0))).throughput_per_round;
    o.check(perfect == 2.0, || format!("cross p=1: {perfect}"));
    let star = sim(SimConfig::new(builtin_star_atom(1.0).unwrap())).throughput_per_slot;
    o.check(star == 1.0, || format!("star p=1: {star} p/t"));

    let det = realistic(cross(0.7), 64, 4);
    o.check(sim(det.clone()) == sim(det), || "same seed gave different stats".into());

    let inv: Vec<SimStats> = [1, 4, 16]
        .iter()
        .map(|&w| sim(SimConfig { w, ..SimConfig::new(cross(0.8)) }))
        .collect();
    for a in &inv {
        for b in &inv {
            let d = (a.throughput_per_round - b.throughput_per_round).abs();
            o.check(d <= a.ci95 + b.ci95, || {
                format!("W invariance: {:.4} vs {:.4}", a.throughput_per_round, b.throughput_per_round)
            });
        }
    }

    let mut worst = 0.0f64;
    let mut norm = 0.0f64;
    for _ in 0..100 {
        let (p1, p2) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let chain = enumerate_round_transitions(p1, p2, Protocol::NonCoupledTracking).unwrap();
        let want = p2 * (1.0 - p1 * p1) * (1.0 - p2);
        worst = worst.max((chain.probability("X", "XO").unwrap() - want).abs());
        for ch in [chain, enumerate_round_transitions(p1, p2, Protocol::CoupledTracking).unwrap()] {
            norm = ch.row_sums().iter().fold(norm, |m, s| m.max((s - 1.0).abs()));
            for row in ch.absorption_probabilities().unwrap() {
                norm = norm.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    o.check(worst <= 1e-12, || format!("p(X->XO) off by {worst:e}"));
    o.check(norm <= 1e-9, || format!("row/absorption sums off by {norm:e}"));
    o
}

fn c9_star() -> Outcome {
    let mut o = Outcome::new("star: idealized vs benchmark row +- 0.03 p/t; optimizer near (130, 3), degradation < 4%");
    let ps = [0.95, 0.9, 0.85, 0.8, 0.75];
    let mut bench = Vec::new();
    for p in ps {
        let st = sim(SimConfig {
            seed: SEED,
            ..SimConfig::new(builtin_star_atom(p).unwrap())
        });
        let want = reference(10, "benchmark", p);
        let got = st.throughput_per_slot;
        bench.push(st.throughput_per_round);
        o.check((got - want).abs() <= 0.03, || format!("p={p}: {got:.4} p/t, want {want}"));
    }
    let atom = builtin_star_atom(0.57).unwrap();
    match optimize(&atom, &OptimizeOptions::default()) {
        Ok(r) => {
            o.check(r.n == 3 && r.w.abs_diff(130) <= 20, || format!("optimizer chose W={} N={}", r.w, r.n));
            for (p, b) in ps.iter().zip(&bench) {
                let th = sim(realistic(builtin_star_atom(*p).unwrap(), r.w, r.n)).throughput_per_round;
                let deg = degradation(th, *b);
                o.check(deg < 0.04, || format!("p={p}: degradation {:.2}% at W={} N={}", deg * 100.0, r.w, r.n));
            }
        }
        Err(e) => o.check(false, || format!("optimizer error: {e}")),
    }
    o
}

fn report(id: u32, started: Instant, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id}: {} ({:.1}s)", o.summary, started.elapsed().as_secs_f64());
    for m in &o.misses {
        println!("    {m}");
    }
}

fn main() {
    // libtest-style flags (e.g. --nocapture, filters) are ignored.
    let mut results = Vec::new();
    let mut step = |id: u32, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, t, &o);
        results.push(o.pass);
    };
    step(1, &mut c1_benchmark);
    step(2, &mut c2_oracle);
    step(3, &mut c3_propositions);
    step(4, &mut c4_gains);
    let mut optimized = Vec::new();
    step(5, &mut || {
        let (o, th) = c5_optimized();
        optimized = th;
        o
    });
    step(6, &mut || c6_naive(&optimized));
    step(7, &mut c7_multi);
    step(8, &mut c8_properties);
    step(9, &mut c9_star);

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
