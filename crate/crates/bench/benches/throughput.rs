use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use pnc_arq::arq::{decode_sack, encode_sack};
use pnc_arq::sim::run;
use pnc_arq::{th1, th2};
use pnc_arq_bench::{realistic_cross, sparse_delivered};

fn simulator(c: &mut Criterion) {
    let rounds = 20_000;
    let mut g = c.benchmark_group("simulate");
    g.throughput(Throughput::Elements(rounds));
    g.sample_size(20);
    for p in [0.57, 0.9] {
        let cfg = realistic_cross(p, rounds);
        g.bench_function(format!("realistic_w170_n4_p{p}"), |b| b.iter(|| run(black_box(&cfg)).unwrap()));
        let ideal = pnc_arq::SimConfig {
            mode: pnc_arq::AckMode::Idealized,
            w: 1,
            n: 1,
            ..cfg.clone()
        };
        g.bench_function(format!("idealized_p{p}"), |b| b.iter(|| run(black_box(&ideal)).unwrap()));
    }
    g.finish();
}

fn markov(c: &mut Criterion) {
    c.bench_function("th1_solve", |b| b.iter(|| th1(black_box(0.8), black_box(0.7)).unwrap()));
    c.bench_function("th2_solve", |b| b.iter(|| th2(black_box(0.8), black_box(0.7)).unwrap()));
}

fn sack(c: &mut Criterion) {
    let set = sparse_delivered(1 << 20, 170);
    let frame = encode_sack(&set, 170).unwrap();
    c.bench_function("sack_encode_w170", |b| b.iter(|| encode_sack(black_box(&set), 170).unwrap()));
    c.bench_function("sack_decode_w170", |b| b.iter(|| decode_sack(black_box(&frame))));
}

criterion_group!(benches, simulator, markov, sack);
criterion_main!(benches);
