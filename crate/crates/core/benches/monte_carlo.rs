use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nakasim::adversary::Strategy;
use nakasim::experiments::GrowthSpec;
use nakasim::lottery::{sample_slot, SimParams, SlotRng};
use nakasim::parallel::map_sequential;
use nakasim::sim::run;
use nakasim::trace::NullSink;

fn teaser_batch(c: &mut Criterion) {
    let spec = GrowthSpec { duration: 300.0, ..GrowthSpec::default() };
    let seeds: Vec<u64> = (0..8).collect();
    let job = |&s: &u64| run(&spec.config(1.0, Strategy::Teaser, s), &mut NullSink).metrics.growth_rate;

    let mut g = c.benchmark_group("teaser_8_seeds");
    g.bench_function("sequential", |b| b.iter(|| black_box(map_sequential(&seeds, job))));
    #[cfg(feature = "parallel")]
    g.bench_function("parallel", |b| {
        b.iter(|| black_box(nakasim::parallel::map_parallel(&seeds, job, nakasim::parallel::thread_cap())))
    });
    g.finish();
}

fn lottery_chunks(c: &mut Criterion) {
    let p = SimParams::from_rates(20, 1.0, 1.0, 0.1, 0.0, 1.0, 1.0, 1, 7).unwrap();
    let rng = SlotRng::new(7);
    let chunks: Vec<u64> = (0..16).collect();
    let count = |&k: &u64| -> u64 {
        (k * 50_000..(k + 1) * 50_000).map(|t| sample_slot(&rng, &p, t).bpos.len() as u64).sum()
    };

    let mut g = c.benchmark_group("lottery_800k_slots");
    for mode in ["sequential", "parallel"] {
        g.bench_with_input(BenchmarkId::from_parameter(mode), &mode, |b, &mode| {
            b.iter(|| match mode {
                #[cfg(feature = "parallel")]
                "parallel" => black_box(nakasim::parallel::map_parallel(&chunks, count, nakasim::parallel::thread_cap())),
                _ => black_box(map_sequential(&chunks, count)),
            })
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = teaser_batch, lottery_chunks
}
criterion_main!(benches);
