use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oscar_core::inference::{permutation_test, PermutationScheme};
use oscar_core::partitioning::{average_sobel, slic_partition, SlicParams};
use oscar_core::synth::{generate_synthetic, SynthConfig, SynthDataset};
use oscar_core::{Aggregation, Kind, Method, ModelTag, RankMatrix, Statistic};

fn dataset(n_regions: usize, m: usize) -> SynthDataset {
    generate_synthetic(&SynthConfig {
        n_regions,
        m,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn profiles(c: &mut Criterion) {
    let mut g = c.benchmark_group("profiles");
    for n in [64, 196] {
        let data = dataset(n, 200);
        let maps = data.attribution_maps(ModelTag::TS);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                RankMatrix::from_maps(black_box(&maps), &data.partition, Statistic::Mean)
                    .unwrap()
                    .aggregate(Aggregation::Median)
            })
        });
    }
    g.finish();
}

fn permutation(c: &mut Criterion) {
    let mut g = c.benchmark_group("permutation");
    g.sample_size(10);
    for n in [64, 196] {
        let data = dataset(n, 100);
        let profile = |tag| {
            RankMatrix::from_maps(&data.attribution_maps(tag), &data.partition, Statistic::Mean)
                .unwrap()
                .aggregate(Aggregation::Median)
        };
        let (ba, ts, sa) = (profile(ModelTag::BA), profile(ModelTag::TS), profile(ModelTag::SA));
        g.bench_with_input(BenchmarkId::new("partial_10k", n), &n, |b, _| {
            b.iter(|| {
                permutation_test(
                    &ts,
                    &sa,
                    Some(&ba),
                    Kind::Partial,
                    Method::Pearson,
                    10_000,
                    7,
                    PermutationScheme::BOnly,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn slic(c: &mut Criterion) {
    let data = dataset(256, 16);
    let edges = average_sobel(&data.maps[0]).unwrap();
    c.bench_function("slic_k100_64x64", |b| {
        b.iter(|| {
            slic_partition(
                black_box(&edges),
                SlicParams {
                    k: 100,
                    ..SlicParams::default()
                },
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, profiles, permutation, slic);
criterion_main!(benches);
