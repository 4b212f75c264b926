use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prefixcd::{decode_blockwise, decode_tokenwise, RandomStream};
use prefixcd_bench::{ngram, oracle_scorer, reward};

fn tokenwise(c: &mut Criterion) {
    let model = ngram(8);
    let scorer = oracle_scorer(&model, &reward(&model));
    let mut group = c.benchmark_group("decode_tokenwise");
    for lambda in [0.0, 1.0, 5.0] {
        group.bench_with_input(
            BenchmarkId::from_parameter(lambda),
            &lambda,
            |b, &lambda| {
                let mut seed = 0;
                b.iter(|| {
                    seed += 1;
                    decode_tokenwise(&model, &scorer, lambda, &[], &RandomStream::new(seed))
                        .unwrap()
                })
            },
        );
    }
    group.finish();
}

fn blockwise(c: &mut Criterion) {
    let model = ngram(8);
    let scorer = oracle_scorer(&model, &reward(&model));
    let mut group = c.benchmark_group("decode_blockwise");
    for (k, m) in [(2, 1), (8, 1), (8, 4)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("K{k}_M{m}")),
            &(k, m),
            |b, &(k, m)| {
                let mut seed = 0;
                b.iter(|| {
                    seed += 1;
                    decode_blockwise(&model, &scorer, k, m, &[], &RandomStream::new(seed)).unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, tokenwise, blockwise);
criterion_main!(benches);
