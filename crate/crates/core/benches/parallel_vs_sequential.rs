use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tvbarc::classical::detect_changepoint_with;
use tvbarc::data_io::{aggregate_daily, KeywordClassMap, RawRecord};
use tvbarc::posterior::{default_grid, trend_summary_pooled, TrendTarget};
use tvbarc::sampler::{run_chains, SamplerConfig};
use tvbarc::synthgen::{simulate, Curve, GeneratorSpec};
use tvbarc::{CountSeries, Execution, ModelSpec};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ramp(t_len: usize) -> CountSeries {
    let mu = Curve::PiecewiseLinear {
        points: vec![(0.0, 20.0), (0.45, 20.0), (1.0, 40.0)],
    };
    simulate(&GeneratorSpec::new(t_len, mu, vec![Curve::constant(0.5)], 5).unwrap()).unwrap()
}

fn chains(c: &mut Criterion) {
    let x = ramp(159);
    let spec = ModelSpec::with_defaults(1);
    let cfg = SamplerConfig {
        burn_in: 1000,
        retained: 2000,
        ..SamplerConfig::default()
    };
    let mut group = c.benchmark_group("run_chains_4");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| run_chains(&x, &spec, &cfg, 4, mode).unwrap()));
    }
    group.finish();
}

fn summaries(c: &mut Criterion) {
    let x = ramp(159);
    let spec = ModelSpec::with_defaults(2);
    let cfg = SamplerConfig {
        burn_in: 500,
        retained: 20_000,
        ..SamplerConfig::default()
    };
    let fitted = run_chains(&x, &spec, &cfg, 1, Execution::default()).unwrap();
    let grid = default_grid(200);
    let mut group = c.benchmark_group("trend_summary_20k_draws");
    group.sample_size(20);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| trend_summary_pooled(&fitted, TrendTarget::Ar(1), &grid, 0.95, mode).unwrap())
        });
    }
    group.finish();
}

fn changepoint(c: &mut Criterion) {
    let mut group = c.benchmark_group("changepoint");
    for t_len in [1_000usize, 100_000] {
        let counts: Vec<u64> = (0..t_len).map(|t| (t * 7919 % 31) as u64 + (t > t_len / 3) as u64 * 5).collect();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, t_len), &counts, |b, counts| {
                b.iter(|| detect_changepoint_with(counts, 2, mode).unwrap())
            });
        }
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let end = chrono::NaiveDate::from_ymd_opt(2020, 6, 7).unwrap();
    let base = start.and_hms_opt(0, 0, 0).unwrap().and_utc();
    let keywords = ["cyberbullying", "online abuse", "Twitter victim", "FB victim"];
    let records: Vec<RawRecord> = (0..200_000u64)
        .map(|i| RawRecord {
            timestamp: base + chrono::Duration::seconds((i * 68_111 % (159 * 86_400)) as i64),
            keyword: keywords[(i % 4) as usize].to_string(),
            id: i.to_string(),
        })
        .collect();
    let classes = KeywordClassMap::bundled();
    let mut group = c.benchmark_group("aggregate_200k_records");
    group.sample_size(20);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| aggregate_daily(&records, start, end, &classes, mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, chains, summaries, changepoint, aggregation);
criterion_main!(benches);
