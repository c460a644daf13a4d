use std::path::Path;

use chemputer::assembly::{monte_carlo, MonteCarloConfig};
use chemputer::chemlang::parse_program;
use chemputer::chempiler::{build_default_graph, chempile};
use chemputer::cstm::DEFAULT_BUDGET;
use chemputer::dec::{compare_paired, CorrectionPolicy};
use chemputer::par::Exec;
use chemputer::rules::load_rules_file;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn bench_monte_carlo(c: &mut Criterion) {
    let cfg = MonteCarloConfig {
        trajectories: 1000,
        ..Default::default()
    };
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| monte_carlo(&cfg, exec).unwrap()));
    }
    g.finish();
}

fn bench_paired_dec(c: &mut Criterion) {
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let db = load_rules_file(&fx.join("tiny.rules")).unwrap();
    let prog = parse_program(&std::fs::read_to_string(fx.join("tiny.chem")).unwrap()).unwrap();
    let plan = chempile(&prog, &build_default_graph()).unwrap();
    let policy = CorrectionPolicy::default();
    let mut g = c.benchmark_group("paired_dec");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compare_paired(&plan, &db, &policy, 0.3, 200, 0, DEFAULT_BUDGET, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_monte_carlo, bench_paired_dec);
criterion_main!(benches);
