use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sinreact::config::parse_config;
use sinreact::exec::{par_map, seq_map};
use sinreact::scheme::{run_scheme_on, Instance};

const CONFIG: &str = "p = 2\ngamma = 0.5\nmu = 45\na = const:1\nf = const:1\n\
                      domain = 1d:0,1\nnodes = 161\neps_bar = 0.1\n";

fn mu_sweep(c: &mut Criterion) {
    let cfg = parse_config(CONFIG).expect("bench config");
    let inst = Instance::new(&cfg.problem).expect("instance");
    let mus: Vec<f64> = (0..8).map(|k| 25.0 * 1.25f64.powi(k)).collect();
    let run = |mu: &f64| {
        let pr = cfg.problem.with_mu(*mu);
        run_scheme_on(&pr, &inst, false).expect("scheme").iterations
    };
    let mut group = c.benchmark_group("mu_sweep");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", mus.len()), |b| b.iter(|| seq_map(&mus, run)));
    group.bench_function(BenchmarkId::new("parallel", mus.len()), |b| b.iter(|| par_map(&mus, run)));
    group.finish();
}

criterion_group!(benches, mu_sweep);
criterion_main!(benches);
