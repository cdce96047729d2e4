use criterion::{criterion_group, criterion_main, Criterion};

use rngdram::config::ExperimentConfig;
use rngdram::harness::{Execution, Harness};

const SWEEP: &str = r#"
seed = 3
[system.core]
instruction_budget = 20000
[sweep]
scheduler = ["fr_fcfs_cap", "bliss", "rng_aware"]
buffer_entries = [0, 16]

[[workload]]
name = "heavy"
[[workload.cores]]
trace = { kind = "synthetic", pattern = "random_uniform", mpki = 20.0, seed = 1 }
[[workload.cores]]
trace = { kind = "rng", throughput_mbps = 2560 }
"#;

fn sweep(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_toml(SWEEP).expect("bench config");
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        let h = Harness::new(cfg.clone(), ".").with_execution(exec);
        group.bench_function(name, |b| b.iter(|| h.sweep()));
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
