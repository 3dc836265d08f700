// Sequential vs rayon execution for the two hot loops: cross-fitting the
// nuisances fold by fold, and the CV-EP (k, fold) grid. Without the
// `parallel` feature both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eplearner::crossfit::{fit_nuisances_with, partition_folds};
use eplearner::metalearners::{cv_ep_criterion, EpOptions};
use eplearner::parallel::Execution;
use eplearner::simulation::{generate, Complexity, Dgp, Overlap, Scenario, ScenarioConfig};
use eplearner::LearnerConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let dgp = Dgp::new(Scenario::LowDim, Overlap::Moderate, Complexity::Complex);
    let sim = generate(&ScenarioConfig { dgp, n: 2000, seed: 1 }).unwrap();
    let spec = dgp.spec();
    let folds = partition_folds(sim.data.n(), 10, 1).unwrap();
    let prop = LearnerConfig::logistic_cosine(2);
    let out = LearnerConfig::wls_cosine(8);

    let mut g = c.benchmark_group("crossfit_nuisances");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| fit_nuisances_with(&sim.data, &folds, &prop, &out, &spec, exec).unwrap())
        });
    }
    g.finish();

    let nuis = fit_nuisances_with(&sim.data, &folds, &prop, &out, &spec, Execution::Sequential).unwrap();
    let stage2 = LearnerConfig::boosted_grid(1..=3);
    let opts = EpOptions::default();
    let mut g = c.benchmark_group("cv_ep_criterion");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| cv_ep_criterion(&sim.data, &nuis, &spec, &[1, 2, 4, 6], &stage2, &opts, true, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
