use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use drf_bench::{bench_model, random_batch};
use drf_core::Mode;

const LENGTHS: [usize; 3] = [1024, 4096, 16384];

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for len in LENGTHS {
        let model = bench_model(len);
        let (x, _) = random_batch(len, 4);
        group.throughput(Throughput::Elements((4 * len) as u64));
        for (name, mode) in [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, len), &x, |b, x| b.iter(|| model.forward(x, mode).unwrap()));
        }
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for len in LENGTHS {
        let mut model = bench_model(len);
        let (x, labels) = random_batch(len, 4);
        group.throughput(Throughput::Elements((4 * len) as u64));
        for (name, mode) in [("bptt", Mode::Sequential), ("parallel", Mode::Parallel)] {
            // Parameters change every step, so kernels are rebuilt each call.
            group.bench_with_input(BenchmarkId::new(name, len), &x, |b, x| {
                b.iter(|| {
                    model.bump_version();
                    model.loss_and_grad(x, &labels, mode).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    use drf_core::parallel::{fft_causal_conv, TransformPlan};
    let mut group = c.benchmark_group("fft_causal_conv");
    for len in LENGTHS {
        let model = bench_model(len);
        let layer = &model.layers[0];
        let p = layer.dendritic(0).unwrap();
        let grid = drf_core::TimeGrid::new(model.delta, len).unwrap();
        let kernel = drf_core::parallel::build_kernel(&p, &grid);
        let plan = TransformPlan::new(len);
        let (x, _) = random_batch(len, 1);
        group.throughput(Throughput::Elements(len as u64));
        group.bench_with_input(BenchmarkId::from_parameter(len), &x, |b, x| b.iter(|| fft_causal_conv(x, &kernel, &plan).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward, train_step, kernels);
criterion_main!(benches);
