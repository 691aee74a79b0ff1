use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeshift::kernels::{
    bspn_forward_infer, layernorm_ref, ptsoftmax, softmax_ref, BspnState, PtSoftmaxConfig,
};
use spikeshift::numerics::FixedTensor;

const LENGTHS: [usize; 4] = [8, 64, 512, 4096];

fn reals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-8.0..4.0)).collect()
}

fn softmaxes(c: &mut Criterion) {
    let mut g = c.benchmark_group("softmax");
    let cfg = PtSoftmaxConfig::default();
    for n in LENGTHS {
        let x = reals(n, n as u64);
        let row = FixedTensor::from_real_vec(&x, 8).unwrap();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("exact", n), &x, |b, x| {
            b.iter(|| softmax_ref(x).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("shift", n), &row, |b, row| {
            b.iter(|| ptsoftmax(row, &cfg).unwrap())
        });
    }
    g.finish();
}

fn norms(c: &mut Criterion) {
    let mut g = c.benchmark_group("norm");
    for n in LENGTHS {
        let x = reals(n, 7 ^ n as u64);
        let gamma = vec![1.0; n];
        let beta = vec![0.0; n];
        let row = FixedTensor::from_reals(&x, vec![1, n], 8).unwrap();
        let mut state = BspnState::with_affine(gamma.clone(), beta.clone(), 1, 0.9)
            .unwrap()
            .with_pow2_scale(true);
        state.freeze(8).unwrap();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("layernorm", n), &x, |b, x| {
            b.iter(|| layernorm_ref(x, &gamma, &beta).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("shift", n), &row, |b, row| {
            b.iter(|| bspn_forward_infer(row, &state).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, softmaxes, norms);
criterion_main!(benches);
