use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeshift::model::{encoder_block, level_block, random_block, random_block_input, BlockShape};
use spikeshift::quantize::BinaryLinear;
use spikeshift::spiking::{encode_rate, spiking_matmul};
use spikeshift::OpCounter;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("spiking_matmul");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (rows, inner, cols) in [(8, 32, 32), (16, 64, 64), (16, 128, 128)] {
        let levels: Vec<i64> = (0..rows * inner).map(|_| rng.gen_range(0..16)).collect();
        let train = encode_rate(&levels, vec![rows, inner], 16).unwrap();
        let signs: Vec<i8> = (0..inner * cols)
            .map(|_| if rng.gen() { 1 } else { -1 })
            .collect();
        let w = BinaryLinear::new(inner, cols, signs, -3).unwrap();
        g.bench_function(
            BenchmarkId::from_parameter(format!("{rows}x{inner}x{cols}")),
            |b| b.iter(|| spiking_matmul(&train, &w).unwrap()),
        );
    }
    g.finish();
}

fn block(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoder_block");
    g.sample_size(20);
    for dim in [16, 32] {
        let shape = BlockShape {
            dim,
            ffn_dim: 4 * dim,
            ..BlockShape::default()
        };
        let p = random_block(&shape, 3).unwrap();
        let x = random_block_input(&shape, 8, 4).unwrap();
        g.bench_with_input(BenchmarkId::new("spiking", dim), &x, |b, x| {
            b.iter(|| encoder_block(x, &p, &mut OpCounter::new()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("levels", dim), &x, |b, x| {
            b.iter(|| level_block(x, &p, &mut OpCounter::new()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, block);
criterion_main!(benches);
