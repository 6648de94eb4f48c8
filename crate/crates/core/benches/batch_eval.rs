use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nstack_core::harness::{par_map, parallel::threads, seq_map};
use nstack_core::languages::{LanguageKind, LanguageSpec, TrueDistribution};
use nstack_core::model::{Model, ModelConfig, ModelKind};

// Per-string loss and gradient over one batch, rayon pool vs a plain loop.
fn batch_eval(c: &mut Criterion) {
    let spec = LanguageSpec::new(LanguageKind::MarkedReverse).with_window(20, 30);
    let mut dist = TrueDistribution::new(spec.clone(), 1).unwrap();
    let batch: Vec<Vec<usize>> = (0..16).map(|_| dist.sample()).collect();

    let models = [
        ("lstm", ModelConfig::new(ModelKind::Lstm)),
        ("rns-2-2", ModelConfig::new(ModelKind::Rns { states: 2, symbols: 2 })),
    ];
    let mut group = c.benchmark_group(format!("batch_eval/{}threads", threads()));
    group.sample_size(10);
    for (name, cfg) in models {
        let (model, store) = Model::new(cfg, spec.alphabet_size(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        group.bench_with_input(BenchmarkId::new("par_map", name), &batch, |b, batch| {
            b.iter(|| par_map(batch, |w| model.loss_and_grad(&store, w).unwrap().0))
        });
        group.bench_with_input(BenchmarkId::new("seq_map", name), &batch, |b, batch| {
            b.iter(|| seq_map(batch, |w| model.loss_and_grad(&store, w).unwrap().0))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_eval);
criterion_main!(benches);
