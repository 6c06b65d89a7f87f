//! Benchmarks for the three hot paths: proposal grouping, frustum overlap,
//! and the contrastive objective with gradients.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use pointcap::geometry::frustum_overlap;
use pointcap::instance::{connected_components, shift_points};
use pointcap::objective::{contrastive_grad, contrastive_loss, EmbeddingMatrix, TemperatureParam};
use pointcap::synth::{gen_scene, SynthScene, SynthSpec};
use pointcap::PipelineConfig;

fn scene_with(points_per_instance: usize) -> SynthScene {
    gen_scene(&SynthSpec {
        seed: 77,
        points_per_instance,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn bench_grouping(c: &mut Criterion) {
    let mut group = c.benchmark_group("grouping");
    for points_per_instance in [500usize, 2500] {
        let scene = scene_with(points_per_instance);
        let shifted = shift_points(scene.cloud.points(), &scene.noisy_offsets).unwrap();
        let mask = vec![true; shifted.len()];
        group.bench_with_input(
            BenchmarkId::from_parameter(shifted.len()),
            &shifted,
            |b, shifted| b.iter(|| connected_components(shifted, &mask, 0.04)),
        );
    }
    group.finish();
}

fn bench_frustum_overlap(c: &mut Criterion) {
    let mut group = c.benchmark_group("frustum_overlap");
    let config = PipelineConfig::default();
    for points_per_instance in [500usize, 2500] {
        let scene = scene_with(points_per_instance);
        let frame = &scene.frames[0];
        group.bench_with_input(
            BenchmarkId::from_parameter(scene.num_points()),
            frame,
            |b, frame| b.iter(|| frustum_overlap(&scene.cloud, frame, &config)),
        );
    }
    group.finish();
}

fn random_embeddings(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut m = EmbeddingMatrix::zeros(rows, dim);
    for i in 0..rows {
        for v in m.row_mut(i) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

fn bench_contrastive(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut group = c.benchmark_group("contrastive");
    for n in [16usize, 128] {
        let pooled = random_embeddings(&mut rng, n, 32);
        let text = random_embeddings(&mut rng, n, 32);
        let tau = TemperatureParam::default();
        group.bench_with_input(BenchmarkId::new("loss", n), &n, |b, _| {
            b.iter(|| contrastive_loss(&pooled, &text, &tau).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("grad", n), &n, |b, _| {
            b.iter(|| contrastive_grad(&pooled, &text, &tau).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_grouping, bench_frustum_overlap, bench_contrastive);
criterion_main!(benches);
