use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridboost::classifiers::{kernel_matrix, KernelSpec};
use hybridboost::data::{synth_dataset, SynthKind};
use hybridboost::hog::{hog_features, HogConfig};
use hybridboost::par;
use hybridboost::renet::{build_model, images_to_batch, BrainReNetConfig};
use hybridboost::tensor::{conv2d, ConvSpec, Tensor};
use std::hint::black_box;

fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&mut f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
        b.iter(|| par::sequential(&mut f))
    });
    g.finish();
}

fn conv(c: &mut Criterion) {
    let input = Tensor::from_fn(&[16, 8, 32, 32], |i| ((i * 7919) % 101) as f64 / 101.0);
    let filters = Tensor::from_fn(&[16, 8, 3, 3], |i| ((i * 31) % 17) as f64 / 17.0 - 0.5);
    let bias = vec![0.1; 16];
    modes(c, "conv2d_16x8x32x32", || {
        black_box(conv2d(&input, &filters, &bias, &ConvSpec::same(3, 3)).unwrap());
    });
}

fn hog(c: &mut Criterion) {
    let ds = synth_dataset(SynthKind::Detect2, 32, 64, 1).unwrap();
    let cfg = HogConfig::default();
    modes(c, "hog_64_images", || {
        black_box(hog_features(&ds.images, &ds.labels, &cfg).unwrap());
    });
}

fn kernel(c: &mut Criterion) {
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|i| (0..256).map(|j| (((i * 131 + j * 17) % 97) as f64) / 97.0).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let k = KernelSpec::rbf().resolve(256).unwrap();
    modes(c, "rbf_kernel_300", || {
        black_box(kernel_matrix(&k, &refs));
    });
}

fn forward(c: &mut Criterion) {
    let ds = synth_dataset(SynthKind::Classify3, 6, 64, 2).unwrap();
    let refs: Vec<_> = ds.images.iter().collect();
    let batch = images_to_batch(&refs).unwrap();
    let model = build_model(&BrainReNetConfig::with_classes(3), 0).unwrap();
    modes(c, "cnn_infer_18", || {
        black_box(model.infer(&batch).unwrap());
    });
}

criterion_group!(benches, conv, hog, kernel, forward);
criterion_main!(benches);
