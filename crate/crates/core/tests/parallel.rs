use hybridboost::classifiers::{kernel_matrix, KernelSpec};
use hybridboost::data::{synth_dataset, SynthKind};
use hybridboost::hog::{hog_features, HogConfig};
use hybridboost::par;
use hybridboost::renet::{build_model, images_to_batch, BrainReNetConfig};
use hybridboost::tensor::Mode;

#[test]
fn sequential_path_gives_identical_results() {
    let ds = synth_dataset(SynthKind::Classify3, 3, 64, 1).unwrap();
    let hog = || hog_features(&ds.images, &ds.labels, &HogConfig::default()).unwrap();
    assert_eq!(hog(), par::sequential(hog));

    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| (0..5).map(|j| ((i * 3 + j) % 7) as f64).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let k = KernelSpec::rbf().resolve(5).unwrap();
    assert_eq!(kernel_matrix(&k, &refs), par::sequential(|| kernel_matrix(&k, &refs)));

    let imgs: Vec<_> = ds.images.iter().collect();
    let batch = images_to_batch(&imgs).unwrap();
    let model = build_model(&BrainReNetConfig::with_classes(3), 4).unwrap();
    let labels = ds.labels.clone();
    let run = || {
        model
            .clone()
            .loss_and_gradients(&batch, &labels, Mode::Train, 1)
            .unwrap()
    };
    let (a, b) = (run(), par::sequential(run));
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn sequential_scope_is_restored() {
    let outer = par::is_parallel();
    assert!(!par::sequential(par::is_parallel));
    assert_eq!(par::is_parallel(), outer);
}
