use hybridboost::data::{synth_dataset, SynthKind};
use hybridboost::renet::*;
use hybridboost::tensor::{compare_gradient, softmax_rows, Mode, Tensor};
use hybridboost::Error;

fn toy() -> BrainReNetConfig {
    BrainReNetConfig {
        input_height: 16,
        input_width: 16,
        num_classes: 3,
        conv_channels: vec![3, 4],
        fc1_width: 6,
        ..BrainReNetConfig::default()
    }
}

fn flat_params(model: &BrainReNetModel) -> Vec<Vec<f64>> {
    model.clone().trainable_mut().iter().map(|p| p.to_vec()).collect()
}

#[test]
fn two_block_network_gradients_match_finite_differences() {
    let model = build_model_any_depth(&toy(), 7).unwrap();
    let batch = Tensor::from_fn(&[2, 1, 16, 16], |i| ((i as f64 * 0.618).fract() - 0.5) * 2.0);
    let labels = [2, 0];
    let (_, grads) = model
        .clone()
        .loss_and_gradients(&batch, &labels, Mode::Train, 3)
        .unwrap();
    let base = flat_params(&model);
    let mut worst: f64 = 0.0;
    for (k, point) in base.iter().enumerate() {
        let err = compare_gradient(
            |p| {
                let mut m = model.clone();
                m.trainable_mut()[k].copy_from_slice(p);
                m.loss_and_gradients(&batch, &labels, Mode::Train, 3).unwrap().0
            },
            point,
            &grads[k],
            1e-5,
        );
        worst = worst.max(err);
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

#[test]
fn param_count_matches_hand_sum() {
    let c = BrainReNetConfig::with_classes(3);
    // input channels double after each concatenated pooling: 1, 16, 32, 64, 64, 128
    let blocks = [(1, 8), (16, 16), (32, 32), (64, 32), (64, 64), (128, 64)];
    let conv: usize = blocks.iter().map(|&(ci, co)| ci * co * 9 + co + 4 * co).sum();
    let expected = conv + 128 * 128 + 128 + 128 * 3 + 3;
    assert_eq!(expected, 158_595);
    assert_eq!(c.param_count().unwrap(), expected);
    let m = build_model(&c, 0).unwrap();
    let stored = encode_model(&m).unwrap();
    let header = 4 + 4 + 8 + 4 + serde_json::to_vec(&c).unwrap().len() + 8;
    assert_eq!(stored.len(), header + 4 * expected);
}

#[test]
fn softmax_rows_sum_to_one_and_dropout_is_identity_at_inference() {
    let mut m = build_model(&BrainReNetConfig::with_classes(3), 2).unwrap();
    let batch = Tensor::from_fn(&[2, 1, 64, 64], |i| ((i * 31) % 17) as f64 / 17.0);
    let (logits, fc1) = m.forward(&batch, Mode::Infer).unwrap();
    let p = softmax_rows(&logits).unwrap();
    for i in 0..2 {
        assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(fc1.shape(), &[2, 128]);
    assert_eq!(m.forward(&batch, Mode::Infer).unwrap(), (logits, fc1));
}

#[test]
fn zero_epochs_returns_model_unchanged() {
    let ds = synth_dataset(SynthKind::Classify3, 4, 64, 1).unwrap();
    let m = build_model(&BrainReNetConfig::with_classes(3), 1).unwrap();
    let tc = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (out, hist) = train(&m, &ds, &ds.subset(&[]), &tc, 0).unwrap();
    assert_eq!(out, m);
    assert!(hist.train_loss.is_empty());
}

#[test]
fn empty_training_set_is_data_error() {
    let ds = synth_dataset(SynthKind::Classify3, 3, 64, 1).unwrap();
    let m = build_model(&BrainReNetConfig::with_classes(3), 1).unwrap();
    let empty = ds.subset(&[]);
    assert!(matches!(
        train(&m, &empty, &empty, &TrainConfig::default(), 0),
        Err(Error::Data(_))
    ));
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    // 600-sample three-class shape set
    let ds = synth_dataset(SynthKind::Classify3, 200, 64, 42).unwrap();
    let m = build_model(&BrainReNetConfig::with_classes(3), 42).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        augment: None,
        ..TrainConfig::default()
    };
    let empty = ds.subset(&[]);
    let (a, hist) = train(&m, &ds, &empty, &tc, 9).unwrap();
    assert_eq!(hist.train_loss.len(), 2);
    assert!(hist.train_loss[1] < hist.train_loss[0], "{:?}", hist.train_loss);
    let small = ds.subset(&(0..40).collect::<Vec<_>>());
    let tc1 = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (b1, _) = train(&m, &small, &empty, &tc1, 9).unwrap();
    let (b2, _) = train(&m, &small, &empty, &tc1, 9).unwrap();
    assert_eq!(encode_model(&b1).unwrap(), encode_model(&b2).unwrap());
    assert_ne!(a, m);
}

#[test]
fn deep_features_match_forward_and_rows_are_independent() {
    let ds = synth_dataset(SynthKind::Detect2, 3, 64, 5).unwrap();
    let m = build_model(&BrainReNetConfig::default(), 3).unwrap();
    let f = extract_deep_features(&m, &ds.images, &ds.labels).unwrap();
    assert_eq!(f.dim(), 128);
    let refs: Vec<_> = ds.images.iter().collect();
    let (_, fc1) = m.infer(&images_to_batch(&refs).unwrap()).unwrap();
    assert_eq!(f.values(), fc1.data());
    let one = extract_deep_features(&m, &ds.images[2..3], &ds.labels[2..3]).unwrap();
    assert_eq!(one.row(0), f.row(2));
    assert_eq!(extract_deep_features(&m, &ds.images, &ds.labels).unwrap(), f);
}
