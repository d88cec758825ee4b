use hybridboost::classifiers::*;
use hybridboost::fusion::FeatureMatrix;
use hybridboost::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two noisy clouds per class along a random direction.
fn clouds(n_per_class: usize, classes: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_per_class {
        for (c, centre) in centres.iter().enumerate() {
            rows.push(centre.iter().map(|m| m + rng.random_range(-0.6..0.6)).collect());
            labels.push(c);
        }
    }
    FeatureMatrix::from_rows(&rows, labels, "clouds").unwrap()
}

fn pm1(x: &FeatureMatrix) -> Vec<f64> {
    x.labels().iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

fn accuracy(pred: &[usize], x: &FeatureMatrix) -> f64 {
    pred.iter().zip(x.labels()).filter(|(a, b)| a == b).count() as f64 / x.n() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svm_dual_stays_feasible(seed in 0u64..1000, c in 0.05f64..20.0, rbf in any::<bool>()) {
        let x = clouds(15, 2, 3, seed);
        let y = pm1(&x);
        let kernel = if rbf { KernelSpec::rbf() } else { KernelSpec::Linear };
        let m = svm_train_binary(&x, &y, &SvmConfig { kernel, c, ..SvmConfig::default() }).unwrap();
        let alpha = m.alphas(x.n());
        prop_assert!(alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let balance: f64 = alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        prop_assert!(balance.abs() <= 1e-6, "sum a y = {balance}");
        if m.converged {
            prop_assert!(kkt_violation(&m, &x, &y).unwrap() <= 2.0 * 1e-3);
        }
    }

    #[test]
    fn adaboost_weights_stay_normalised(seed in 0u64..1000, rounds in 1usize..40) {
        let x = clouds(12, 2, 4, seed);
        let (machine, trace) = adaboost_m1_trace(&x, &pm1(&x), &AdaBoostConfig { rounds }).unwrap();
        prop_assert_eq!(machine.stumps.len(), trace.errors.len());
        prop_assert!(machine.stumps.len() <= rounds);
        for s in &trace.weight_sums {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        prop_assert!(trace.errors.iter().all(|&e| e < 0.5));
    }

    #[test]
    fn ensemble_vote_is_a_sound_majority(
        votes in prop::collection::vec(prop::collection::vec(0usize..3, 5), 1..6),
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<Vec<Vec<f64>>> = votes
            .iter()
            .map(|m| m.iter().map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect())
            .collect();
        let (labels, mean) = ensemble_vote(&votes, &scores, 3).unwrap();
        for i in 0..5 {
            let mut count = [0usize; 3];
            for m in &votes {
                count[m[i]] += 1;
            }
            let best = *count.iter().max().unwrap();
            prop_assert_eq!(count[labels[i]], best);
            if votes.iter().all(|m| m[i] == votes[0][i]) {
                prop_assert_eq!(labels[i], votes[0][i]);
            }
            prop_assert_eq!(mean[i].len(), 3);
        }
    }
}

#[test]
fn tie_goes_to_the_more_confident_voter_then_lowest_label() {
    let labels = vec![vec![0, 1], vec![1, 0]];
    let scores = vec![
        vec![vec![0.9, 0.1], vec![0.4, 0.6]],
        vec![vec![0.2, 0.8], vec![0.6, 0.4]],
    ];
    let (out, _) = ensemble_vote(&labels, &scores, 2).unwrap();
    // sample 0: voter for 0 has 0.9, voter for 1 has 0.8; sample 1: both 0.6
    assert_eq!(out, [0, 0]);
}

#[test]
fn empty_ensemble_is_a_config_error() {
    assert!(matches!(ensemble_vote(&[], &[], 2), Err(Error::Config(_))));
}

#[test]
fn min_max_scale_handles_constant_columns() {
    let s = min_max_scale(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]]);
    assert_eq!(s, [vec![0.0, 0.5], vec![1.0, 0.5], vec![0.5, 0.5]]);
}

#[test]
fn every_kind_learns_separable_clouds_and_round_trips() {
    let train = clouds(30, 3, 4, 11);
    let configs = [
        ClassifierConfig::Svm(SvmConfig {
            kernel: KernelSpec::rbf(),
            ..SvmConfig::default()
        }),
        ClassifierConfig::Svm(SvmConfig {
            kernel: KernelSpec::polynomial(2),
            ..SvmConfig::default()
        }),
        ClassifierConfig::Mlp(MlpConfig {
            epochs: 60,
            ..MlpConfig::default()
        }),
        ClassifierConfig::AdaBoost(AdaBoostConfig::default()),
    ];
    let mut members = Vec::new();
    for cfg in &configs {
        let model = train_classifier(&train, 3, cfg, 5).unwrap();
        let pred = classifier_predict(&model, &train).unwrap();
        assert!(accuracy(&pred.labels, &train) >= 0.9, "{}", cfg.name());
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(classifier_predict(&back, &train).unwrap(), pred, "{}", cfg.name());
        assert_eq!(encode_model(&back), bytes);
        members.push(model);
    }
    let ens = ClassifierModel::Ensemble(EnsembleModel { classes: 3, members });
    let pred = classifier_predict(&ens, &train).unwrap();
    assert!(accuracy(&pred.labels, &train) >= 0.9);
    assert_eq!(decode_model(&encode_model(&ens)).unwrap(), ens);
}

#[test]
fn mlp_is_reproducible_per_seed() {
    let x = clouds(10, 2, 3, 2);
    let cfg = MlpConfig {
        epochs: 20,
        ..MlpConfig::default()
    };
    assert_eq!(mlp_train(&x, &cfg, 9).unwrap(), mlp_train(&x, &cfg, 9).unwrap());
    assert_ne!(mlp_train(&x, &cfg, 9).unwrap(), mlp_train(&x, &cfg, 10).unwrap());
}

#[test]
fn wrong_dimension_at_prediction_is_rejected() {
    let x = clouds(5, 2, 3, 1);
    let m = train_classifier(&x, 2, &ClassifierConfig::AdaBoost(AdaBoostConfig::default()), 0).unwrap();
    let other = clouds(5, 2, 4, 1);
    assert!(matches!(classifier_predict(&m, &other), Err(Error::Dimension(_))));
}

#[test]
fn corrupted_model_files_are_named() {
    let x = clouds(5, 2, 3, 1);
    let m = train_classifier(&x, 2, &ClassifierConfig::Svm(SvmConfig::default()), 0).unwrap();
    let bytes = encode_model(&m);
    assert!(matches!(
        decode_model(&bytes[..bytes.len() - 3]),
        Err(Error::Corruption(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_model(&bad), Err(Error::Format { .. })));
}
