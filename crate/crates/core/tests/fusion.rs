use hybridboost::fusion::*;
use hybridboost::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn matrix(rows: &[Vec<f64>], tag: &str) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows, (0..rows.len()).map(|i| i % 2).collect(), tag).unwrap()
}

proptest! {
    #[test]
    fn concat_rows_are_joined_in_order(
        a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..10),
        w in 1usize..4,
    ) {
        let b: Vec<Vec<f64>> = a.iter().map(|r| (0..w).map(|j| r[0] * j as f64).collect()).collect();
        let f = concat_features(&[matrix(&a, "a"), matrix(&b, "b")]).unwrap();
        prop_assert_eq!(f.dim(), 3 + w);
        for (i, row) in f.rows().enumerate() {
            prop_assert_eq!(&row[..3], a[i].as_slice());
            prop_assert_eq!(&row[3..], b[i].as_slice());
        }
    }

    #[test]
    fn zscore_centres_and_scales_fitted_rows(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 2..30)
    ) {
        let x = matrix(&rows, "x");
        let z = NormalizerStats::fit(&x).unwrap().apply(&x).unwrap();
        let n = x.n() as f64;
        for j in 0..4 {
            let col: Vec<f64> = z.rows().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var.abs() < 1e-12 || (var - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn misaligned_parts_name_the_culprit() {
    let a = matrix(&[vec![1.0], vec![2.0]], "a");
    let b = matrix(&[vec![1.0]], "b");
    assert!(matches!(
        concat_features(&[a.clone(), b]),
        Err(Error::Alignment { part: 1, .. })
    ));
    let relabelled = FeatureMatrix::new(2, 1, vec![0.0, 0.0], vec![1, 1], "c").unwrap();
    assert!(matches!(
        concat_features(&[a, relabelled]),
        Err(Error::Alignment { part: 1, .. })
    ));
}

#[test]
fn constant_columns_normalise_to_zero() {
    let x = matrix(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 4.0]], "x");
    let z = NormalizerStats::fit(&x).unwrap().apply(&x).unwrap();
    assert!(z.rows().all(|r| r[0] == 0.0));
}

#[test]
fn stats_fitted_on_one_set_apply_to_another() {
    let fit = matrix(&[vec![0.0], vec![2.0]], "x");
    let s = NormalizerStats::fit(&fit).unwrap();
    let other = matrix(&[vec![4.0]], "x");
    assert_eq!(s.apply(&other).unwrap().values(), [3.0]);
    assert!(matches!(
        s.apply(&matrix(&[vec![1.0, 2.0]], "y")),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn pca_finds_the_long_axis_of_an_anisotropic_cloud() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wide = Normal::new(0.0, 5.0).unwrap();
    let narrow = Normal::new(0.0, 0.5).unwrap();
    let (c, s) = (0.6f64, 0.8f64);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let (u, v) = (wide.sample(&mut rng), narrow.sample(&mut rng));
            vec![c * u - s * v + 10.0, s * u + c * v - 3.0, narrow.sample(&mut rng)]
        })
        .collect();
    let p = pca_top_k(&matrix(&rows, "cloud"), 2).unwrap();
    let pc1 = &p.components[0];
    assert!((pc1[0] * c + pc1[1] * s).abs() > 0.999, "{pc1:?}");
    assert!(p.explained_variance[0] > 20.0 && p.explained_variance[1] < 0.5);
    assert!(p.explained_variance[0] >= p.explained_variance[1]);
    let dot: f64 = p.components[0].iter().zip(&p.components[1]).map(|(a, b)| a * b).sum();
    assert!(dot.abs() < 1e-6);
    assert_eq!(p.projections.len(), 400);
}

#[test]
fn pca_rejects_impossible_k() {
    let x = matrix(&[vec![1.0, 2.0], vec![3.0, 1.0]], "x");
    assert!(matches!(pca_top_k(&x, 2), Err(Error::Config(_))));
}
