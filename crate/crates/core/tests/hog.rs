use hybridboost::data::GrayImage;
use hybridboost::hog::*;
use hybridboost::Error;
use proptest::prelude::*;

fn textured(w: usize, h: usize, k: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| ((x * x * 3 + y * 7 + k * x * y) % 23) as f64 / 23.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn length_matches_block_grid(cw in 2usize..8, ch in 2usize..8, k in 0usize..50) {
        let cfg = HogConfig::default();
        let d = hog_descriptor(&textured(cw * 8, ch * 8, k), &cfg).unwrap();
        prop_assert_eq!(d.values.len(), (cw - 1) * (ch - 1) * 36);
        prop_assert_eq!(d.values.len(), cfg.descriptor_len(cw * 8, ch * 8).unwrap());
    }

    #[test]
    fn blocks_are_unit_or_zero(k in 0usize..200) {
        let d = hog_descriptor(&textured(32, 32, k), &HogConfig::default()).unwrap();
        for by in 0..d.blocks_y {
            for bx in 0..d.blocks_x {
                let b = d.block(by, bx);
                let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
                prop_assert!(b.iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn default_length_and_constant_image() {
    assert_eq!(HogConfig::default().descriptor_len(64, 64).unwrap(), 1764);
    let d = hog_descriptor(&GrayImage::new(64, 64, vec![0.7; 4096]).unwrap(), &HogConfig::default()).unwrap();
    assert!(d.values.iter().all(|&v| v == 0.0));
}

#[test]
fn contrast_scaling_leaves_the_descriptor_unchanged() {
    let img = textured(32, 32, 5);
    let half = GrayImage::new(32, 32, img.pixels().iter().map(|p| p * 0.5).collect()).unwrap();
    let cfg = HogConfig::default();
    let (a, b) = (
        hog_descriptor(&img, &cfg).unwrap(),
        hog_descriptor(&half, &cfg).unwrap(),
    );
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn vertical_edge_votes_in_the_horizontal_gradient_bin() {
    let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 }).unwrap();
    let cfg = HogConfig {
        block_size: 1,
        l2hys_clip: 1.0,
        ..HogConfig::default()
    };
    let d = hog_descriptor(&img, &cfg).unwrap();
    // a 0 degree gradient splits evenly between the first and last bins
    let cell = d.block(0, 0);
    assert!((cell[0] - cell[8]).abs() < 1e-12 && cell[0] > 0.0);
    assert!(cell[1..8].iter().all(|&v| v == 0.0));
}

#[test]
fn bad_geometry_is_a_config_error() {
    let cfg = HogConfig {
        bins: 1,
        ..HogConfig::default()
    };
    assert!(matches!(cfg.descriptor_len(64, 64), Err(Error::Config(_))));
    assert!(matches!(
        HogConfig::default().descriptor_len(8, 8),
        Err(Error::Config(_))
    ));
}
