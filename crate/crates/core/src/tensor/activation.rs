use rand::Rng;

use super::{Mode, Tensor};
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::State(format!(
            "relu backward: input {:?} vs upstream {:?}",
            input.shape(),
            upstream.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(input.with_shape_of(data))
}

/// Inverted dropout. Returns the output and the multiplicative mask applied
/// (`None` when the layer is an identity).
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((input.with_shape_of(data), Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, upstream: &Tensor) -> Tensor {
    match mask {
        None => upstream.clone(),
        Some(m) => upstream.with_shape_of(upstream.data().iter().zip(m).map(|(g, m)| g * m).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[10], |i| i as f64);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.9, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let x = Tensor::filled(&[n], 1.0);
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // each element is 0 or 2 with p = 1/2, so sigma of the mean is 1/sqrt(n)
        let sigma = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }
}
