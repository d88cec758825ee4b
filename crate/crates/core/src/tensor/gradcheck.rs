//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Tensor};
use crate::error::Result;

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input_rel_error: f64,
    pub param_rel_error: f64,
    pub checked: usize,
}

/// Compare `analytic` against central differences of `f` at `point`.
///
/// Returns the largest relative error over all coordinates.
pub fn compare_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Check every input and parameter gradient of `layer` at `input`.
///
/// The scalar objective is `sum(R * layer(x))` for a fixed random projection
/// `R` drawn from `seed`, so the upstream gradient is `R`.
pub fn grad_check(layer: &Layer, input: &Tensor, eps: f64, seed: u64) -> Result<GradCheckReport> {
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2]");
    let mut probe = layer.clone();
    let (out, cache) = probe.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let (input_grad, param_grads) = layer.backward(&cache, &proj)?;

    let objective = |l: &Layer, x: &Tensor| -> f64 {
        let mut l = l.clone();
        let (y, _) = l.forward(x).expect("forward failed during gradient check");
        y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };

    let shape = input.shape().to_vec();
    let input_err = compare_gradient(
        |x| objective(layer, &Tensor::new(shape.clone(), x.to_vec()).unwrap()),
        input.data(),
        input_grad.data(),
        eps,
    );
    let mut checked = input.len();

    let mut param_err: f64 = 0.0;
    for (pi, grad) in param_grads.iter().enumerate() {
        let base = layer.params()[pi].to_vec();
        checked += base.len();
        let err = compare_gradient(
            |p| {
                let mut l = layer.clone();
                l.params_mut()[pi].copy_from_slice(p);
                objective(&l, input)
            },
            &base,
            grad,
            eps,
        );
        param_err = param_err.max(err);
    }

    Ok(GradCheckReport {
        max_rel_error: input_err.max(param_err),
        input_rel_error: input_err,
        param_rel_error: param_err,
        checked,
    })
}
