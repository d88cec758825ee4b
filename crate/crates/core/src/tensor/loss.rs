use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor,
    /// Gradient of `loss` with respect to the logits: `(probs - onehot) / N`.
    pub grad: Tensor,
}

fn softmax_row(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    // log-sum-exp, returned so callers get a stable log-probability
    max + sum.ln()
}

/// Row-wise softmax of a `[N, C]` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        softmax_row(logits.row(i), &mut out[i * c..(i + 1) * c]);
    }
    Ok(logits.with_shape_of(out))
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label {
            label: bad as i64,
            classes: c,
        });
    }
    let mut probs = vec![0.0; n * c];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = softmax_row(row, &mut probs[i * c..(i + 1) * c]);
        loss += lse - row[label];
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        grad[i * c + label] -= 1.0;
        for g in &mut grad[i * c..(i + 1) * c] {
            *g *= inv_n;
        }
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        probs: logits.with_shape_of(probs),
        grad: logits.with_shape_of(grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = Tensor::filled(&[2, 3], 0.4);
        let out = softmax_cross_entropy(&l, &[0, 2]).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_class() {
        let l = Tensor::new(vec![1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&l, &[0]).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.probs.is_finite());
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            softmax_cross_entropy(&l, &[2]),
            Err(Error::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn rows_sum_to_one() {
        let l = Tensor::from_fn(&[4, 5], |i| (i as f64 * 1.7).sin() * 30.0);
        let p = softmax_rows(&l).unwrap();
        for i in 0..4 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
