//! Soft-margin SVM trained by two-coordinate SMO.
//!
//! Each step updates the maximal violating pair of the dual. Training stops
//! once the pair gap `max_{I_up} -y G - min_{I_low} -y G` is at most `tol`,
//! which bounds every point's KKT residual `|y f(x) - 1|` violation by
//! `tol / 2`. The bias is the midpoint of the feasible interval.

use serde::{Deserialize, Serialize};

use super::kernel::{kernel_matrix, KernelSpec};
use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kernel: KernelSpec,
    pub c: f64,
    pub tol: f64,
    /// Iteration cap in units of `n` pair updates.
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: KernelSpec::Linear,
            c: 1.0,
            tol: 1e-3,
            max_passes: 50,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config(format!("SVM C must be positive, got {}", self.c)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::config(format!("SVM tol must be positive, got {}", self.tol)));
        }
        if self.max_passes == 0 {
            return Err(Error::config("SVM max_passes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub dim: usize,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    /// Support vectors, `support_indices.len() x dim` row-major.
    pub support_vectors: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    /// Final maximal-violating-pair gap.
    pub gap: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for (sv, &c) in self.support_vectors.chunks_exact(self.dim.max(1)).zip(&self.dual_coef) {
            f += c * self.kernel.eval(sv, x);
        }
        f + self.bias
    }

    /// `alpha` for each of the `n` training rows (zero off the support set).
    pub fn alphas(&self, n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n];
        for (&i, &c) in self.support_indices.iter().zip(&self.dual_coef) {
            a[i] = c.abs();
        }
        a
    }
}

/// Decision values for every row of `x`.
pub fn svm_decision(model: &SvmModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.dim() != model.dim {
        return Err(Error::dim(format!(
            "SVM trained on {} features, input has {}",
            model.dim,
            x.dim()
        )));
    }
    let rows: Vec<&[f64]> = x.rows().collect();
    Ok(par::map_slice(&rows, |r| model.decision(r)))
}

/// Largest KKT violation of `model` on its own training data.
pub fn kkt_violation(model: &SvmModel, x: &FeatureMatrix, y: &[f64]) -> Result<f64> {
    let f = svm_decision(model, x)?;
    let alpha = model.alphas(x.n());
    Ok(f.iter()
        .zip(y)
        .zip(&alpha)
        .map(|((&fi, &yi), &a)| {
            let r = yi * fi - 1.0;
            let low = if a < model.c { (-r).max(0.0) } else { 0.0 };
            let high = if a > 0.0 { r.max(0.0) } else { 0.0 };
            low.max(high)
        })
        .fold(0.0, f64::max))
}

fn check_labels(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::data(format!("binary SVM labels must be +1/-1, found {v}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Degenerate("SVM training needs both classes present".into()));
    }
    Ok(())
}

/// Train on `x` with `+1 / -1` labels `y`.
pub fn svm_train_binary(x: &FeatureMatrix, y: &[f64], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    if y.len() != x.n() {
        return Err(Error::dim(format!("{} labels for {} rows", y.len(), x.n())));
    }
    check_labels(y)?;
    let kernel = config.kernel.resolve(x.dim())?;
    let rows: Vec<&[f64]> = x.rows().collect();
    let k = kernel_matrix(&kernel, &rows);
    Ok(smo_with_kernel(x, &k, y, kernel, config))
}

pub(crate) fn smo_with_kernel(
    x: &FeatureMatrix,
    k: &[f64],
    y: &[f64],
    kernel: KernelSpec,
    config: &SvmConfig,
) -> SvmModel {
    let n = y.len();
    let c = config.c;
    let mut alpha = vec![0.0; n];
    // gradient of the dual objective: G = Q alpha - 1
    let mut grad = vec![-1.0; n];
    let max_iter = config.max_passes.saturating_mul(n.max(1));
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let select = |alpha: &[f64], grad: &[f64]| {
        let mut up = (usize::MAX, f64::NEG_INFINITY);
        let mut low = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > up.1 {
                up = (t, v);
            }
            if in_low(alpha[t], y[t]) && v < low.1 {
                low = (t, v);
            }
        }
        (up, low)
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut gap: f64;
    loop {
        let ((i, vi), (j, vj)) = select(&alpha, &grad);
        if i == usize::MAX || j == usize::MAX {
            gap = 0.0;
            converged = true;
            break;
        }
        gap = vi - vj;
        if gap <= config.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let eta = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = (gap / eta).min(room_i).min(room_j);

        alpha[i] = if step == room_i {
            if y[i] > 0.0 {
                c
            } else {
                0.0
            }
        } else {
            alpha[i] + y[i] * step
        };
        alpha[j] = if step == room_j {
            if y[j] > 0.0 {
                0.0
            } else {
                c
            }
        } else {
            alpha[j] - y[j] * step
        };
        let (ki, kj) = (&k[i * n..(i + 1) * n], &k[j * n..(j + 1) * n]);
        for t in 0..n {
            grad[t] += y[t] * step * (ki[t] - kj[t]);
        }
    }

    let ((_, m_up), (_, m_low)) = select(&alpha, &grad);
    let bias = match (m_up.is_finite(), m_low.is_finite()) {
        (true, true) => (m_up + m_low) / 2.0,
        (true, false) => m_up,
        (false, true) => m_low,
        (false, false) => 0.0,
    };
    if !converged {
        log::warn!(
            "SMO stopped after {iterations} iterations with pair gap {gap:.3e} (tol {:.1e})",
            config.tol
        );
    }

    let dim = x.dim();
    let mut support_indices = Vec::new();
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_indices.push(t);
            support_vectors.extend_from_slice(x.row(t));
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    SvmModel {
        kernel,
        c,
        dim,
        support_indices,
        support_vectors,
        dual_coef,
        bias,
        converged,
        gap,
        iterations,
    }
}

/// One-vs-rest multiclass SVM: machine `c` separates class `c` from the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSvm {
    pub classes: usize,
    pub machines: Vec<SvmModel>,
}

impl MulticlassSvm {
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    pub fn dim(&self) -> usize {
        self.machines[0].dim
    }

    /// `n x classes` decision values.
    pub fn scores(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        let per: Vec<Vec<f64>> = self
            .machines
            .iter()
            .map(|m| svm_decision(m, x))
            .collect::<Result<_>>()?;
        Ok((0..x.n()).map(|i| per.iter().map(|s| s[i]).collect()).collect())
    }
}

/// Train one machine per class on a shared kernel matrix.
pub fn one_vs_rest(x: &FeatureMatrix, config: &SvmConfig) -> Result<MulticlassSvm> {
    config.validate()?;
    let classes = x.num_classes();
    if classes < 2 {
        return Err(Error::Degenerate("one-vs-rest needs at least 2 classes".into()));
    }
    for c in 0..classes {
        if !x.labels().contains(&c) {
            return Err(Error::Degenerate(format!("class {c} has no training samples")));
        }
    }
    let kernel = config.kernel.resolve(x.dim())?;
    let rows: Vec<&[f64]> = x.rows().collect();
    let k = kernel_matrix(&kernel, &rows);
    let machines = (0..classes)
        .map(|c| {
            let y: Vec<f64> = x.labels().iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            smo_with_kernel(x, &k, &y, kernel, config)
        })
        .collect();
    Ok(MulticlassSvm { classes, machines })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[[f64; 2]], labels: &[usize]) -> FeatureMatrix {
        FeatureMatrix::from_rows(
            &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            labels.to_vec(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let x = fm(&[[-1.0, -1.0], [1.0, 1.0]], &[0, 1]);
        let m = svm_train_binary(&x, &[-1.0, 1.0], &SvmConfig::default()).unwrap();
        assert!(m.decision(&[-1.0, -1.0]) < 0.0 && m.decision(&[1.0, 1.0]) > 0.0);
        assert!(m.decision(&[0.0, 0.0]).abs() < 1e-6);
        // both points sit on the margin
        assert!((m.decision(&[1.0, 1.0]) - 1.0).abs() < 1e-3);
        assert_eq!(m.decision(&[2.0, 0.5]), -m.decision(&[-2.0, -0.5]));
    }

    #[test]
    fn xor_with_quadratic_kernel() {
        let x = fm(&[[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]], &[1, 1, 0, 0]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let cfg = SvmConfig {
            kernel: KernelSpec::polynomial(2),
            c: 10.0,
            ..SvmConfig::default()
        };
        let m = svm_train_binary(&x, &y, &cfg).unwrap();
        for (r, &t) in x.rows().zip(&y) {
            assert_eq!(m.decision(r).signum(), t);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = fm(&[[0.0, 0.0], [1.0, 1.0]], &[1, 1]);
        assert!(matches!(
            svm_train_binary(&x, &[1.0, 1.0], &SvmConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ovr_two_class_matches_binary() {
        let rows: Vec<[f64; 2]> = (0..20)
            .map(|i| [(i as f64 * 0.7).sin() + (i % 2) as f64 * 2.0, (i as f64).cos()])
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let x = fm(&rows, &labels);
        let cfg = SvmConfig::default();
        let ovr = one_vs_rest(&x, &cfg).unwrap();
        assert_eq!(ovr.machines.len(), 2);
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let bin = svm_train_binary(&x, &y, &cfg).unwrap();
        let scores = ovr.scores(&x).unwrap();
        for (s, r) in scores.iter().zip(x.rows()) {
            let ovr_label = if s[1] > s[0] { 1 } else { 0 };
            let bin_label = if bin.decision(r) > 0.0 { 1 } else { 0 };
            assert_eq!(ovr_label, bin_label);
            assert_eq!(s[0], -s[1]);
        }
    }

    #[test]
    fn missing_class_rejected() {
        let x = fm(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], &[0, 2, 2]);
        assert!(matches!(
            one_vs_rest(&x, &SvmConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
