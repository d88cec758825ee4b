//! AdaBoost.M1 over axis-aligned decision stumps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;

/// Smallest weighted error used when computing a round's vote weight.
pub const EPS_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostConfig {
    pub rounds: usize,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig { rounds: 50 }
    }
}

/// Predicts `polarity` when `x[feature] > threshold`, else `-polarity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: f64,
    pub alpha: f64,
}

impl Stump {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        if x[self.feature] > self.threshold {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

/// Per-round bookkeeping from training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoostTrace {
    /// Weighted error of each retained stump, before clamping.
    pub errors: Vec<f64>,
    /// Sum of the sample weights after each round's renormalization.
    pub weight_sums: Vec<f64>,
    /// Unweighted training error of the ensemble after each round.
    pub training_error: Vec<f64>,
}

/// A binary boosted machine over `+1 / -1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedStumps {
    pub dim: usize,
    pub stumps: Vec<Stump>,
}

impl BoostedStumps {
    pub fn rounds(&self) -> usize {
        self.stumps.len()
    }

    /// `sum alpha_t h_t(x)`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.margin_upto(x, self.stumps.len())
    }

    pub fn margin_upto(&self, x: &[f64], rounds: usize) -> f64 {
        self.stumps[..rounds.min(self.stumps.len())]
            .iter()
            .map(|s| s.alpha * s.predict(x))
            .sum()
    }
}

struct SortedColumns {
    /// Per feature, row indices in ascending value order.
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    fn new(x: &FeatureMatrix) -> Self {
        let order = crate::par::map_range(x.dim(), |f| {
            let mut idx: Vec<u32> = (0..x.n() as u32).collect();
            idx.sort_by(|&a, &b| x.row(a as usize)[f].total_cmp(&x.row(b as usize)[f]).then(a.cmp(&b)));
            idx
        });
        SortedColumns { order }
    }
}

/// Lowest-error stump for weights `w`; ties keep the first feature and threshold.
fn best_stump(x: &FeatureMatrix, y: &[f64], w: &[f64], cols: &SortedColumns) -> (Stump, f64) {
    let w_pos: f64 = y.iter().zip(w).filter(|(&t, _)| t > 0.0).map(|(_, &v)| v).sum();
    let w_neg: f64 = y.iter().zip(w).filter(|(&t, _)| t < 0.0).map(|(_, &v)| v).sum();
    let per_feature = crate::par::map_range(x.dim(), |f| {
        let idx = &cols.order[f];
        let value = |k: usize| x.row(idx[k] as usize)[f];
        // threshold below every value: the whole set is on the right
        let mut best = (w_neg, value(0) - 1.0, 1.0);
        if w_pos < best.0 {
            best = (w_pos, value(0) - 1.0, -1.0);
        }
        let (mut l_pos, mut l_neg) = (0.0, 0.0);
        for k in 0..idx.len() {
            let i = idx[k] as usize;
            if y[i] > 0.0 {
                l_pos += w[i];
            } else {
                l_neg += w[i];
            }
            let v = value(k);
            let next = if k + 1 < idx.len() { value(k + 1) } else { f64::INFINITY };
            if next == v {
                continue;
            }
            let threshold = if next.is_finite() { v + (next - v) / 2.0 } else { v };
            let err_up = l_pos + (w_neg - l_neg);
            let err_down = l_neg + (w_pos - l_pos);
            if err_up < best.0 {
                best = (err_up, threshold, 1.0);
            }
            if err_down < best.0 {
                best = (err_down, threshold, -1.0);
            }
        }
        best
    });
    let (f, &(err, threshold, polarity)) = per_feature
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &(f64, f64, f64))>, (f, b)| match acc {
            Some((_, a)) if a.0 <= b.0 => acc,
            _ => Some((f, b)),
        })
        .expect("at least one feature");
    (
        Stump {
            feature: f,
            threshold,
            polarity,
            alpha: 0.0,
        },
        err.max(0.0),
    )
}

fn check_binary(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::data(format!("AdaBoost labels must be +1/-1, found {v}")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Degenerate("AdaBoost needs both classes present".into()));
    }
    Ok(())
}

pub fn adaboost_m1_train(x: &FeatureMatrix, y: &[f64], config: &AdaBoostConfig) -> Result<BoostedStumps> {
    adaboost_m1_trace(x, y, config).map(|(m, _)| m)
}

/// Train and also return the per-round trace.
pub fn adaboost_m1_trace(x: &FeatureMatrix, y: &[f64], config: &AdaBoostConfig) -> Result<(BoostedStumps, BoostTrace)> {
    if y.len() != x.n() {
        return Err(Error::dim(format!("{} labels for {} rows", y.len(), x.n())));
    }
    if x.dim() == 0 {
        return Err(Error::data("AdaBoost needs at least one feature"));
    }
    check_binary(y)?;
    let cols = SortedColumns::new(x);
    boost(x, y, config, &cols)
}

fn boost(
    x: &FeatureMatrix,
    y: &[f64],
    config: &AdaBoostConfig,
    cols: &SortedColumns,
) -> Result<(BoostedStumps, BoostTrace)> {
    let n = x.n();
    let mut w = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    let mut trace = BoostTrace::default();
    let mut margin = vec![0.0; n];
    for _ in 0..config.rounds {
        let (mut stump, err) = best_stump(x, y, &w, cols);
        if err >= 0.5 {
            break;
        }
        let eps = err.max(EPS_FLOOR);
        stump.alpha = 0.5 * ((1.0 - eps) / eps).ln();
        for i in 0..n {
            let h = stump.predict(x.row(i));
            w[i] *= (-stump.alpha * y[i] * h).exp();
            margin[i] += stump.alpha * h;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        stumps.push(stump);
        trace.errors.push(err);
        trace.weight_sums.push(w.iter().sum());
        let wrong = margin.iter().zip(y).filter(|(&m, &t)| (m > 0.0) != (t > 0.0)).count();
        trace.training_error.push(wrong as f64 / n as f64);
        if err == 0.0 {
            break;
        }
    }
    if stumps.is_empty() {
        log::warn!("AdaBoost found no stump better than chance");
    }
    Ok((BoostedStumps { dim: x.dim(), stumps }, trace))
}

/// Multiclass AdaBoost: a single machine for two classes (class 1 positive),
/// one-vs-rest machines otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaBoostModel {
    pub classes: usize,
    pub machines: Vec<BoostedStumps>,
}

impl AdaBoostModel {
    pub fn dim(&self) -> usize {
        self.machines[0].dim
    }

    /// `n x classes` scores; for two classes the row is `[-margin, margin]`.
    pub fn scores(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if x.dim() != self.dim() {
            return Err(Error::dim(format!(
                "AdaBoost trained on {} features, input has {}",
                self.dim(),
                x.dim()
            )));
        }
        Ok(x.rows()
            .map(|r| {
                if self.classes == 2 {
                    let m = self.machines[0].margin(r);
                    vec![-m, m]
                } else {
                    self.machines.iter().map(|b| b.margin(r)).collect()
                }
            })
            .collect())
    }
}

pub fn adaboost_train(x: &FeatureMatrix, classes: usize, config: &AdaBoostConfig) -> Result<AdaBoostModel> {
    if classes < 2 {
        return Err(Error::Degenerate("AdaBoost needs at least 2 classes".into()));
    }
    if x.dim() == 0 {
        return Err(Error::data("AdaBoost needs at least one feature"));
    }
    if let Some(&bad) = x.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Label {
            label: bad as i64,
            classes,
        });
    }
    let cols = SortedColumns::new(x);
    let targets: Vec<usize> = if classes == 2 { vec![1] } else { (0..classes).collect() };
    let machines = targets
        .into_iter()
        .map(|c| {
            let y: Vec<f64> = x.labels().iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            check_binary(&y)?;
            boost(x, &y, config, &cols).map(|(m, _)| m)
        })
        .collect::<Result<_>>()?;
    Ok(AdaBoostModel { classes, machines })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec(), vec![0; xs.len()], "1d").unwrap()
    }

    #[test]
    fn separable_needs_one_round() {
        let x = line(&[0.0, 1.0, 2.0, 3.0]);
        let (m, t) = adaboost_m1_trace(&x, &[-1.0, -1.0, 1.0, 1.0], &AdaBoostConfig::default()).unwrap();
        assert_eq!(m.rounds(), 1);
        assert_eq!(t.errors[0], 0.0);
        assert_eq!(t.training_error[0], 0.0);
        let alpha = m.stumps[0].alpha;
        assert!(alpha.is_finite());
        assert!((alpha - 0.5 * ((1.0 - EPS_FLOOR) / EPS_FLOOR).ln()).abs() < 1e-12);
        assert_eq!(m.stumps[0].threshold, 1.5);
    }

    #[test]
    fn interleaved_improves() {
        let xs: Vec<f64> = (0..12).map(f64::from).collect();
        let y = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let (_, t) = adaboost_m1_trace(&line(&xs), &y, &AdaBoostConfig { rounds: 10 }).unwrap();
        assert!(t.errors.iter().all(|&e| e < 0.5));
        assert!(t.weight_sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(t.training_error.last().unwrap() < &t.training_error[0]);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            adaboost_m1_train(&line(&[0.0, 1.0]), &[1.0, 1.0], &AdaBoostConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
