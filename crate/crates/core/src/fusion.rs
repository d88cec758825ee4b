//! Feature-space composition: concatenation of aligned feature matrices,
//! per-dimension z-scoring, and PCA for 2-D scatter views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n x dim` row-major features with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    values: Vec<f64>,
    labels: Vec<usize>,
    pub source_tag: String,
}

impl FeatureMatrix {
    pub fn new(
        n: usize,
        dim: usize,
        values: Vec<f64>,
        labels: Vec<usize>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != n * dim {
            return Err(Error::dim(format!(
                "{n}x{dim} feature matrix needs {} values, got {}",
                n * dim,
                values.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite feature at row {}, column {}",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        Ok(FeatureMatrix {
            n,
            dim,
            values,
            labels,
            source_tag: source_tag.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, source_tag: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::dim(format!(
                "row {bad} has {} values, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat(), labels, source_tag)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        FeatureMatrix {
            n: indices.len(),
            dim: self.dim,
            values,
            labels,
            source_tag: self.source_tag.clone(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }
}

/// Column-wise concatenation of row-aligned matrices, in input order.
pub fn concat_features(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concatenation needs at least one feature matrix"))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    for (i, p) in parts.iter().enumerate().skip(1) {
        if p.n != first.n {
            return Err(Error::Alignment {
                part: i,
                message: format!("{} rows, part 0 has {}", p.n, first.n),
            });
        }
        if p.labels != first.labels {
            let row = p
                .labels
                .iter()
                .zip(&first.labels)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(Error::Alignment {
                part: i,
                message: format!("label mismatch at row {row}"),
            });
        }
    }
    let dim: usize = parts.iter().map(|p| p.dim).sum();
    let mut values = Vec::with_capacity(first.n * dim);
    for r in 0..first.n {
        for p in parts {
            values.extend_from_slice(p.row(r));
        }
    }
    let tag = parts
        .iter()
        .map(|p| p.source_tag.as_str())
        .collect::<Vec<_>>()
        .join("+");
    FeatureMatrix::new(first.n, dim, values, first.labels.clone(), tag)
}

/// Per-dimension mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns with a standard deviation below this map to zero.
pub const MIN_STD: f64 = 1e-12;

impl NormalizerStats {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        if x.n == 0 {
            return Err(Error::data("cannot fit a normalizer on an empty matrix"));
        }
        let n = x.n as f64;
        let mut mean = vec![0.0; x.dim];
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.dim];
        for row in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(NormalizerStats { dim: x.dim, mean, std })
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.dim != self.dim {
            return Err(Error::dim(format!(
                "normalizer fitted on {} dims, matrix has {}",
                self.dim, x.dim
            )));
        }
        let mut values = Vec::with_capacity(x.values.len());
        for row in x.rows() {
            for ((v, m), s) in row.iter().zip(&self.mean).zip(&self.std) {
                values.push(if *s < MIN_STD { 0.0 } else { (v - m) / s });
            }
        }
        FeatureMatrix::new(x.n, x.dim, values, x.labels.clone(), x.source_tag.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `k` unit vectors of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues (`n - 1` denominator), non-increasing.
    pub explained_variance: Vec<f64>,
    /// `n x k` projections of the centred rows.
    pub projections: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub total_variance: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PcaOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

pub fn pca_top_k(x: &FeatureMatrix, k: usize) -> Result<PcaResult> {
    pca_top_k_with(x, k, PcaOptions::default())
}

/// Top-`k` principal components by deflated power iteration.
///
/// Works on the `dim x dim` covariance when `dim <= n`, otherwise on the
/// `n x n` Gram matrix of the centred rows.
pub fn pca_top_k_with(x: &FeatureMatrix, k: usize, opts: PcaOptions) -> Result<PcaResult> {
    let (n, dim) = (x.n, x.dim);
    if k == 0 || n < 2 || k > (n - 1).min(dim) {
        return Err(Error::config(format!(
            "k = {k} must lie in 1..=min(n - 1, dim) = {}",
            n.saturating_sub(1).min(dim)
        )));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| x.rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centred: Vec<f64> = x
        .rows()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let denom = (n - 1) as f64;
    let gram = dim > n;
    let m = if gram { n } else { dim };

    let mut a = vec![0.0; m * m];
    if gram {
        for i in 0..n {
            for j in i..n {
                let v = dot(&centred[i * dim..(i + 1) * dim], &centred[j * dim..(j + 1) * dim]) / denom;
                a[i * m + j] = v;
                a[j * m + i] = v;
            }
        }
    } else {
        for r in 0..n {
            let row = &centred[r * dim..(r + 1) * dim];
            for i in 0..dim {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..dim {
                    a[i * m + j] += ri * row[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                a[i * m + j] /= denom;
                a[j * m + i] = a[i * m + j];
            }
        }
    }
    let total_variance: f64 = (0..m).map(|i| a[i * m + i]).sum();
    let scale = total_variance.max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalise(&mut v, &vecs);
        normalise(&mut v);
        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iter {
            let mut w = matvec(&a, &v, m);
            lambda = dot(&v, &w);
            residual = w
                .iter()
                .zip(&v)
                .map(|(wi, vi)| (wi - lambda * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= opts.tol * scale {
                break;
            }
            orthogonalise(&mut w, &vecs);
            if normalise(&mut w) == 0.0 {
                // remaining spectrum is zero; keep the orthogonal start vector
                residual = 0.0;
                lambda = 0.0;
                break;
            }
            v = w;
        }
        if residual > opts.tol * scale {
            return Err(Error::Convergence {
                message: format!(
                    "power iteration for component {} hit {} iterations",
                    vecs.len() + 1,
                    opts.max_iter
                ),
                residual: residual / scale,
            });
        }
        // deflate
        for i in 0..m {
            for j in 0..m {
                a[i * m + j] -= lambda * v[i] * v[j];
            }
        }
        values.push(lambda.max(0.0));
        vecs.push(v);
    }

    let mut components: Vec<Vec<f64>> = if gram {
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        for u in &vecs {
            let mut c = vec![0.0; dim];
            for (i, &ui) in u.iter().enumerate() {
                for (cj, xj) in c.iter_mut().zip(&centred[i * dim..(i + 1) * dim]) {
                    *cj += ui * xj;
                }
            }
            orthogonalise(&mut c, &comps);
            if normalise(&mut c) < 1e-300 {
                c = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                orthogonalise(&mut c, &comps);
                normalise(&mut c);
            }
            comps.push(c);
        }
        comps
    } else {
        vecs
    };

    for c in &mut components {
        let (imax, _) = c.iter().enumerate().fold(
            (0, 0.0),
            |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) },
        );
        if c[imax] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }

    let projections = (0..n)
        .map(|r| {
            components
                .iter()
                .map(|c| dot(&centred[r * dim..(r + 1) * dim], c))
                .collect()
        })
        .collect();

    Ok(PcaResult {
        components,
        explained_variance: values,
        projections,
        mean,
        total_variance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(a: &[f64], v: &[f64], m: usize) -> Vec<f64> {
    a.chunks_exact(m).map(|row| dot(row, v)).collect()
}

fn orthogonalise(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Normalise in place; returns the original norm.
fn normalise(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]], labels: &[usize]) -> FeatureMatrix {
        FeatureMatrix::from_rows(
            &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            labels.to_vec(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn concat_dims_and_order() {
        let a = fm(&[&[1.0], &[2.0]], &[0, 1]);
        let b = fm(&[&[3.0, 4.0], &[5.0, 6.0]], &[0, 1]);
        let c = concat_features(&[a.clone(), b]).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.values(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(concat_features(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn concat_label_mismatch() {
        let a = fm(&[&[1.0], &[2.0]], &[0, 1]);
        let b = fm(&[&[1.0], &[2.0]], &[1, 1]);
        assert!(matches!(
            concat_features(&[a, b]),
            Err(Error::Alignment { part: 1, .. })
        ));
    }

    #[test]
    fn normalize_uses_train_stats() {
        let train = fm(&[&[0.0, 5.0], &[2.0, 5.0]], &[0, 1]);
        let stats = NormalizerStats::fit(&train).unwrap();
        let z = stats.apply(&train).unwrap();
        assert_eq!(z.values(), &[-1.0, 0.0, 1.0, 0.0]);
        let held = fm(&[&[4.0, 7.0]], &[0]);
        assert_eq!(stats.apply(&held).unwrap().values(), &[3.0, 0.0]);
        assert!(stats.apply(&fm(&[&[1.0]], &[0])).is_err());
    }

    #[test]
    fn pca_on_a_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let x = FeatureMatrix::from_rows(&rows, vec![0; 10], "line").unwrap();
        let p = pca_top_k(&x, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((p.components[0][0] - s).abs() < 1e-9 && (p.components[0][1] - s).abs() < 1e-9);
        assert!(p.explained_variance[1].abs() < 1e-9);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-8);
    }

    #[test]
    fn pca_one_dimensional_variance() {
        let vals = [1.0, 4.0, 2.0, 8.0, 5.0];
        let x = FeatureMatrix::new(5, 1, vals.to_vec(), vec![0; 5], "1d").unwrap();
        let p = pca_top_k(&x, 1).unwrap();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((p.explained_variance[0] - var).abs() < 1e-9);
    }

    #[test]
    fn pca_rejects_large_k() {
        let x = FeatureMatrix::new(3, 2, vec![0.0; 6], vec![0; 3], "z").unwrap();
        assert!(matches!(pca_top_k(&x, 3), Err(Error::Config(_))));
    }
}
