//! Principal component analysis over pooled training features.
//!
//! The covariance eigendecomposition uses cyclic Jacobi rotations, which
//! is plenty at the 51-dimension scale of this pipeline and has no
//! platform-dependent branching, so fitted transforms are reproducible
//! byte for byte.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Affine orthogonal projection fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    /// Column means of the training pool, length D.
    pub mean: Vec<f64>,
    /// d basis vectors of length D each (row i is the i-th component).
    pub basis: Vec<Vec<f64>>,
    /// Variances along the basis vectors, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl PcaTransform {
    /// Identity transform: zero mean, canonical basis. Used when the
    /// reduction stage is disabled so models keep a uniform layout.
    pub fn identity(dim: usize) -> Self {
        let basis = (0..dim)
            .map(|i| {
                let mut row = vec![0.0; dim];
                row[i] = 1.0;
                row
            })
            .collect();
        PcaTransform {
            mean: vec![0.0; dim],
            basis,
            eigenvalues: vec![1.0; dim],
            input_dim: dim,
            output_dim: dim,
        }
    }

    /// Keep only the leading `d` components.
    pub fn truncate(&self, d: usize) -> PcaTransform {
        let d = d.min(self.output_dim);
        PcaTransform {
            mean: self.mean.clone(),
            basis: self.basis[..d].to_vec(),
            eigenvalues: self.eigenvalues[..d].to_vec(),
            input_dim: self.input_dim,
            output_dim: d,
        }
    }

    /// y = B (x - mean).
    pub fn project_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch(x.len(), self.input_dim));
        }
        Ok(self
            .basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((bi, xi), mi)| bi * (xi - mi))
                    .sum()
            })
            .collect())
    }

    /// x = B^T y + mean; exact only when no components were discarded.
    pub fn reconstruct_row(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim {
            return Err(Error::DimMismatch(y.len(), self.output_dim));
        }
        let mut x = self.mean.clone();
        for (b, &yi) in self.basis.iter().zip(y) {
            for (xj, &bj) in x.iter_mut().zip(b) {
                *xj += yi * bj;
            }
        }
        Ok(x)
    }
}

/// Fit a full-rank transform (d = D) from pooled training frames.
pub fn fit_pca(data: &FeatureMatrix) -> Result<PcaTransform> {
    let t = data.n_frames();
    let d = data.n_dims();
    if t == 0 || d == 0 {
        return Err(Error::EmptyUtterance);
    }
    if t <= d {
        log::warn!("fitting PCA on {t} frames for {d} dims; covariance will be rank deficient");
    }

    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);

    // sample covariance, divisor T-1
    let denom = if t > 1 { (t - 1) as f64 } else { 1.0 };
    let mut cov = vec![vec![0.0; d]; d];
    for row in data.iter_rows() {
        let centered: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += centered[i] * centered[j] / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    if cov.iter().enumerate().all(|(i, row)| row[i] <= 0.0) {
        return Err(Error::DegenerateData);
    }

    let (mut eigenvalues, mut vectors) = jacobi_eigen(&mut cov);

    // sort by eigenvalue, descending; ties keep original order
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap().then(a.cmp(&b)));
    eigenvalues = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    vectors = order.iter().map(|&i| vectors[i].clone()).collect();

    // sign convention: the largest-magnitude entry of each vector is positive
    for v in vectors.iter_mut() {
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(PcaTransform {
        mean,
        basis: vectors,
        eigenvalues,
        input_dim: d,
        output_dim: d,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors-as-rows), unsorted.
fn jacobi_eigen(m: &mut [Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = m.len();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row = vec![0.0; d];
            row[i] = 1.0;
            row
        })
        .collect();
    let scale: f64 = m
        .iter()
        .enumerate()
        .map(|(i, row)| row[i].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .map(|i| (i + 1..d).map(|j| m[i][j] * m[i][j]).sum::<f64>())
            .sum();
        if off.sqrt() <= 1e-12 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                // tangent of the rotation angle, the smaller root
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vpk = v[p][k];
                    let vqk = v[q][k];
                    v[p][k] = c * vpk - s * vqk;
                    v[q][k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| m[i][i]).collect();
    (eigenvalues, v)
}

/// Pick the output dimension: `fixed_d` wins when given, otherwise the
/// smallest d whose eigenvalue mass reaches `retention`.
pub fn choose_dimension(eigenvalues: &[f64], retention: f64, fixed_d: Option<usize>) -> usize {
    let dim = eigenvalues.len();
    if let Some(d) = fixed_d {
        return d.clamp(1, dim);
    }
    let positive = eigenvalues.iter().filter(|&&l| l > 0.0).count().max(1);
    if retention >= 1.0 {
        return positive;
    }
    let total: f64 = eigenvalues.iter().filter(|l| **l > 0.0).sum();
    if total <= 0.0 {
        return positive;
    }
    let mut acc = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        acc += l.max(0.0);
        if acc / total >= retention {
            return i + 1;
        }
    }
    dim
}

/// Project every frame through the (possibly truncated) transform.
pub fn project(t: &PcaTransform, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.n_dims() != t.input_dim {
        return Err(Error::DimMismatch(m.n_dims(), t.input_dim));
    }
    let rows: Result<Vec<Vec<f64>>> = m.iter_rows().map(|r| t.project_row(r)).collect();
    let labels = (1..=t.output_dim).map(|i| format!("p{i}")).collect();
    FeatureMatrix::from_rows(rows?, labels, m.frame_hop_ms)
}
