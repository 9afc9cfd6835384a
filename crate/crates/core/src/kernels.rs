//! Reproducing kernels, Gram matrices, and their truncated eigendecomposition.
//!
//! Continuous coordinates use the second-order Sobolev kernel on `[0, 1]`
//! written in terms of scaled Bernoulli polynomials; binary coordinates use
//! the 0/1 indicator kernel. Coordinates combine by tensor product.

use nalgebra::{DMatrix, DVector};

use crate::data::{ColumnKind, ObservationalDataset};
use crate::error::{CfbError, Result};

/// Slack allowed before an input outside `[0, 1]` is rejected.
const DOMAIN_SLACK: f64 = 1e-9;

/// Per-dimension kernel choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Second-order Sobolev kernel on `[0, 1]` (continuous coordinates).
    Sobolev2,
    /// Indicator kernel `1{s = t}` (binary coordinates).
    Indicator,
}

/// Tensor-product reproducing kernel specification, one kind per coordinate.
#[derive(Debug, Clone)]
pub struct ReproducingKernelSpec {
    dims: Vec<KernelKind>,
}

impl ReproducingKernelSpec {
    pub fn new(dims: Vec<KernelKind>) -> Self {
        Self { dims }
    }

    /// All-continuous spec of dimension `d`.
    pub fn all_sobolev(d: usize) -> Self {
        Self {
            dims: vec![KernelKind::Sobolev2; d],
        }
    }

    /// Spec matching a dataset's column kinds.
    pub fn for_dataset(ds: &ObservationalDataset) -> Self {
        let dims = ds
            .col_kinds()
            .iter()
            .map(|k| match k {
                ColumnKind::Continuous => KernelKind::Sobolev2,
                ColumnKind::Binary => KernelKind::Indicator,
            })
            .collect();
        Self { dims }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn kinds(&self) -> &[KernelKind] {
        &self.dims
    }
}

fn check_domain(v: f64) -> Result<f64> {
    if v < -DOMAIN_SLACK || v > 1.0 + DOMAIN_SLACK {
        return Err(CfbError::DomainError { value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Second-order Sobolev reproducing kernel on `[0, 1]`:
/// `1 + k1(s)k1(t) + k2(s)k2(t) - k4(|s - t|)` with
/// `k1(s) = s - 1/2`, `k2(s) = (k1^2(s) - 1/12)/2`,
/// `k4(s) = (k1^4(s) - k1^2(s)/2 + 7/240)/24`.
pub fn sobolev2_1d(s: f64, t: f64) -> Result<f64> {
    let s = check_domain(s)?;
    let t = check_domain(t)?;
    let k1 = |u: f64| u - 0.5;
    let k2 = |u: f64| (k1(u) * k1(u) - 1.0 / 12.0) / 2.0;
    let k4 = |u: f64| {
        let a = k1(u) * k1(u);
        (a * a - a / 2.0 + 7.0 / 240.0) / 24.0
    };
    Ok(1.0 + k1(s) * k1(t) + k2(s) * k2(t) - k4((s - t).abs()))
}

/// Tensor-product kernel value for two points of dimension `spec.dim()`.
pub fn tensor_kernel(x: &[f64], x2: &[f64], spec: &ReproducingKernelSpec) -> Result<f64> {
    if x.len() != spec.dim() || x2.len() != spec.dim() {
        return Err(CfbError::DimensionMismatch {
            expected: spec.dim(),
            got: if x.len() != spec.dim() {
                x.len()
            } else {
                x2.len()
            },
        });
    }
    let mut prod = 1.0;
    for (j, kind) in spec.dims.iter().enumerate() {
        match kind {
            KernelKind::Sobolev2 => prod *= sobolev2_1d(x[j], x2[j])?,
            KernelKind::Indicator => {
                if x[j] != x2[j] {
                    return Ok(0.0);
                }
            }
        }
    }
    Ok(prod)
}

/// Gram matrix `M[i][j] = kernel(X_i, X_j)`; symmetric by construction.
pub fn gram_matrix(points: &DMatrix<f64>, spec: &ReproducingKernelSpec) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    let row = |i: usize| -> Vec<f64> { (0..points.ncols()).map(|j| points[(i, j)]).collect() };
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = tensor_kernel(&rows[i], &rows[j], spec)?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Cross-Gram matrix `K[i][j] = kernel(A_i, B_j)` for prediction.
pub fn cross_gram(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    spec: &ReproducingKernelSpec,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(a.nrows(), b.nrows());
    let row_of = |mat: &DMatrix<f64>, i: usize| -> Vec<f64> {
        (0..mat.ncols()).map(|j| mat[(i, j)]).collect()
    };
    for i in 0..a.nrows() {
        let ra = row_of(a, i);
        for j in 0..b.nrows() {
            m[(i, j)] = tensor_kernel(&ra, &row_of(b, j), spec)?;
        }
    }
    Ok(m)
}

/// Eigendecomposition of a symmetric matrix with eigenpairs sorted by
/// descending eigenvalue.
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 200 * n.max(4))
        .ok_or(CfbError::EigFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
    let vectors = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    Ok((values, vectors))
}

/// Rank-truncated eigendecomposition `M ~ P diag(D) P^T` of a Gram matrix.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    m: DMatrix<f64>,
    p: DMatrix<f64>,
    d: DVector<f64>,
    tol_rel: f64,
}

impl GramFactorization {
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// N×r orthonormal eigenvector block.
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Retained eigenvalues, descending, all positive.
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn tol_rel(&self) -> f64 {
        self.tol_rel
    }

    /// `P diag(D) P^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.p.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.d[k];
        }
        scaled * self.p.transpose()
    }
}

/// Retains eigenpairs with eigenvalue above `tol_rel * lambda_max`, capped at
/// `r_max`, sorted descending.
pub fn truncated_eig(m: &DMatrix<f64>, tol_rel: f64, r_max: usize) -> Result<GramFactorization> {
    if !(tol_rel > 0.0 && tol_rel < 1.0) {
        return Err(CfbError::InvalidConfig(format!(
            "tol_rel must lie in (0, 1), got {tol_rel}"
        )));
    }
    if r_max == 0 {
        return Err(CfbError::InvalidConfig("r_max must be at least 1".into()));
    }
    let (values, vectors) = sorted_symmetric_eigen(m)?;
    let lambda_max = values[0];
    if !(lambda_max > 0.0) {
        return Err(CfbError::AllEigenvaluesTruncated);
    }
    let threshold = tol_rel * lambda_max;
    let r = values
        .iter()
        .take_while(|&&v| v > threshold)
        .count()
        .min(r_max);
    if r == 0 {
        return Err(CfbError::AllEigenvaluesTruncated);
    }
    Ok(GramFactorization {
        m: m.clone(),
        p: vectors.columns(0, r).into_owned(),
        d: values.rows(0, r).into_owned(),
        tol_rel,
    })
}
