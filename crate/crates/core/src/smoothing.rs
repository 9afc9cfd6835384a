//! Gaussian smoothing kernel, normalized Nadaraya-Watson weights, the
//! bandwidth rule, and the pairwise integral matrix `G_h` consumed by the
//! balancing objective.
//!
//! `G_h[i][j]` integrates `ktilde(V_i, v) * ktilde(V_j, v)` over the scaled
//! conditioning domain `[0, 1]^{d1}` with a tensor-product trapezoid rule.
//! The matrix is computed once per bandwidth and shared by every solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{CfbError, Result};

pub const DEFAULT_QUADRATURE_POINTS: usize = 201;
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-12;
pub const DEFAULT_QUADRATURE_BUDGET: f64 = 1e10;
const MIN_QUADRATURE_POINTS: usize = 51;

/// Standard Gaussian density on `R^{d1}`: `(2 pi)^{-d1/2} exp(-|s|^2 / 2)`.
pub fn gaussian_kernel(s: &[f64]) -> f64 {
    let norm2: f64 = s.iter().map(|x| x * x).sum();
    let d1 = s.len() as f64;
    (2.0 * std::f64::consts::PI).powf(-d1 / 2.0) * (-norm2 / 2.0).exp()
}

/// Smoothing state for one dataset and bandwidth: scaled conditioning values,
/// the quadrature rule, and the precomputed `G_h` matrix.
#[derive(Debug, Clone)]
pub struct SmoothingContext {
    v: DMatrix<f64>,
    h: f64,
    q: usize,
    denom_floor: f64,
    g_h: DMatrix<f64>,
}

impl SmoothingContext {
    pub fn new(
        v: DMatrix<f64>,
        h: f64,
        q: usize,
        denom_floor: f64,
        budget: f64,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(CfbError::InvalidConfig(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        if q < MIN_QUADRATURE_POINTS {
            return Err(CfbError::InvalidConfig(format!(
                "quadrature needs at least {MIN_QUADRATURE_POINTS} points per dimension, got {q}"
            )));
        }
        if !(denom_floor > 0.0) {
            return Err(CfbError::InvalidConfig(
                "denominator floor must be positive".into(),
            ));
        }
        let n = v.nrows();
        let d1 = v.ncols();
        let cost = (q as f64).powi(d1 as i32) * (n as f64) * (n as f64);
        if cost > budget {
            return Err(CfbError::QuadratureBudgetExceeded { cost, cap: budget });
        }
        let mut ctx = Self {
            v,
            h,
            q,
            denom_floor,
            g_h: DMatrix::zeros(0, 0),
        };
        ctx.g_h = ctx.compute_g_h();
        Ok(ctx)
    }

    pub fn with_defaults(v: DMatrix<f64>, h: f64) -> Result<Self> {
        Self::new(
            v,
            h,
            DEFAULT_QUADRATURE_POINTS,
            DEFAULT_DENOM_FLOOR,
            DEFAULT_QUADRATURE_BUDGET,
        )
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn d1(&self) -> usize {
        self.v.ncols()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn g_h(&self) -> &DMatrix<f64> {
        &self.g_h
    }

    pub fn g_diag(&self) -> DVector<f64> {
        self.g_h.diagonal()
    }

    /// Normalized kernel weight of sample `i` at location `v`.
    pub fn ktilde(&self, i: usize, at: &[f64]) -> f64 {
        self.ktilde_all(at)[i]
    }

    /// Normalized kernel weights of every sample at location `v`; their mean
    /// is one whenever the denominator floor is inactive.
    pub fn ktilde_all(&self, at: &[f64]) -> DVector<f64> {
        let n = self.n();
        let d1 = self.d1();
        let hd = self.h.powi(d1 as i32);
        let mut scaled = vec![0.0; d1];
        let mut numer = DVector::zeros(n);
        for i in 0..n {
            for j in 0..d1 {
                scaled[j] = (self.v[(i, j)] - at[j]) / self.h;
            }
            numer[i] = gaussian_kernel(&scaled) / hd;
        }
        let denom = (numer.sum() / n as f64).max(self.denom_floor);
        numer / denom
    }

    /// Tensor-product trapezoid rule on `[0, 1]^{d1}`: flattened nodes with
    /// their weights.
    pub fn quadrature_nodes(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        quadrature_nodes(self.d1(), self.q)
    }

    fn compute_g_h(&self) -> DMatrix<f64> {
        let n = self.n();
        let (nodes, weights) = self.quadrature_nodes();
        let mut phi = DMatrix::zeros(n, nodes.len());
        for (idx, node) in nodes.iter().enumerate() {
            let col = self.ktilde_all(node) * weights[idx].sqrt();
            phi.set_column(idx, &col);
        }
        let mut g = &phi * phi.transpose();
        // mirror the upper triangle so symmetry holds bit for bit
        for i in 0..n {
            for j in (i + 1)..n {
                g[(j, i)] = g[(i, j)];
            }
        }
        g
    }
}

fn quadrature_nodes(d1: usize, q: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let step = 1.0 / (q - 1) as f64;
    let axis: Vec<f64> = (0..q).map(|k| k as f64 * step).collect();
    let w1 = |k: usize| if k == 0 || k == q - 1 { step / 2.0 } else { step };
    let total = q.pow(d1 as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut index = vec![0usize; d1];
    for _ in 0..total {
        let node: Vec<f64> = index.iter().map(|&k| axis[k]).collect();
        let weight: f64 = index.iter().map(|&k| w1(k)).product();
        nodes.push(node);
        weights.push(weight);
        for pos in (0..d1).rev() {
            index[pos] += 1;
            if index[pos] < q {
                break;
            }
            index[pos] = 0;
        }
    }
    (nodes, weights)
}

/// Reference-rule bandwidth for one conditioning column (scaled units):
/// `1.06 * min(sd, IQR/1.349) * N^{-2/7}`. The `N^{-2/7}` exponent combines
/// the usual `N^{-1/5}` reference rate with the `N^{1/5} * N^{-2/7}`
/// undersmoothing adjustment applied before weight estimation.
pub fn bandwidth_default(v: &[f64]) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(CfbError::InvalidConfig(
            "bandwidth rule needs at least 2 observations".into(),
        ));
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let iqr = quantile(v, 0.75) - quantile(v, 0.25);
    let scale = sd.min(iqr / 1.349);
    if !(scale > 0.0) {
        return Err(CfbError::DegenerateSpread);
    }
    Ok(bandwidth_from_scale(scale, n))
}

/// The bandwidth rule at a given spread scale.
pub fn bandwidth_from_scale(scale: f64, n: usize) -> f64 {
    1.06 * scale * (n as f64).powf(-2.0 / 7.0)
}

/// Linear-interpolation sample quantile (the common "type 7" rule).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::sorted_symmetric_eigen;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_at_zero() {
        let v = gaussian_kernel(&[0.0]);
        assert!((v - 0.3989422804014327).abs() < 1e-15);
    }

    #[test]
    fn gaussian_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = [rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0];
            let neg = [-s[0], -s[1]];
            assert_eq!(gaussian_kernel(&s), gaussian_kernel(&neg));
        }
    }

    #[test]
    fn gaussian_integrates_to_one() {
        let step = 1e-3;
        let m = (16.0 / step) as usize;
        let mut sum = 0.0;
        for k in 0..=m {
            let x = -8.0 + k as f64 * step;
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            sum += w * gaussian_kernel(&[x]);
        }
        sum *= step;
        assert!((sum - 1.0).abs() < 1e-6, "integral {sum}");
    }

    fn ctx_of(values: &[f64], h: f64) -> SmoothingContext {
        let v = DMatrix::from_column_slice(values.len(), 1, values);
        SmoothingContext::with_defaults(v, h).unwrap()
    }

    #[test]
    fn single_sample_weight_is_one() {
        // the weight self-normalizes wherever the denominator floor stays
        // inactive, i.e. anywhere within a few bandwidths of the sample
        let ctx = ctx_of(&[0.4], 0.25);
        for &at in &[0.0, 0.3, 0.99] {
            assert!((ctx.ktilde(0, &[at]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_samples_share_unit_weight() {
        let ctx = ctx_of(&[0.6, 0.6], 0.1);
        let w = ctx.ktilde_all(&[0.25]);
        assert!((w[0] - 1.0).abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_hand_evaluation() {
        let ctx = ctx_of(&[0.1, 0.5, 0.9], 0.2);
        let got = ctx.ktilde(1, &[0.5]);
        // independent scalar evaluation of the normalized ratio
        let phi = |x: f64| (2.0 * std::f64::consts::PI).powf(-0.5) * (-x * x / 2.0).exp();
        let h = 0.2;
        let numer = phi(0.0) / h;
        let denom = (phi((0.1f64 - 0.5) / h) / h + phi(0.0) / h + phi((0.9f64 - 0.5) / h) / h) / 3.0;
        let expected = numer / denom;
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
    }

    #[test]
    fn weights_average_to_one_at_quadrature_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
        let ctx = ctx_of(&vals, 0.15);
        let (nodes, _) = ctx.quadrature_nodes();
        for node in nodes.iter().step_by(17) {
            let mean = ctx.ktilde_all(node).sum() / ctx.n() as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn g_h_single_sample_is_unit() {
        // the integrand is identically one once normalized, so the trapezoid
        // sum is exact at any bandwidth the floor does not touch
        let ctx = ctx_of(&[0.3], 0.3);
        assert_eq!(ctx.g_h().nrows(), 1);
        assert!((ctx.g_h()[(0, 0)] - 1.0).abs() < 1e-12);
        let ctx2 = ctx_of(&[0.3], 1.7);
        assert!((ctx2.g_h()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn g_h_double_sum_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vals: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
        let ctx = ctx_of(&vals, 0.12);
        let n = ctx.n() as f64;
        let total: f64 = ctx.g_h().iter().sum();
        assert!((total / (n * n) - 1.0).abs() < 1e-6, "{}", total / (n * n));
    }

    #[test]
    fn g_h_row_sums_match_direct_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let vals: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let ctx = ctx_of(&vals, 0.2);
        let (nodes, weights) = ctx.quadrature_nodes();
        for i in 0..ctx.n() {
            let direct: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(node, w)| w * ctx.ktilde(i, node))
                .sum();
            let row_mean = ctx.g_h().row(i).sum() / ctx.n() as f64;
            assert!((row_mean - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn g_h_is_exactly_symmetric_with_positive_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let vals: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let ctx = ctx_of(&vals, 0.09);
        let g = ctx.g_h();
        for i in 0..ctx.n() {
            assert!(g[(i, i)] > 0.0);
            for j in 0..ctx.n() {
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn g_h_is_psd_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for &n in &[5usize, 20, 50] {
            let vals: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let ctx = ctx_of(&vals, 0.05 + rng.gen::<f64>() * 0.3);
            let (eigs, _) = sorted_symmetric_eigen(ctx.g_h()).unwrap();
            let sigma1 = eigs[0];
            for v in eigs.iter() {
                assert!(*v >= -1e-8 * sigma1, "n={n}: eigenvalue {v}");
            }
        }
    }

    fn g_at_q(values: &[f64], h: f64, q: usize) -> DMatrix<f64> {
        let v = DMatrix::from_column_slice(values.len(), 1, values);
        SmoothingContext::new(v, h, q, DEFAULT_DENOM_FLOOR, DEFAULT_QUADRATURE_BUDGET)
            .unwrap()
            .g_h()
            .clone()
    }

    #[test]
    fn g_h_quadrature_refinement_is_stable() {
        // trapezoid error scales like (grid step / h)^2, so the 1e-5 level
        // is reached once the coarse grid resolves the integrand
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let vals: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
        let coarse = g_at_q(&vals, 0.9, 101);
        let fine = g_at_q(&vals, 0.9, 401);
        let max_diff = (&coarse - &fine).abs().max();
        assert!(max_diff < 1e-5, "max entry diff {max_diff}");
    }

    #[test]
    fn g_h_refinement_differences_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let vals: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
        let h = 0.13;
        let qs = [51usize, 101, 201, 401];
        let mats: Vec<DMatrix<f64>> = qs.iter().map(|&q| g_at_q(&vals, h, q)).collect();
        let diffs: Vec<f64> = mats
            .windows(2)
            .map(|w| (&w[0] - &w[1]).abs().max())
            .collect();
        for k in 1..diffs.len() {
            assert!(
                diffs[k] <= diffs[k - 1],
                "refinement diffs not shrinking: {diffs:?}"
            );
        }
    }

    #[test]
    fn quadrature_budget_enforced() {
        let v = DMatrix::from_column_slice(10, 1, &[0.5; 10]);
        let err = SmoothingContext::new(v, 0.1, 201, DEFAULT_DENOM_FLOOR, 1e3).unwrap_err();
        assert!(matches!(err, CfbError::QuadratureBudgetExceeded { .. }));
    }

    #[test]
    fn tensor_quadrature_weights_sum_to_volume() {
        let (nodes, weights) = quadrature_nodes(2, 51);
        assert_eq!(nodes.len(), 51 * 51);
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_matches_reference_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let v: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let h = bandwidth_default(&v).unwrap();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd =
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
        let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
        let expected = 1.06 * sd.min(iqr / 1.349) * (n as f64).powf(-2.0 / 7.0);
        assert!((h - expected).abs() < 1e-15);
        // ballpark for a uniform sample: population sd 1/sqrt(12) gives ~0.082
        assert!(h > 0.06 && h < 0.10, "h = {h}");
    }

    #[test]
    fn bandwidth_linear_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let v: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let h1 = bandwidth_default(&v).unwrap();
        let h2 = bandwidth_default(&doubled).unwrap();
        assert!((h2 - 2.0 * h1).abs() < 1e-12 * h1.abs().max(1.0));
    }

    #[test]
    fn bandwidth_power_law_in_n() {
        let ratio = bandwidth_from_scale(0.3, 400) / bandwidth_from_scale(0.3, 100);
        assert!((ratio - 4.0f64.powf(-2.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_degenerate_spread() {
        let v = vec![0.5; 30];
        assert!(matches!(
            bandwidth_default(&v),
            Err(CfbError::DegenerateSpread)
        ));
    }
}
