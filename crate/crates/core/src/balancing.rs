//! Balancing-weight estimation.
//!
//! The weights for one treatment arm minimize
//! `sigma1(B(w)) + lambda2 * R(w)` over `w >= 1` on the active arm, where
//! `B(w) = (1/N) P^T diag(y) G diag(y) P - N * lambda1 * D^{-1}`,
//! `y_i = a_i w_i - 1` with `a` the active-arm indicator, and
//! `R(w) = (1/N) sum_i a_i w_i^2 G[i][i]`. The objective is convex in `w`;
//! a projected subgradient method with diminishing steps and best-iterate
//! tracking solves it. Replacing `G` by the all-ones matrix yields the
//! marginal (bandwidth-free) balancing criterion used as a baseline.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::ObservationalDataset;
use crate::error::{CfbError, Result};
use crate::kernels::{gram_matrix, sorted_symmetric_eigen, GramFactorization, ReproducingKernelSpec};
use crate::smoothing::SmoothingContext;

pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_STEP0: f64 = 1.0;
pub const DEFAULT_TOL_OBJ: f64 = 1e-6;
pub const DEFAULT_EIG_TIE_TOL: f64 = 1e-8;
/// Iterations without relative improvement before the solve is declared done.
const CONVERGENCE_WINDOW: usize = 100;

/// Which treatment arm the weights are solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Treated,
    Control,
}

/// Whether the objective smooths over the conditioning variables or uses the
/// bandwidth-free marginal limit (all-ones in place of `G_h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceCriterion {
    Smoothed,
    MarginalLimit,
}

#[derive(Debug, Clone)]
pub struct BalancingConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub h: f64,
    pub arm: Arm,
    pub max_iters: usize,
    pub step0: f64,
    pub tol_obj: f64,
    pub eig_tie_tol: f64,
}

impl BalancingConfig {
    /// Theory-order defaults: `lambda1 = log(N) / (N h^{d1})`,
    /// `lambda2 = log(N) / N`.
    pub fn theory_defaults(n: usize, h: f64, d1: usize, arm: Arm) -> Self {
        Self {
            lambda1: default_lambda1(n, h, d1),
            lambda2: default_lambda2(n),
            h,
            arm,
            max_iters: DEFAULT_MAX_ITERS,
            step0: DEFAULT_STEP0,
            tol_obj: DEFAULT_TOL_OBJ,
            eig_tie_tol: DEFAULT_EIG_TIE_TOL,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0 && self.h > 0.0) {
            return Err(CfbError::InvalidConfig(
                "lambda1, lambda2, and h must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(CfbError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.step0 > 0.0 && self.tol_obj > 0.0 && self.eig_tie_tol > 0.0) {
            return Err(CfbError::InvalidConfig(
                "step0, tol_obj, and eig_tie_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn default_lambda1(n: usize, h: f64, d1: usize) -> f64 {
    (n as f64).ln() / (n as f64 * h.powi(d1 as i32))
}

pub fn default_lambda2(n: usize) -> f64 {
    (n as f64).ln() / n as f64
}

/// Solved weights for one arm plus solver diagnostics. Inactive-arm entries
/// are stored as 1 and never enter the objective.
#[derive(Debug, Clone)]
pub struct BalanceWeights {
    pub w: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub final_eigengap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Evaluation of the objective at one iterate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub sigma1: f64,
    pub sigma2: Option<f64>,
    /// Unit leading eigenvector of `B(w)`.
    pub leading: DVector<f64>,
    /// Eigenvectors whose eigenvalues tie the top one within the tie
    /// tolerance (at least the leading one).
    tied: Vec<DVector<f64>>,
}

impl Evaluation {
    pub fn eigengap(&self) -> f64 {
        match self.sigma2 {
            Some(s2) => self.sigma1 - s2,
            None => f64::INFINITY,
        }
    }
}

/// Finite-dimensional pieces of the inner problem, fixed across iterations.
pub struct InnerProblemMatrices<'a> {
    fact: &'a GramFactorization,
    g: Cow<'a, DMatrix<f64>>,
    g_diag: DVector<f64>,
    active: Vec<bool>,
    /// `N * lambda1 / D_k`, the diagonal subtracted from the spectral term.
    penalty: DVector<f64>,
    lambda2: f64,
    n: usize,
}

impl<'a> InnerProblemMatrices<'a> {
    pub fn new(
        fact: &'a GramFactorization,
        g: Cow<'a, DMatrix<f64>>,
        active: Vec<bool>,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        let n = fact.p().nrows();
        if g.nrows() != n || g.ncols() != n {
            return Err(CfbError::DimensionMismatch {
                expected: n,
                got: g.nrows(),
            });
        }
        if active.len() != n {
            return Err(CfbError::DimensionMismatch {
                expected: n,
                got: active.len(),
            });
        }
        if !active.iter().any(|&a| a) {
            return Err(CfbError::InvalidDataset("active arm is empty".into()));
        }
        let penalty = DVector::from_fn(fact.rank(), |k, _| n as f64 * lambda1 / fact.d()[k]);
        let g_diag = g.diagonal();
        Ok(Self {
            fact,
            g,
            g_diag,
            active,
            penalty,
            lambda2,
            n,
        })
    }

    /// Pieces for solving one arm of a dataset with the smoothed criterion.
    pub fn for_arm(
        ds: &ObservationalDataset,
        fact: &'a GramFactorization,
        ctx: &'a SmoothingContext,
        config: &BalancingConfig,
    ) -> Result<Self> {
        Self::new(
            fact,
            Cow::Borrowed(ctx.g_h()),
            active_mask(ds, config.arm),
            config.lambda1,
            config.lambda2,
        )
    }

    /// Pieces for the marginal limit: `G` replaced by the all-ones matrix.
    pub fn for_arm_marginal(
        ds: &ObservationalDataset,
        fact: &'a GramFactorization,
        config: &BalancingConfig,
    ) -> Result<Self> {
        let n = ds.n();
        Self::new(
            fact,
            Cow::Owned(DMatrix::from_element(n, n, 1.0)),
            active_mask(ds, config.arm),
            config.lambda1,
            config.lambda2,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.fact.rank()
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// `y_i = a_i w_i - 1`.
    pub fn residual_signs(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            if self.active[i] {
                w[i] - 1.0
            } else {
                -1.0
            }
        })
    }

    /// `B(w) = (1/N) P^T diag(y) G diag(y) P - N lambda1 D^{-1}`.
    pub fn b_matrix(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let y = self.residual_signs(w);
        let p = self.fact.p();
        let r = self.fact.rank();
        let mut s = p.clone();
        for i in 0..self.n {
            for k in 0..r {
                s[(i, k)] *= y[i];
            }
        }
        let gs = self.g.as_ref() * &s;
        let mut b = (s.transpose() * gs) / self.n as f64;
        for k in 0..r {
            b[(k, k)] -= self.penalty[k];
        }
        // symmetrize away gemm rounding
        let bt = b.transpose();
        (b + bt) * 0.5
    }

    /// Weight-variability penalty `lambda2 * (1/N) sum_i a_i w_i^2 G[i][i]`.
    pub fn variability_penalty(&self, w: &DVector<f64>) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.n {
            if self.active[i] {
                sum += w[i] * w[i] * self.g_diag[i];
            }
        }
        self.lambda2 * sum / self.n as f64
    }

    /// Full objective together with the leading eigenpair of `B(w)`.
    pub fn evaluate(&self, w: &DVector<f64>) -> Result<Evaluation> {
        self.evaluate_with_ties(w, DEFAULT_EIG_TIE_TOL)
    }

    pub fn evaluate_with_ties(&self, w: &DVector<f64>, tie_tol: f64) -> Result<Evaluation> {
        let b = self.b_matrix(w);
        let (values, vectors) = sorted_symmetric_eigen(&b)?;
        let sigma1 = values[0];
        let sigma2 = if values.len() > 1 { Some(values[1]) } else { None };
        let tie_slack = tie_tol * sigma1.abs().max(1e-12);
        let mut tied = Vec::new();
        for k in 0..values.len().min(4) {
            if sigma1 - values[k] <= tie_slack {
                tied.push(vectors.column(k).into_owned());
            } else {
                break;
            }
        }
        Ok(Evaluation {
            objective: sigma1 + self.variability_penalty(w),
            sigma1,
            sigma2,
            leading: vectors.column(0).into_owned(),
            tied,
        })
    }

    pub fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(w)?.objective)
    }

    /// Subgradient at `w` given the leading eigenvector of `B(w)`. Inactive
    /// coordinates are exactly zero. When the top eigenvalue is (nearly)
    /// tied this is a subgradient rather than a gradient.
    pub fn subgradient_given(&self, w: &DVector<f64>, leading: &DVector<f64>) -> DVector<f64> {
        let q = self.fact.p() * leading;
        let y = self.residual_signs(w);
        let gz = self.g.as_ref() * y.component_mul(&q);
        DVector::from_fn(self.n, |i, _| {
            if self.active[i] {
                2.0 / self.n as f64 * (q[i] * gz[i] + self.lambda2 * w[i] * self.g_diag[i])
            } else {
                0.0
            }
        })
    }

    pub fn subgradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let eval = self.evaluate(w)?;
        Ok(self.subgradient_given(w, &eval.leading))
    }

    /// Subgradient averaged over the eigendirections tied at the top; at an
    /// exact tie any convex combination of the per-direction gradients is a
    /// valid subgradient, and the average damps direction flipping.
    fn subgradient_tied(&self, w: &DVector<f64>, tied: &[DVector<f64>]) -> DVector<f64> {
        if tied.len() <= 1 {
            return self.subgradient_given(w, &tied[0]);
        }
        let mut sum = DVector::zeros(self.n);
        for beta in tied {
            sum += self.subgradient_given(w, beta);
        }
        sum / tied.len() as f64
    }
}

fn active_mask(ds: &ObservationalDataset, arm: Arm) -> Vec<bool> {
    ds.t()
        .iter()
        .map(|&t| match arm {
            Arm::Treated => t == 1,
            Arm::Control => t == 0,
        })
        .collect()
}

/// How many times the step scale is halved after a stall before the solve
/// is declared converged.
const MAX_STEP_HALVINGS: usize = 22;

/// Projected subgradient descent from `w = 1` with best-iterate tracking.
/// Step `k` moves a distance `scale / sqrt(k)` along the normalized
/// subgradient, then clamps the active arm at 1. Whenever the best objective
/// stops improving by `tol_obj * |best|` for 50 consecutive iterations the
/// scale is halved and the search resumes from the best iterate; the solve
/// converges once the scale has been halved away.
pub fn solve_weights_with(
    matrices: &InnerProblemMatrices<'_>,
    config: &BalancingConfig,
) -> Result<BalanceWeights> {
    let n = matrices.n();
    solve_weights_from(matrices, config, DVector::from_element(n, 1.0))
}

/// [`solve_weights_with`] from an explicit feasible start point.
pub fn solve_weights_from(
    matrices: &InnerProblemMatrices<'_>,
    config: &BalancingConfig,
    start: DVector<f64>,
) -> Result<BalanceWeights> {
    config.validate()?;
    let n = matrices.n();
    let mut w = start;
    for i in 0..n {
        if matrices.active[i] {
            if w[i] < 1.0 {
                w[i] = 1.0;
            }
        } else {
            w[i] = 1.0;
        }
    }
    let mut current = matrices.evaluate_with_ties(&w, config.eig_tie_tol)?;
    let mut trace = vec![current.objective];
    let mut best_obj = current.objective;
    let mut best_w = w.clone();
    let mut stale = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut scale = config.step0;
    let mut halvings = 0usize;

    for k in 1..=config.max_iters {
        let grad = matrices.subgradient_tied(&w, &current.tied);
        // the step size is the distance moved: normalizing the subgradient
        // direction makes the schedule scale-free
        let norm = grad.norm();
        if norm == 0.0 {
            converged = true;
            break;
        }
        let step = scale / (k as f64).sqrt() / norm;
        w.axpy(-step, &grad, 1.0);
        for i in 0..n {
            if matrices.active[i] {
                if w[i] < 1.0 {
                    w[i] = 1.0;
                }
            } else {
                w[i] = 1.0;
            }
        }
        current = matrices.evaluate_with_ties(&w, config.eig_tie_tol)?;
        trace.push(current.objective);
        iterations = k;
        if current.objective < best_obj {
            let significant =
                current.objective < best_obj - config.tol_obj * best_obj.abs();
            best_obj = current.objective;
            best_w.copy_from(&w);
            if significant {
                stale = 0;
            } else {
                stale += 1;
            }
        } else {
            stale += 1;
        }
        if stale >= CONVERGENCE_WINDOW {
            halvings += 1;
            if halvings >= MAX_STEP_HALVINGS {
                converged = true;
                break;
            }
            scale *= 0.5;
            stale = 0;
            w.copy_from(&best_w);
            current = matrices.evaluate_with_ties(&w, config.eig_tie_tol)?;
        }
    }

    let final_eval = matrices.evaluate(&best_w)?;
    Ok(BalanceWeights {
        w: best_w,
        objective_trace: trace,
        final_eigengap: final_eval.eigengap(),
        iterations,
        converged,
    })
}

/// Solves one arm of a dataset with the smoothed criterion.
pub fn solve_weights(
    ds: &ObservationalDataset,
    fact: &GramFactorization,
    ctx: &SmoothingContext,
    config: &BalancingConfig,
) -> Result<BalanceWeights> {
    if fact.p().nrows() != ds.n() || ctx.n() != ds.n() {
        return Err(CfbError::DimensionMismatch {
            expected: ds.n(),
            got: fact.p().nrows().min(ctx.n()),
        });
    }
    let matrices = InnerProblemMatrices::for_arm(ds, fact, ctx, config)?;
    solve_weights_with(&matrices, config)
}

/// Solves one arm with the marginal (all-ones) criterion.
pub fn solve_weights_marginal(
    ds: &ObservationalDataset,
    fact: &GramFactorization,
    config: &BalancingConfig,
) -> Result<BalanceWeights> {
    let matrices = InnerProblemMatrices::for_arm_marginal(ds, fact, config)?;
    solve_weights_with(&matrices, config)
}

fn residual_coeffs(
    w: &DVector<f64>,
    u_coeffs: &DVector<f64>,
    ds: &ObservationalDataset,
) -> Result<DVector<f64>> {
    let spec = ReproducingKernelSpec::for_dataset(ds);
    let m = gram_matrix(ds.x(), &spec)?;
    let u_at_x = m * u_coeffs;
    Ok(DVector::from_fn(ds.n(), |i, _| {
        (ds.t()[i] as f64 * w[i] - 1.0) * u_at_x[i]
    }))
}

/// Treated-arm balancing error for the kernel section with coefficients
/// `u_coeffs`, through the precomputed `G_h` quadratic form
/// `(1/N^2) a^T G_h a` with `a_i = (T_i w_i - 1) u(X_i)`.
pub fn balancing_error_s(
    w: &DVector<f64>,
    u_coeffs: &DVector<f64>,
    ds: &ObservationalDataset,
    ctx: &SmoothingContext,
) -> Result<f64> {
    let a = residual_coeffs(w, u_coeffs, ds)?;
    let n2 = (ds.n() as f64) * (ds.n() as f64);
    Ok((a.transpose() * ctx.g_h() * &a)[(0, 0)] / n2)
}

/// Same quantity evaluated by direct quadrature of the squared residual
/// moment function, without touching the assembled `G_h`.
pub fn balancing_error_s_quadrature(
    w: &DVector<f64>,
    u_coeffs: &DVector<f64>,
    ds: &ObservationalDataset,
    ctx: &SmoothingContext,
) -> Result<f64> {
    let a = residual_coeffs(w, u_coeffs, ds)?;
    let n = ds.n() as f64;
    let (nodes, weights) = ctx.quadrature_nodes();
    let mut total = 0.0;
    for (node, weight) in nodes.iter().zip(&weights) {
        let ktilde = ctx.ktilde_all(node);
        let moment = a.dot(&ktilde) / n;
        total += weight * moment * moment;
    }
    Ok(total)
}

/// Monte Carlo check that `sigma1(B(w))` dominates the Rayleigh quotient in
/// random unit directions and is attained by the leading eigenvector.
#[derive(Debug, Clone)]
pub struct InnerSupReport {
    pub sigma1: f64,
    pub max_sampled: f64,
    pub eigvec_value: f64,
    pub n_samples: usize,
}

impl InnerSupReport {
    pub fn sampled_within_bound(&self) -> bool {
        self.max_sampled <= self.sigma1 + 1e-10
    }

    pub fn eigvec_attains(&self) -> bool {
        (self.eigvec_value - self.sigma1).abs() <= 1e-10
    }
}

pub fn verify_inner_sup<R: Rng>(
    w: &DVector<f64>,
    matrices: &InnerProblemMatrices<'_>,
    n_samples: usize,
    rng: &mut R,
) -> Result<InnerSupReport> {
    let b = matrices.b_matrix(w);
    let eval = matrices.evaluate(w)?;
    let r = b.nrows();
    let rayleigh = |beta: &DVector<f64>| (beta.transpose() * &b * beta)[(0, 0)];
    let mut max_sampled = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let mut beta = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = beta.norm();
        if norm == 0.0 {
            continue;
        }
        beta /= norm;
        max_sampled = max_sampled.max(rayleigh(&beta));
    }
    Ok(InnerSupReport {
        sigma1: eval.sigma1,
        max_sampled,
        eigvec_value: rayleigh(&eval.leading),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnKind;
    use crate::kernels::truncated_eig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, rng: &mut ChaCha8Rng) -> ObservationalDataset {
        loop {
            let x = DMatrix::from_fn(n, d, |_, _| rng.gen::<f64>());
            let t: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let y = DVector::from_fn(n, |_, _| rng.gen::<f64>());
            if let Ok(ds) = ObservationalDataset::new(
                x,
                t,
                y,
                vec![0],
                vec![ColumnKind::Continuous; d],
            ) {
                return ds;
            }
        }
    }

    struct Instance {
        ds: ObservationalDataset,
        fact: GramFactorization,
        ctx: SmoothingContext,
        config: BalancingConfig,
    }

    fn random_instance(n: usize, d: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(n, d, &mut rng);
        let spec = ReproducingKernelSpec::for_dataset(&ds);
        let m = gram_matrix(ds.x(), &spec).unwrap();
        let fact = truncated_eig(&m, 1e-10, n).unwrap();
        let h = 0.1 + 0.2 * rng.gen::<f64>();
        let ctx = SmoothingContext::with_defaults(ds.v_matrix(), h).unwrap();
        let config = BalancingConfig::theory_defaults(n, h, 1, Arm::Treated);
        Instance {
            ds,
            fact,
            ctx,
            config,
        }
    }

    fn random_feasible(
        matrices: &InnerProblemMatrices<'_>,
        rng: &mut ChaCha8Rng,
        spread: f64,
    ) -> DVector<f64> {
        DVector::from_fn(matrices.n(), |i, _| {
            if matrices.active()[i] {
                1.0 + spread * rng.gen::<f64>()
            } else {
                1.0
            }
        })
    }

    #[test]
    fn objective_with_zero_residual_hits_penalty_floor() {
        // all entries active, w = 1 so y = 0 and only the diagonal term stays
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = DMatrix::from_fn(6, 2, |_, _| rng.gen::<f64>());
        let spec = ReproducingKernelSpec::all_sobolev(2);
        let m = gram_matrix(&pts, &spec).unwrap();
        let fact = truncated_eig(&m, 1e-10, 6).unwrap();
        let g = DMatrix::identity(6, 6);
        let lambda1 = 0.3;
        let matrices = InnerProblemMatrices::new(
            &fact,
            Cow::Owned(g),
            vec![true; 6],
            lambda1,
            0.0,
        )
        .unwrap();
        let w = DVector::from_element(6, 1.0);
        let obj = matrices.objective(&w).unwrap();
        let expected = -6.0 * lambda1 / fact.d()[0];
        assert!((obj - expected).abs() < 1e-12, "{obj} vs {expected}");
    }

    #[test]
    fn single_sample_objective_is_quadratic() {
        let pts = DMatrix::from_column_slice(1, 1, &[0.3]);
        let spec = ReproducingKernelSpec::all_sobolev(1);
        let m = gram_matrix(&pts, &spec).unwrap();
        let fact = truncated_eig(&m, 1e-10, 1).unwrap();
        let g = DMatrix::from_element(1, 1, 1.0);
        let (lambda1, lambda2) = (0.17, 0.4);
        let matrices =
            InnerProblemMatrices::new(&fact, Cow::Owned(g), vec![true], lambda1, lambda2)
                .unwrap();
        for &c in &[1.0, 1.5, 2.0, 3.7] {
            let w = DVector::from_element(1, c);
            let got = matrices.objective(&w).unwrap();
            let expected = (c - 1.0) * (c - 1.0) - lambda1 / fact.d()[0] + lambda2 * c * c;
            assert!((got - expected).abs() < 1e-12, "c={c}: {got} vs {expected}");
        }
    }

    #[test]
    fn objective_is_convex_on_random_instances() {
        for seed in 0..4u64 {
            let inst = random_instance(12, 2, 100 + seed);
            let matrices =
                InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config)
                    .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let w1 = random_feasible(&matrices, &mut rng, 3.0);
                let w2 = random_feasible(&matrices, &mut rng, 3.0);
                let t: f64 = rng.gen();
                let mid = &w1 * t + &w2 * (1.0 - t);
                let f_mid = matrices.objective(&mid).unwrap();
                let bound = t * matrices.objective(&w1).unwrap()
                    + (1.0 - t) * matrices.objective(&w2).unwrap();
                assert!(f_mid <= bound + 1e-8, "convexity violated: {f_mid} > {bound}");
            }
        }
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let inst = random_instance(10, 2, 7);
        let matrices =
            InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        while checked < 5 {
            let w = random_feasible(&matrices, &mut rng, 2.5);
            let eval = matrices.evaluate(&w).unwrap();
            if eval.eigengap() <= 1e-3 {
                continue;
            }
            let grad = matrices.subgradient_given(&w, &eval.leading);
            let gmax = grad.amax();
            let delta = 1e-5;
            for i in 0..matrices.n() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += delta;
                wm[i] -= delta;
                let fd = (matrices.objective(&wp).unwrap() - matrices.objective(&wm).unwrap())
                    / (2.0 * delta);
                let scale = grad[i].abs().max(1e-3 * gmax).max(1e-8);
                let rel = (fd - grad[i]).abs() / scale;
                assert!(rel < 1e-4, "coordinate {i}: fd {fd} vs grad {}", grad[i]);
            }
            checked += 1;
        }
    }

    #[test]
    fn subgradient_zero_on_inactive_coordinates() {
        let inst = random_instance(9, 2, 11);
        let matrices =
            InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_feasible(&matrices, &mut rng, 2.0);
        let grad = matrices.subgradient(&w).unwrap();
        for i in 0..matrices.n() {
            if !matrices.active()[i] {
                assert_eq!(grad[i], 0.0);
            }
        }
        // B must ignore inactive entries entirely
        let b1 = matrices.b_matrix(&w);
        let mut w2 = w.clone();
        for i in 0..matrices.n() {
            if !matrices.active()[i] {
                w2[i] += 5.0;
            }
        }
        let b2 = matrices.b_matrix(&w2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn isotropic_penalty_shift_preserves_subgradient() {
        // with D = identity the lambda1 term shifts the spectrum uniformly
        let fact = truncated_eig(&DMatrix::<f64>::identity(6, 6), 1e-10, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vals: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
        let ctx = SmoothingContext::with_defaults(
            DMatrix::from_column_slice(6, 1, &vals),
            0.15,
        )
        .unwrap();
        let active = vec![true, false, true, true, false, true];
        let build = |lambda1: f64| {
            InnerProblemMatrices::new(
                &fact,
                Cow::Borrowed(ctx.g_h()),
                active.clone(),
                lambda1,
                0.25,
            )
            .unwrap()
        };
        let ma = build(0.1);
        let mb = build(1.0);
        let w = DVector::from_vec(vec![1.4, 1.0, 2.0, 1.1, 1.0, 3.0]);
        let ga = ma.subgradient(&w).unwrap();
        let gb = mb.subgradient(&w).unwrap();
        assert!((ga - gb).amax() < 1e-10);
    }

    #[test]
    fn b_matrix_is_symmetric() {
        let inst = random_instance(11, 3, 31);
        let matrices =
            InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_feasible(&matrices, &mut rng, 2.0);
        let b = matrices.b_matrix(&w);
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                assert!((b[(i, j)] - b[(j, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subgradient_inequality_holds_including_ties() {
        // generic random instances
        for seed in 0..3u64 {
            let inst = random_instance(10, 2, 200 + seed);
            let matrices =
                InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config)
                    .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..100 {
                let w = random_feasible(&matrices, &mut rng, 3.0);
                let w2 = random_feasible(&matrices, &mut rng, 3.0);
                let f_w = matrices.objective(&w).unwrap();
                let f_w2 = matrices.objective(&w2).unwrap();
                let g = matrices.subgradient(&w).unwrap();
                let lhs = f_w2 - f_w - g.dot(&(&w2 - &w));
                assert!(lhs >= -1e-8, "subgradient inequality violated by {lhs}");
            }
        }
        // engineered exact tie: identity factorization, identity G
        let fact = truncated_eig(&DMatrix::<f64>::identity(4, 4), 1e-10, 4).unwrap();
        let g = DMatrix::<f64>::identity(4, 4);
        let matrices = InnerProblemMatrices::new(
            &fact,
            Cow::Owned(g),
            vec![true; 4],
            0.05,
            0.1,
        )
        .unwrap();
        // two equal active residuals tie the top eigenvalue exactly
        let w = DVector::from_vec(vec![3.0, 3.0, 1.5, 1.0]);
        let eval = matrices.evaluate(&w).unwrap();
        assert!(eval.eigengap() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let w2 = DVector::from_fn(4, |_, _| 1.0 + 3.0 * rng.gen::<f64>());
            let f_w = matrices.objective(&w).unwrap();
            let f_w2 = matrices.objective(&w2).unwrap();
            let g = matrices.subgradient(&w).unwrap();
            let lhs = f_w2 - f_w - g.dot(&(&w2 - &w));
            assert!(lhs >= -1e-8, "tie case violated by {lhs}");
        }
    }

    #[test]
    fn solver_feasible_and_descending() {
        let inst = random_instance(14, 2, 41);
        let matrices =
            InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config).unwrap();
        let mut config = inst.config.clone();
        config.max_iters = 300;
        let result = solve_weights_with(&matrices, &config).unwrap();
        for i in 0..matrices.n() {
            if matrices.active()[i] {
                assert!(result.w[i] >= 1.0);
            } else {
                assert_eq!(result.w[i], 1.0);
            }
        }
        let start = matrices
            .objective(&DVector::from_element(matrices.n(), 1.0))
            .unwrap();
        let final_obj = matrices.objective(&result.w).unwrap();
        assert!(final_obj <= start + 1e-12);
        // best-so-far trace is non-increasing
        let mut best = f64::INFINITY;
        for &v in &result.objective_trace {
            let next = best.min(v);
            assert!(next <= best);
            best = next;
        }
        assert!((best - final_obj).abs() < 1e-9);
    }

    #[test]
    fn arm_symmetry_bitwise() {
        let inst = random_instance(12, 2, 53);
        let mut config = inst.config.clone();
        config.max_iters = 120;
        config.arm = Arm::Control;
        let control = solve_weights(&inst.ds, &inst.fact, &inst.ctx, &config).unwrap();
        let flipped = inst.ds.flip_treatment();
        config.arm = Arm::Treated;
        let treated = solve_weights(&flipped, &inst.fact, &inst.ctx, &config).unwrap();
        assert_eq!(control.w, treated.w);
        assert_eq!(control.objective_trace, treated.objective_trace);
        assert_eq!(control.iterations, treated.iterations);
    }

    #[test]
    fn marginal_limit_is_rank_one_quadratic() {
        let inst = random_instance(9, 2, 61);
        let matrices =
            InnerProblemMatrices::for_arm_marginal(&inst.ds, &inst.fact, &inst.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_feasible(&matrices, &mut rng, 2.0);
        let got = matrices.objective(&w).unwrap();
        // independent route: diag(y) 1 1^T diag(y) = y y^T
        let y = matrices.residual_signs(&w);
        let u = inst.fact.p().transpose() * &y;
        let mut b = &u * u.transpose() / inst.ds.n() as f64;
        for k in 0..inst.fact.rank() {
            b[(k, k)] -= inst.ds.n() as f64 * inst.config.lambda1 / inst.fact.d()[k];
        }
        let (vals, _) = sorted_symmetric_eigen(&b).unwrap();
        let mut pen = 0.0;
        for i in 0..inst.ds.n() {
            if matrices.active()[i] {
                pen += w[i] * w[i];
            }
        }
        let expected = vals[0] + inst.config.lambda2 * pen / inst.ds.n() as f64;
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn balancing_error_vanishes_when_residual_does() {
        let inst = random_instance(8, 2, 71);
        // u = 0 kills the error regardless of weights
        let zero = DVector::zeros(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = DVector::from_fn(8, |_, _| 1.0 + rng.gen::<f64>());
        let s = balancing_error_s(&w, &zero, &inst.ds, &inst.ctx).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn balancing_error_zero_when_all_weighted_ones() {
        // all-treated data with unit weights: T_i w_i - 1 = 0 identically
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.gen::<f64>());
        let ds = ObservationalDataset::new_unchecked(
            x,
            vec![1; 5],
            DVector::zeros(5),
            vec![0],
            vec![ColumnKind::Continuous; 2],
        );
        let ctx = SmoothingContext::with_defaults(ds.v_matrix(), 0.2).unwrap();
        let w = DVector::from_element(5, 1.0);
        let coeffs = DVector::from_fn(5, |_, _| rng.gen::<f64>());
        let s = balancing_error_s(&w, &coeffs, &ds, &ctx).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn balancing_error_paths_agree() {
        let inst = random_instance(6, 2, 83);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let w = DVector::from_fn(6, |_, _| 1.0 + 2.0 * rng.gen::<f64>());
            let coeffs = DVector::from_fn(6, |_, _| rng.gen::<f64>() - 0.5);
            let a = balancing_error_s(&w, &coeffs, &inst.ds, &inst.ctx).unwrap();
            let b = balancing_error_s_quadrature(&w, &coeffs, &inst.ds, &inst.ctx).unwrap();
            assert!((a - b).abs() < 1e-8, "paths disagree: {a} vs {b}");
        }
    }

    #[test]
    fn inner_sup_rayleigh_bound() {
        let inst = random_instance(8, 2, 97);
        let matrices =
            InnerProblemMatrices::for_arm(&inst.ds, &inst.fact, &inst.ctx, &inst.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let w = random_feasible(&matrices, &mut rng, 2.0);
        let report = verify_inner_sup(&w, &matrices, 1000, &mut rng).unwrap();
        assert!(report.sampled_within_bound(), "{report:?}");
        assert!(report.eigvec_attains(), "{report:?}");
    }

    #[test]
    fn diagonal_b_leading_pair() {
        // B diagonal (2, 1): sigma1 = 2 attained at e1
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let (vals, vecs) = sorted_symmetric_eigen(&b).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-14);
        assert!((vecs[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(vecs[(1, 0)].abs() < 1e-14);
    }
}
