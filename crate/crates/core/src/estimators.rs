//! Effect-curve estimators and their nuisance models.
//!
//! All estimators share one smoothing step: an adjusted response per sample
//! is averaged with the normalized kernel weights at every grid node. The
//! estimators differ in how the adjusted response is built: solved balancing
//! weights (plain or augmented), inverse propensity weights, or an outcome
//! regression contrast.

use nalgebra::{DMatrix, DVector};

use crate::balancing::{Arm, BalanceWeights};
use crate::data::{ObservationalDataset, ScalingMap};
use crate::error::{CfbError, Result};
use crate::kernels::{cross_gram, gram_matrix, ReproducingKernelSpec};
use crate::smoothing::{quantile, SmoothingContext};

/// Curve estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed,
    AteRkhs,
    Ipw,
    Reg,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::AteRkhs => "ate-rkhs",
            Method::Ipw => "ipw",
            Method::Reg => "reg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "ate-rkhs" | "ate_rkhs" => Ok(Method::AteRkhs),
            "ipw" => Ok(Method::Ipw),
            "reg" => Ok(Method::Reg),
            other => Err(CfbError::InvalidConfig(format!(
                "unknown method `{other}` (expected proposed, ate-rkhs, ipw, reg)"
            ))),
        }
    }
}

/// Outcome-model augmentation attached to an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    None,
    Lm,
    Krr,
}

impl Augmentation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Lm => "lm",
            Augmentation::Krr => "krr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "lm" => Ok(Augmentation::Lm),
            "krr" => Ok(Augmentation::Krr),
            other => Err(CfbError::InvalidConfig(format!(
                "unknown augmentation `{other}` (expected none, lm, krr)"
            ))),
        }
    }
}

/// Pointwise effect estimates over a grid of conditioning values, with the
/// grid reported in original units.
#[derive(Debug, Clone)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub method: Method,
    pub augmentation: Augmentation,
    pub h: f64,
}

impl EffectCurve {
    fn new(
        grid: Vec<f64>,
        estimate: Vec<f64>,
        method: Method,
        augmentation: Augmentation,
        h: f64,
    ) -> Result<Self> {
        for pair in grid.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(CfbError::InvalidConfig(
                    "curve grid must be strictly increasing".into(),
                ));
            }
        }
        if estimate.iter().any(|v| !v.is_finite()) {
            return Err(CfbError::SolveFailure(
                "curve estimate is not finite".into(),
            ));
        }
        Ok(Self {
            grid,
            estimate,
            method,
            augmentation,
            h,
        })
    }
}

/// Evaluation grid carried in both original and scaled units.
#[derive(Debug, Clone)]
pub struct CurveGrid {
    pub original: Vec<f64>,
    pub scaled: Vec<f64>,
}

impl CurveGrid {
    pub fn from_original(original: Vec<f64>, map: &ScalingMap, v_col: usize) -> Self {
        let scaled = original.iter().map(|&v| map.scale_value(v_col, v)).collect();
        Self { original, scaled }
    }

    pub fn from_scaled(scaled: Vec<f64>, map: &ScalingMap, v_col: usize) -> Self {
        let original = scaled
            .iter()
            .map(|&v| map.unscale_value(v_col, v))
            .collect();
        Self { original, scaled }
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

/// Equally spaced nodes between the 5th and 95th sample quantiles.
pub fn default_grid(v_raw: &[f64], points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(CfbError::InvalidConfig("grid needs at least 1 point".into()));
    }
    let lo = quantile(v_raw, 0.05);
    let hi = quantile(v_raw, 0.95);
    linear_grid(lo, hi, points)
}

pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points == 1 {
        if lo != hi {
            return Err(CfbError::InvalidConfig(
                "a single-point grid requires equal bounds".into(),
            ));
        }
        return Ok(vec![lo]);
    }
    if !(hi > lo) {
        return Err(CfbError::InvalidConfig(format!(
            "grid bounds must satisfy min < max, got [{lo}, {hi}]"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| lo + k as f64 * step).collect())
}

fn require_scalar_v(ctx: &SmoothingContext) -> Result<()> {
    if ctx.d1() != 1 {
        return Err(CfbError::InvalidConfig(
            "effect curves require a single conditioning column".into(),
        ));
    }
    Ok(())
}

/// Guard for an arm with no kernel mass at a node (an empty neighborhood);
/// the arm's term then contributes zero rather than exploding.
const ARM_MASS_FLOOR: f64 = 1e-12;

/// `(1/N) sum_i ktilde(V_i, v) a_i` at every grid node.
fn smooth_adjusted(ctx: &SmoothingContext, grid: &CurveGrid, adjusted: &DVector<f64>) -> Vec<f64> {
    let n = ctx.n() as f64;
    grid.scaled
        .iter()
        .map(|&v| ctx.ktilde_all(&[v]).dot(adjusted) / n)
        .collect()
}

/// Contrast of the two arm-weighted kernel averages at every grid node.
/// Each arm's term is normalized by its own weighted kernel mass, the ratio
/// form of the weighted smoother: when the weights calibrate the arm mass to
/// one (which the balancing objective drives toward) this coincides with the
/// plain `1/N` average, and under imperfect overlap it stays stable instead
/// of inheriting the mass deficit times the outcome level.
fn smooth_arm_contrast(
    ds: &ObservationalDataset,
    ctx: &SmoothingContext,
    grid: &CurveGrid,
    base: &DVector<f64>,
    treated_term: &DVector<f64>,
    treated_mass: &DVector<f64>,
    control_term: &DVector<f64>,
    control_mass: &DVector<f64>,
) -> Vec<f64> {
    let n = ds.n() as f64;
    grid.scaled
        .iter()
        .map(|&v| {
            let kt = ctx.ktilde_all(&[v]);
            let t_num = kt.dot(treated_term);
            let t_den = kt.dot(treated_mass).max(ARM_MASS_FLOOR);
            let c_num = kt.dot(control_term);
            let c_den = kt.dot(control_mass).max(ARM_MASS_FLOOR);
            kt.dot(base) / n + t_num / t_den - c_num / c_den
        })
        .collect()
}

/// Weighting estimator: contrast of the arm-weighted smoothed outcomes.
pub fn weighting_curve(
    ds: &ObservationalDataset,
    w_treated: &BalanceWeights,
    w_control: &BalanceWeights,
    ctx: &SmoothingContext,
    grid: &CurveGrid,
    method: Method,
) -> Result<EffectCurve> {
    require_scalar_v(ctx)?;
    let zero = DVector::zeros(ds.n());
    let treated_term = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            w_treated.w[i] * ds.y()[i]
        } else {
            0.0
        }
    });
    let treated_mass = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            w_treated.w[i]
        } else {
            0.0
        }
    });
    let control_term = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            0.0
        } else {
            w_control.w[i] * ds.y()[i]
        }
    });
    let control_mass = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            0.0
        } else {
            w_control.w[i]
        }
    });
    EffectCurve::new(
        grid.original.clone(),
        smooth_arm_contrast(
            ds,
            ctx,
            grid,
            &zero,
            &treated_term,
            &treated_mass,
            &control_term,
            &control_mass,
        ),
        method,
        Augmentation::None,
        ctx.h(),
    )
}

/// Augmented weighting estimator: smoothed outcome-model contrast plus the
/// arm-weighted smoothed residuals.
pub fn augmented_curve(
    ds: &ObservationalDataset,
    w_treated: &BalanceWeights,
    w_control: &BalanceWeights,
    outcome: &OutcomeModel,
    ctx: &SmoothingContext,
    grid: &CurveGrid,
    method: Method,
) -> Result<EffectCurve> {
    require_scalar_v(ctx)?;
    let (m1, m0) = outcome.predict_all(ds)?;
    let base = &m1 - &m0;
    let treated_term = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            w_treated.w[i] * (ds.y()[i] - m1[i])
        } else {
            0.0
        }
    });
    let treated_mass = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            w_treated.w[i]
        } else {
            0.0
        }
    });
    let control_term = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            0.0
        } else {
            w_control.w[i] * (ds.y()[i] - m0[i])
        }
    });
    let control_mass = DVector::from_fn(ds.n(), |i, _| {
        if ds.is_treated(i) {
            0.0
        } else {
            w_control.w[i]
        }
    });
    EffectCurve::new(
        grid.original.clone(),
        smooth_arm_contrast(
            ds,
            ctx,
            grid,
            &base,
            &treated_term,
            &treated_mass,
            &control_term,
            &control_mass,
        ),
        method,
        outcome.augmentation(),
        ctx.h(),
    )
}

/// Clamp activity of the fitted propensities on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct IpwDiagnostics {
    pub clamp_fraction: f64,
    /// Set when more than half of the sample hit the probability clamp.
    pub degenerate: bool,
}

/// Inverse propensity weighting estimator, optionally augmented.
pub fn ipw_curve(
    ds: &ObservationalDataset,
    propensity: &PropensityModel,
    ctx: &SmoothingContext,
    grid: &CurveGrid,
    augment: Option<&OutcomeModel>,
) -> Result<(EffectCurve, IpwDiagnostics)> {
    require_scalar_v(ctx)?;
    let (probs, clamped) = propensity.predict_all(ds);
    let clamp_fraction = clamped as f64 / ds.n() as f64;
    let adjusted = match augment {
        None => DVector::from_fn(ds.n(), |i, _| {
            if ds.is_treated(i) {
                ds.y()[i] / probs[i]
            } else {
                -ds.y()[i] / (1.0 - probs[i])
            }
        }),
        Some(outcome) => {
            let (m1, m0) = outcome.predict_all(ds)?;
            DVector::from_fn(ds.n(), |i, _| {
                let base = m1[i] - m0[i];
                if ds.is_treated(i) {
                    base + (ds.y()[i] - m1[i]) / probs[i]
                } else {
                    base - (ds.y()[i] - m0[i]) / (1.0 - probs[i])
                }
            })
        }
    };
    let augmentation = augment.map_or(Augmentation::None, |o| o.augmentation());
    let curve = EffectCurve::new(
        grid.original.clone(),
        smooth_adjusted(ctx, grid, &adjusted),
        Method::Ipw,
        augmentation,
        ctx.h(),
    )?;
    Ok((
        curve,
        IpwDiagnostics {
            clamp_fraction,
            degenerate: clamp_fraction > 0.5,
        },
    ))
}

/// Outcome-regression estimator: smooths the fitted contrast.
pub fn reg_curve(
    ds: &ObservationalDataset,
    outcome: &OutcomeModel,
    ctx: &SmoothingContext,
    grid: &CurveGrid,
) -> Result<EffectCurve> {
    require_scalar_v(ctx)?;
    let (m1, m0) = outcome.predict_all(ds)?;
    let adjusted = &m1 - &m0;
    EffectCurve::new(
        grid.original.clone(),
        smooth_adjusted(ctx, grid, &adjusted),
        Method::Reg,
        outcome.augmentation(),
        ctx.h(),
    )
}

pub const DEFAULT_PROPENSITY_CLIP: f64 = 0.01;
const IRLS_MAX_ITERS: usize = 100;
const IRLS_GRAD_TOL: f64 = 1e-8;
const SEPARATION_NORM: f64 = 1e3;

/// Logistic propensity model fitted by iteratively reweighted least squares.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    /// Intercept first, then one slope per covariate column.
    pub coef: DVector<f64>,
    pub clip: f64,
}

impl PropensityModel {
    pub fn constant(p: f64, d: usize) -> Self {
        let mut coef = DVector::zeros(d + 1);
        coef[0] = (p / (1.0 - p)).ln();
        Self {
            coef,
            clip: DEFAULT_PROPENSITY_CLIP,
        }
    }

    fn linear_predictor(&self, ds: &ObservationalDataset, i: usize) -> f64 {
        let mut eta = self.coef[0];
        for j in 0..ds.dim() {
            eta += self.coef[j + 1] * ds.x()[(i, j)];
        }
        eta
    }

    /// Clamped probabilities plus the number of samples the clamp touched.
    pub fn predict_all(&self, ds: &ObservationalDataset) -> (DVector<f64>, usize) {
        let mut clamped = 0usize;
        let probs = DVector::from_fn(ds.n(), |i, _| {
            let p = sigmoid(self.linear_predictor(ds, i));
            if p < self.clip || p > 1.0 - self.clip {
                clamped += 1;
            }
            p.clamp(self.clip, 1.0 - self.clip)
        });
        (probs, clamped)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn design_matrix(ds: &ObservationalDataset) -> DMatrix<f64> {
    DMatrix::from_fn(ds.n(), ds.dim() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            ds.x()[(i, j - 1)]
        }
    })
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax.max(1.0))
        .count()
}

/// Fits the propensity model on all covariates plus an intercept. Runs IRLS
/// until the log-likelihood gradient norm drops below 1e-8 or 100 iterations.
pub fn fit_logistic(ds: &ObservationalDataset) -> Result<PropensityModel> {
    let z = design_matrix(ds);
    let p_cols = z.ncols();
    if matrix_rank(&z) < p_cols {
        return Err(CfbError::RankDeficient);
    }
    let t = DVector::from_fn(ds.n(), |i, _| ds.t()[i] as f64);
    let mut beta = DVector::zeros(p_cols);
    for _ in 0..IRLS_MAX_ITERS {
        let eta = &z * &beta;
        let mu = eta.map(sigmoid);
        let grad = z.transpose() * (&t - &mu);
        if grad.norm() < IRLS_GRAD_TOL {
            break;
        }
        let mut weighted = z.clone();
        for i in 0..ds.n() {
            let w = (mu[i] * (1.0 - mu[i])).max(1e-10);
            for j in 0..p_cols {
                weighted[(i, j)] *= w;
            }
        }
        let hessian = z.transpose() * weighted;
        let step = hessian
            .cholesky()
            .ok_or(CfbError::SeparationDetected)?
            .solve(&grad);
        beta += step;
        if beta.norm() > SEPARATION_NORM {
            return Err(CfbError::SeparationDetected);
        }
    }
    Ok(PropensityModel {
        coef: beta,
        clip: DEFAULT_PROPENSITY_CLIP,
    })
}

/// Ridge levels tried by the kernel ridge cross-validation: 13 geometric
/// points from 1e-6 to 1.
pub fn krr_lambda_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect()
}

const KRR_CV_FOLDS: usize = 5;

/// Per-arm fitted outcome regression.
#[derive(Debug, Clone)]
enum ArmFit {
    Linear {
        /// Intercept first.
        coef: DVector<f64>,
    },
    Krr {
        support: DMatrix<f64>,
        coef: DVector<f64>,
        intercept: f64,
        lambda: f64,
    },
}

/// Outcome mean models for both arms, linear or kernel ridge.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    treated: ArmFit,
    control: ArmFit,
    augmentation: Augmentation,
    spec: Option<ReproducingKernelSpec>,
}

impl OutcomeModel {
    /// Identically-zero model; augmenting with it reproduces the plain
    /// weighting estimator.
    pub fn zero(d: usize) -> Self {
        Self {
            treated: ArmFit::Linear {
                coef: DVector::zeros(d + 1),
            },
            control: ArmFit::Linear {
                coef: DVector::zeros(d + 1),
            },
            augmentation: Augmentation::Lm,
            spec: None,
        }
    }

    /// Linear model from explicit per-arm coefficients (intercept first).
    pub fn linear_from_coefs(treated: DVector<f64>, control: DVector<f64>) -> Self {
        Self {
            treated: ArmFit::Linear { coef: treated },
            control: ArmFit::Linear { coef: control },
            augmentation: Augmentation::Lm,
            spec: None,
        }
    }

    pub fn augmentation(&self) -> Augmentation {
        self.augmentation
    }

    /// Chosen ridge levels `(treated, control)` when the model is KRR.
    pub fn krr_lambdas(&self) -> Option<(f64, f64)> {
        match (&self.treated, &self.control) {
            (ArmFit::Krr { lambda: lt, .. }, ArmFit::Krr { lambda: lc, .. }) => Some((*lt, *lc)),
            _ => None,
        }
    }

    fn arm(&self, arm: Arm) -> &ArmFit {
        match arm {
            Arm::Treated => &self.treated,
            Arm::Control => &self.control,
        }
    }

    pub fn predict_arm(&self, arm: Arm, x_row: &[f64]) -> Result<f64> {
        match self.arm(arm) {
            ArmFit::Linear { coef } => {
                let mut v = coef[0];
                for (j, &x) in x_row.iter().enumerate() {
                    v += coef[j + 1] * x;
                }
                Ok(v)
            }
            ArmFit::Krr {
                support,
                coef,
                intercept,
                ..
            } => {
                let spec = self.spec.as_ref().expect("krr model carries its kernel");
                let mut v = *intercept;
                for (j, c) in coef.iter().enumerate() {
                    let srow: Vec<f64> =
                        (0..support.ncols()).map(|k| support[(j, k)]).collect();
                    v += c * crate::kernels::tensor_kernel(&srow, x_row, spec)?;
                }
                Ok(v)
            }
        }
    }

    /// Predictions `(m1, m0)` at every sample point.
    pub fn predict_all(&self, ds: &ObservationalDataset) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut m1 = DVector::zeros(ds.n());
        let mut m0 = DVector::zeros(ds.n());
        match (&self.treated, &self.control) {
            // batch path for KRR to avoid per-row cross-gram rebuilds
            (ArmFit::Krr { .. }, ArmFit::Krr { .. }) => {
                let spec = self.spec.as_ref().expect("krr model carries its kernel");
                for (arm, out) in [(Arm::Treated, &mut m1), (Arm::Control, &mut m0)] {
                    if let ArmFit::Krr {
                        support,
                        coef,
                        intercept,
                        ..
                    } = self.arm(arm)
                    {
                        let k = cross_gram(ds.x(), support, spec)?;
                        let v = k * coef;
                        for i in 0..ds.n() {
                            out[i] = intercept + v[i];
                        }
                    }
                }
            }
            _ => {
                for i in 0..ds.n() {
                    let row: Vec<f64> = (0..ds.dim()).map(|j| ds.x()[(i, j)]).collect();
                    m1[i] = self.predict_arm(Arm::Treated, &row)?;
                    m0[i] = self.predict_arm(Arm::Control, &row)?;
                }
            }
        }
        Ok((m1, m0))
    }
}

fn arm_rows(ds: &ObservationalDataset, arm: Arm) -> Vec<usize> {
    (0..ds.n())
        .filter(|&i| match arm {
            Arm::Treated => ds.is_treated(i),
            Arm::Control => !ds.is_treated(i),
        })
        .collect()
}

fn submatrix(ds: &ObservationalDataset, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ds.dim(), |i, j| ds.x()[(rows[i], j)])
}

fn subvector(y: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| y[rows[i]])
}

fn fit_lm_arm(ds: &ObservationalDataset, arm: Arm) -> Result<ArmFit> {
    let rows = arm_rows(ds, arm);
    let x = submatrix(ds, &rows);
    let y = subvector(ds.y(), &rows);
    let n = rows.len();
    let p = ds.dim() + 1;
    let z = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    if n < p || matrix_rank(&z) < p {
        return Err(CfbError::RankDeficient);
    }
    let coef = z
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| CfbError::SolveFailure(e.to_string()))?;
    Ok(ArmFit::Linear { coef })
}

/// Per-arm linear outcome models (intercept plus all covariates).
pub fn fit_lm(ds: &ObservationalDataset) -> Result<OutcomeModel> {
    Ok(OutcomeModel {
        treated: fit_lm_arm(ds, Arm::Treated)?,
        control: fit_lm_arm(ds, Arm::Control)?,
        augmentation: Augmentation::Lm,
        spec: None,
    })
}

fn krr_solve(
    m: &DMatrix<f64>,
    y_centered: &DVector<f64>,
    n: usize,
    lambda: f64,
) -> Result<DVector<f64>> {
    let mut a = m.clone();
    let ridge = n as f64 * lambda;
    for k in 0..a.nrows() {
        a[(k, k)] += ridge;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(y_centered));
    }
    a.lu()
        .solve(y_centered)
        .ok_or_else(|| CfbError::SolveFailure("kernel ridge system is singular".into()))
}

fn fit_krr_arm(
    ds: &ObservationalDataset,
    arm: Arm,
    spec: &ReproducingKernelSpec,
    lambda: Option<f64>,
) -> Result<ArmFit> {
    let rows = arm_rows(ds, arm);
    let n = rows.len();
    let x = submatrix(ds, &rows);
    let y = subvector(ds.y(), &rows);
    let m = gram_matrix(&x, spec)?;
    let ybar = y.sum() / n as f64;
    let yc = y.map(|v| v - ybar);

    let lambda = match lambda {
        Some(l) => l,
        None => {
            // k-fold CV over the geometric grid; scan from the largest level
            // down and keep strict improvements so ties resolve upward
            let folds = KRR_CV_FOLDS.min(n).max(1);
            let mut best = (f64::INFINITY, 1.0);
            let mut grid = krr_lambda_grid();
            grid.reverse();
            for cand in grid {
                let mut sse = 0.0;
                for fold in 0..folds {
                    let train: Vec<usize> = (0..n).filter(|i| i % folds != fold).collect();
                    let val: Vec<usize> = (0..n).filter(|i| i % folds == fold).collect();
                    if train.is_empty() || val.is_empty() {
                        continue;
                    }
                    let mt = DMatrix::from_fn(train.len(), train.len(), |a, b| {
                        m[(train[a], train[b])]
                    });
                    let yt = DVector::from_fn(train.len(), |a, _| y[train[a]]);
                    let yt_bar = yt.sum() / train.len() as f64;
                    let ytc = yt.map(|v| v - yt_bar);
                    let coef = krr_solve(&mt, &ytc, train.len(), cand)?;
                    for &vi in &val {
                        let mut pred = yt_bar;
                        for (a, &ti) in train.iter().enumerate() {
                            pred += coef[a] * m[(vi, ti)];
                        }
                        let e = pred - y[vi];
                        sse += e * e;
                    }
                }
                if sse < best.0 {
                    best = (sse, cand);
                }
            }
            best.1
        }
    };

    let coef = krr_solve(&m, &yc, n, lambda)?;
    Ok(ArmFit::Krr {
        support: x,
        coef,
        intercept: ybar,
        lambda,
    })
}

/// Per-arm kernel ridge outcome models with the ridge level chosen by k-fold
/// cross-validation.
pub fn fit_krr(ds: &ObservationalDataset, spec: &ReproducingKernelSpec) -> Result<OutcomeModel> {
    Ok(OutcomeModel {
        treated: fit_krr_arm(ds, Arm::Treated, spec, None)?,
        control: fit_krr_arm(ds, Arm::Control, spec, None)?,
        augmentation: Augmentation::Krr,
        spec: Some(spec.clone()),
    })
}

/// Kernel ridge outcome models at a fixed ridge level.
pub fn fit_krr_with_lambda(
    ds: &ObservationalDataset,
    spec: &ReproducingKernelSpec,
    lambda: f64,
) -> Result<OutcomeModel> {
    Ok(OutcomeModel {
        treated: fit_krr_arm(ds, Arm::Treated, spec, Some(lambda))?,
        control: fit_krr_arm(ds, Arm::Control, spec, Some(lambda))?,
        augmentation: Augmentation::Krr,
        spec: Some(spec.clone()),
    })
}
