//! End-to-end estimation pipeline shared by the CLI and the simulation
//! harness: rescale the data, factorize the Gram matrix, precompute the
//! smoothing context, then build whichever curves are requested while
//! caching the pieces estimators share (weight solves, outcome models,
//! the propensity fit).

use nalgebra::DVector;

use crate::balancing::{
    default_lambda1, default_lambda2, solve_weights_from, solve_weights_marginal, Arm,
    BalanceCriterion, BalanceWeights, BalancingConfig, DEFAULT_EIG_TIE_TOL, DEFAULT_MAX_ITERS,
    DEFAULT_STEP0, DEFAULT_TOL_OBJ,
};
use crate::data::{apply_scaling, fit_scaling, ObservationalDataset, ScalingMap};
use crate::error::{CfbError, Result};
use crate::estimators::{
    augmented_curve, default_grid, fit_krr, fit_lm, fit_logistic, ipw_curve, linear_grid,
    reg_curve, weighting_curve, Augmentation, CurveGrid, EffectCurve, Method, OutcomeModel,
    PropensityModel,
};
use crate::kernels::{gram_matrix, truncated_eig, GramFactorization, ReproducingKernelSpec};
use crate::smoothing::{
    bandwidth_default, SmoothingContext, DEFAULT_DENOM_FLOOR, DEFAULT_QUADRATURE_BUDGET,
    DEFAULT_QUADRATURE_POINTS,
};

pub const DEFAULT_TOL_REL: f64 = 1e-10;
pub const DEFAULT_GRID_POINTS: usize = 100;

/// Every tuning knob of the pipeline; `None` means the built-in rule.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub bandwidth: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub quadrature_points: usize,
    pub denom_floor: f64,
    pub quadrature_budget: f64,
    pub tol_rel: f64,
    pub r_max: Option<usize>,
    pub max_iters: usize,
    pub step0: f64,
    pub tol_obj: f64,
    pub eig_tie_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            lambda1: None,
            lambda2: None,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            denom_floor: DEFAULT_DENOM_FLOOR,
            quadrature_budget: DEFAULT_QUADRATURE_BUDGET,
            tol_rel: DEFAULT_TOL_REL,
            r_max: None,
            max_iters: DEFAULT_MAX_ITERS,
            step0: DEFAULT_STEP0,
            tol_obj: DEFAULT_TOL_OBJ,
            eig_tie_tol: DEFAULT_EIG_TIE_TOL,
        }
    }
}

/// How the evaluation grid is chosen.
#[derive(Debug, Clone, Copy)]
pub enum GridSpec {
    /// Equally spaced nodes between the 5th and 95th sample quantiles.
    Quantiles { points: usize },
    /// Explicit bounds in original units.
    Explicit { min: f64, max: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles {
            points: DEFAULT_GRID_POINTS,
        }
    }
}

/// A curve plus any warnings raised while building it.
#[derive(Debug, Clone)]
pub struct CurveOutput {
    pub curve: EffectCurve,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct ModelCache {
    smoothed: Option<(BalanceWeights, BalanceWeights)>,
    marginal: Option<(BalanceWeights, BalanceWeights)>,
    propensity: Option<PropensityModel>,
    lm: Option<OutcomeModel>,
    krr: Option<OutcomeModel>,
}

/// One dataset prepared for estimation, with lazily cached fitted pieces.
pub struct Analysis {
    ds: ObservationalDataset,
    scaling: ScalingMap,
    v_raw: Vec<f64>,
    spec: ReproducingKernelSpec,
    fact: GramFactorization,
    ctx: SmoothingContext,
    h: f64,
    config: PipelineConfig,
    cache: ModelCache,
}

impl Analysis {
    pub fn new(ds_raw: &ObservationalDataset, config: PipelineConfig) -> Result<Self> {
        let scaling = fit_scaling(ds_raw)?;
        let ds = apply_scaling(ds_raw, &scaling);
        let v_raw: Vec<f64> = (0..ds_raw.n())
            .map(|i| ds_raw.x()[(i, ds_raw.v_cols()[0])])
            .collect();
        let spec = ReproducingKernelSpec::for_dataset(&ds);
        let m = gram_matrix(ds.x(), &spec)?;
        let r_max = config.r_max.unwrap_or(ds.n()).max(1);
        let fact = truncated_eig(&m, config.tol_rel, r_max)?;
        let h = match config.bandwidth {
            Some(h) => h,
            None => default_bandwidth_for(&ds)?,
        };
        let ctx = SmoothingContext::new(
            ds.v_matrix(),
            h,
            config.quadrature_points,
            config.denom_floor,
            config.quadrature_budget,
        )?;
        Ok(Self {
            ds,
            scaling,
            v_raw,
            spec,
            fact,
            ctx,
            h,
            config,
            cache: ModelCache::default(),
        })
    }

    pub fn ds(&self) -> &ObservationalDataset {
        &self.ds
    }

    pub fn scaling(&self) -> &ScalingMap {
        &self.scaling
    }

    pub fn ctx(&self) -> &SmoothingContext {
        &self.ctx
    }

    pub fn factorization(&self) -> &GramFactorization {
        &self.fact
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn v_raw(&self) -> &[f64] {
        &self.v_raw
    }

    fn balancing_config(&self, arm: Arm) -> BalancingConfig {
        let n = self.ds.n();
        let d1 = self.ds.d1();
        BalancingConfig {
            lambda1: self
                .config
                .lambda1
                .unwrap_or_else(|| default_lambda1(n, self.h, d1)),
            lambda2: self.config.lambda2.unwrap_or_else(|| default_lambda2(n)),
            h: self.h,
            arm,
            max_iters: self.config.max_iters,
            step0: self.config.step0,
            tol_obj: self.config.tol_obj,
            eig_tie_tol: self.config.eig_tie_tol,
        }
    }

    /// Solved weights `(treated, control)` under the given criterion, cached.
    /// The smoothed solve warm-starts from the marginal solution: both
    /// problems are convex with the same feasible set, and the marginal
    /// optimum is a far better initial iterate than flat weights.
    pub fn weights(&mut self, criterion: BalanceCriterion) -> Result<(BalanceWeights, BalanceWeights)> {
        let slot = match criterion {
            BalanceCriterion::Smoothed => &self.cache.smoothed,
            BalanceCriterion::MarginalLimit => &self.cache.marginal,
        };
        if let Some(pair) = slot {
            return Ok(pair.clone());
        }
        let pair = match criterion {
            BalanceCriterion::MarginalLimit => {
                let solve = |arm: Arm, this: &Self| -> Result<BalanceWeights> {
                    solve_weights_marginal(&this.ds, &this.fact, &this.balancing_config(arm))
                };
                (solve(Arm::Treated, self)?, solve(Arm::Control, self)?)
            }
            BalanceCriterion::Smoothed => {
                let (mt, mc) = self.weights(BalanceCriterion::MarginalLimit)?;
                let solve = |arm: Arm, start: DVector<f64>, this: &Self| -> Result<BalanceWeights> {
                    let config = this.balancing_config(arm);
                    let matrices = crate::balancing::InnerProblemMatrices::for_arm(
                        &this.ds, &this.fact, &this.ctx, &config,
                    )?;
                    solve_weights_from(&matrices, &config, start)
                };
                (
                    solve(Arm::Treated, mt.w, self)?,
                    solve(Arm::Control, mc.w, self)?,
                )
            }
        };
        match criterion {
            BalanceCriterion::Smoothed => self.cache.smoothed = Some(pair.clone()),
            BalanceCriterion::MarginalLimit => self.cache.marginal = Some(pair.clone()),
        }
        Ok(pair)
    }

    pub fn propensity(&mut self) -> Result<PropensityModel> {
        if self.cache.propensity.is_none() {
            self.cache.propensity = Some(fit_logistic(&self.ds)?);
        }
        Ok(self.cache.propensity.clone().unwrap())
    }

    /// Fitted outcome model for an augmentation choice, cached; `None` for
    /// the unaugmented case.
    pub fn outcome(&mut self, aug: Augmentation) -> Result<Option<OutcomeModel>> {
        match aug {
            Augmentation::None => Ok(None),
            Augmentation::Lm => {
                if self.cache.lm.is_none() {
                    self.cache.lm = Some(fit_lm(&self.ds)?);
                }
                Ok(self.cache.lm.clone())
            }
            Augmentation::Krr => {
                if self.cache.krr.is_none() {
                    self.cache.krr = Some(fit_krr(&self.ds, &self.spec)?);
                }
                Ok(self.cache.krr.clone())
            }
        }
    }

    /// Evaluation grid in original units per the grid rule.
    pub fn grid(&self, spec: GridSpec) -> Result<CurveGrid> {
        let original = match spec {
            GridSpec::Quantiles { points } => default_grid(&self.v_raw, points)?,
            GridSpec::Explicit { min, max, points } => linear_grid(min, max, points)?,
        };
        Ok(CurveGrid::from_original(
            original,
            &self.scaling,
            self.ds.v_cols()[0],
        ))
    }

    /// The requested effect curve, fitting and caching whatever it needs.
    pub fn curve(
        &mut self,
        method: Method,
        aug: Augmentation,
        grid: &CurveGrid,
    ) -> Result<CurveOutput> {
        validate_combo(method, aug)?;
        let mut warnings = Vec::new();
        let curve = match method {
            Method::Proposed | Method::AteRkhs => {
                let criterion = if method == Method::Proposed {
                    BalanceCriterion::Smoothed
                } else {
                    BalanceCriterion::MarginalLimit
                };
                let (wt, wc) = self.weights(criterion)?;
                if !wt.converged || !wc.converged {
                    warnings.push(format!(
                        "weight solve did not meet the stall criterion within {} iterations",
                        self.config.max_iters
                    ));
                }
                match self.outcome(aug)? {
                    None => weighting_curve(&self.ds, &wt, &wc, &self.ctx, grid, method)?,
                    Some(outcome) => {
                        augmented_curve(&self.ds, &wt, &wc, &outcome, &self.ctx, grid, method)?
                    }
                }
            }
            Method::Ipw => {
                let prop = self.propensity()?;
                let outcome = self.outcome(aug)?;
                let (curve, diag) =
                    ipw_curve(&self.ds, &prop, &self.ctx, grid, outcome.as_ref())?;
                if diag.degenerate {
                    warnings.push(format!(
                        "propensity clamp active on {:.1}% of samples",
                        100.0 * diag.clamp_fraction
                    ));
                }
                curve
            }
            Method::Reg => {
                let outcome = self.outcome(aug)?.expect("validated above");
                reg_curve(&self.ds, &outcome, &self.ctx, grid)?
            }
        };
        Ok(CurveOutput { curve, warnings })
    }
}

/// Outcome-regression curves need an outcome model.
pub fn validate_combo(method: Method, aug: Augmentation) -> Result<()> {
    if method == Method::Reg && aug == Augmentation::None {
        return Err(CfbError::InvalidConfig(
            "method `reg` requires an outcome model: use --augment lm or krr".into(),
        ));
    }
    Ok(())
}

/// Default bandwidth for a scaled dataset: the reference rule per
/// conditioning column, combined by geometric mean when there are several.
pub fn default_bandwidth_for(ds_scaled: &ObservationalDataset) -> Result<f64> {
    let v = ds_scaled.v_matrix();
    let mut log_sum = 0.0;
    for k in 0..ds_scaled.d1() {
        let col: Vec<f64> = (0..ds_scaled.n()).map(|i| v[(i, k)]).collect();
        log_sum += bandwidth_default(&col)?.ln();
    }
    Ok((log_sum / ds_scaled.d1() as f64).exp())
}

/// Oracle inverse-propensity weights packaged for the weighting estimator.
pub fn oracle_weights(propensities: &[f64]) -> (BalanceWeights, BalanceWeights) {
    let n = propensities.len();
    let wrap = |w: DVector<f64>| BalanceWeights {
        w,
        objective_trace: Vec::new(),
        final_eigengap: f64::INFINITY,
        iterations: 0,
        converged: true,
    };
    let treated = wrap(DVector::from_fn(n, |i, _| 1.0 / propensities[i]));
    let control = wrap(DVector::from_fn(n, |i, _| 1.0 / (1.0 - propensities[i])));
    (treated, control)
}
