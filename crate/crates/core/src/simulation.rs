//! Synthetic benchmark designs, replicated studies, and their metrics.
//!
//! Four data-generating processes over a four-dimensional covariate built
//! from uniform latents: two propensity forms (logistic in the observed
//! covariates, or in the latents) crossed with linear and nonlinear outcome
//! means. Replicates are generated from independent counter-based RNG
//! streams keyed by `(seed, replicate)`, so results never depend on
//! execution order or parallelism.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{ColumnKind, ObservationalDataset};
use crate::error::{CfbError, Result};
use crate::estimators::{Augmentation, EffectCurve, Method};
use crate::pipeline::{validate_combo, Analysis, CurveOutput, GridSpec, PipelineConfig};

/// One benchmark design: id in 1..=4 and the sample size per replicate.
#[derive(Debug, Clone, Copy)]
pub struct SimSetting {
    pub id: u8,
    pub n: usize,
}

impl SimSetting {
    pub fn new(id: u8, n: usize) -> Result<Self> {
        if !(1..=4).contains(&id) {
            return Err(CfbError::InvalidConfig(format!(
                "setting id must be 1..=4, got {id}"
            )));
        }
        if n < 2 {
            return Err(CfbError::InvalidConfig("setting needs n >= 2".into()));
        }
        Ok(Self { id, n })
    }

    /// Treatment probability given the latents and observed covariates.
    fn propensity(&self, z: &[f64; 4], x: &[f64; 4]) -> f64 {
        let eta = match self.id {
            1 | 3 => x[0] + x[2],
            _ => z[0] + z[1] + z[2],
        };
        1.0 / (1.0 + eta.exp())
    }

    /// Outcome mean for arm `t`.
    fn outcome_mean(&self, t: u8, z: &[f64; 4], x: &[f64; 4]) -> f64 {
        let sign = 2.0 * t as f64 - 1.0;
        match self.id {
            1 | 2 => 10.0 + x[0] + sign * (x[1] + x[3]),
            _ => {
                10.0 + sign * (z[0] * z[0] + 2.0 * z[0] * (2.0 * z[0]).sin())
                    + z[1] * z[1]
                    + (2.0 * z[2]).sin() * z[3] * z[3]
            }
        }
    }

    /// The true effect curve over the first covariate.
    pub fn true_tau(&self, v: f64) -> f64 {
        match self.id {
            1 | 2 => 2.0 * v * v + 2.0 * (2.0 * v).sin(),
            _ => 2.0 * v * v + 4.0 * v * (2.0 * v).sin(),
        }
    }
}

/// Per-sample generation truth kept alongside a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub propensity: Vec<f64>,
}

/// RNG stream for one replicate; depends only on `(seed, replicate)`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn generate(setting: &SimSetting, rng: &mut ChaCha8Rng) -> Result<ObservationalDataset> {
    Ok(generate_with_truth(setting, rng)?.0)
}

/// Draws one dataset; also returns the true per-sample propensities.
pub fn generate_with_truth(
    setting: &SimSetting,
    rng: &mut ChaCha8Rng,
) -> Result<(ObservationalDataset, SimTruth)> {
    let n = setting.n;
    let mut x = DMatrix::zeros(n, 4);
    let mut t = Vec::with_capacity(n);
    let mut y = DVector::zeros(n);
    let mut propensity = Vec::with_capacity(n);
    for i in 0..n {
        let z: [f64; 4] = [
            rng.gen::<f64>() * 4.0 - 2.0,
            rng.gen::<f64>() * 4.0 - 2.0,
            rng.gen::<f64>() * 4.0 - 2.0,
            rng.gen::<f64>() * 4.0 - 2.0,
        ];
        let xi = [
            z[0],
            z[0] * z[0] + z[1],
            (z[2] / 2.0).exp() + z[1],
            (2.0 * z[0]).sin() + z[3],
        ];
        let pi = setting.propensity(&z, &xi);
        let ti = u8::from(rng.gen::<f64>() < pi);
        let noise: f64 = rng.sample(StandardNormal);
        let yi = setting.outcome_mean(ti, &z, &xi) + noise;
        for j in 0..4 {
            x[(i, j)] = xi[j];
        }
        t.push(ti);
        y[i] = yi;
        propensity.push(pi);
    }
    let ds = ObservationalDataset::new(x, t, y, vec![0], vec![ColumnKind::Continuous; 4])?;
    Ok((ds, SimTruth { propensity }))
}

/// Trapezoid integral of the squared error against a reference curve.
pub fn ise_against(curve: &EffectCurve, tau: impl Fn(f64) -> f64) -> f64 {
    let sq = |v: f64, est: f64| {
        let e = est - tau(v);
        e * e
    };
    let mut total = 0.0;
    for k in 1..curve.grid.len() {
        let width = curve.grid[k] - curve.grid[k - 1];
        let left = sq(curve.grid[k - 1], curve.estimate[k - 1]);
        let right = sq(curve.grid[k], curve.estimate[k]);
        total += width * (left + right) / 2.0;
    }
    total
}

pub fn ise(curve: &EffectCurve, setting: &SimSetting) -> f64 {
    ise_against(curve, |v| setting.true_tau(v))
}

/// Aggregated metrics for one `(setting, method, augmentation)` cell.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub setting: u8,
    pub method: Method,
    pub augmentation: Augmentation,
    pub aise: f64,
    pub aise_se: f64,
    pub meise: f64,
    pub n_reps: usize,
    pub n_effective: usize,
}

/// One estimated curve retained from a replicate.
#[derive(Debug, Clone)]
pub struct CurveRecord {
    pub setting: u8,
    pub replicate: usize,
    pub method: Method,
    pub augmentation: Augmentation,
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub settings: Vec<u8>,
    pub methods: Vec<Method>,
    pub augmentations: Vec<Augmentation>,
    pub n: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub pipeline: PipelineConfig,
    pub ise_grid: GridSpec,
    pub keep_curves: bool,
}

impl StudyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps < 2 {
            return Err(CfbError::InvalidConfig("need at least 2 replicates".into()));
        }
        if self.settings.is_empty() || self.methods.is_empty() || self.augmentations.is_empty() {
            return Err(CfbError::InvalidConfig(
                "settings, methods, and augmentations must be non-empty".into(),
            ));
        }
        for &id in &self.settings {
            SimSetting::new(id, self.n)?;
        }
        for &m in &self.methods {
            for &a in &self.augmentations {
                validate_combo(m, a)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<CurveRecord>,
    /// One line per replicate-level failure, for the diagnostics stream.
    pub failures: Vec<String>,
}

struct ReplicateOutcome {
    ises: Vec<Option<f64>>,
    curves: Vec<Option<CurveRecord>>,
    failure: Option<String>,
}

/// Runs every requested cell over shared per-replicate datasets and
/// aggregates AISE, its standard error, and the median ISE.
pub fn run_study(plan: &StudyPlan) -> Result<StudyOutput> {
    plan.validate()?;
    let cells: Vec<(Method, Augmentation)> = plan
        .methods
        .iter()
        .flat_map(|&m| plan.augmentations.iter().map(move |&a| (m, a)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism.max(1))
        .build()
        .map_err(|e| CfbError::InvalidConfig(format!("thread pool: {e}")))?;

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for &setting_id in &plan.settings {
        let setting = SimSetting::new(setting_id, plan.n)?;
        let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
            (0..plan.n_reps)
                .into_par_iter()
                .map(|rep| run_replicate(plan, &setting, rep, &cells))
                .collect()
        });

        for (rep, outcome) in outcomes.iter().enumerate() {
            if let Some(msg) = &outcome.failure {
                failures.push(format!("setting {setting_id} replicate {rep}: {msg}"));
            }
        }
        for (c, &(method, augmentation)) in cells.iter().enumerate() {
            let ises: Vec<f64> = outcomes.iter().filter_map(|o| o.ises[c]).collect();
            let n_effective = ises.len();
            let (aise, aise_se, meise) = summarize(&ises);
            rows.push(MetricsRow {
                setting: setting_id,
                method,
                augmentation,
                aise,
                aise_se,
                meise,
                n_reps: plan.n_reps,
                n_effective,
            });
        }
        if plan.keep_curves {
            for outcome in &outcomes {
                for record in outcome.curves.iter().flatten() {
                    curves.push(record.clone());
                }
            }
        }
    }
    Ok(StudyOutput {
        rows,
        curves,
        failures,
    })
}

fn run_replicate(
    plan: &StudyPlan,
    setting: &SimSetting,
    rep: usize,
    cells: &[(Method, Augmentation)],
) -> ReplicateOutcome {
    let mut ises = vec![None; cells.len()];
    let mut curve_records = vec![None; cells.len()];
    let mut rng = replicate_rng(plan.seed, rep as u64);
    let mut step = || -> Result<(Analysis, crate::estimators::CurveGrid)> {
        let ds = generate(setting, &mut rng)?;
        let analysis = Analysis::new(&ds, plan.pipeline.clone())?;
        let grid = analysis.grid(plan.ise_grid)?;
        Ok((analysis, grid))
    };
    let (mut analysis, grid) = match step() {
        Ok(v) => v,
        Err(e) => {
            return ReplicateOutcome {
                ises,
                curves: curve_records,
                failure: Some(e.to_string()),
            }
        }
    };
    let mut failure = None;
    for (c, &(method, augmentation)) in cells.iter().enumerate() {
        match analysis.curve(method, augmentation, &grid) {
            Ok(CurveOutput { curve, .. }) => {
                ises[c] = Some(ise(&curve, setting));
                if plan.keep_curves {
                    curve_records[c] = Some(CurveRecord {
                        setting: setting.id,
                        replicate: rep,
                        method,
                        augmentation,
                        grid: curve.grid.clone(),
                        estimate: curve.estimate.clone(),
                    });
                }
            }
            Err(e) => {
                failure = Some(format!("{method:?}/{augmentation:?}: {e}"));
            }
        }
    }
    ReplicateOutcome {
        ises,
        curves: curve_records,
        failure,
    }
}

fn summarize(ises: &[f64]) -> (f64, f64, f64) {
    if ises.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = ises.len() as f64;
    let mean = ises.iter().sum::<f64>() / n;
    let se = if ises.len() > 1 {
        let var = ises.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let mut sorted = ises.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    (mean, se, median)
}
