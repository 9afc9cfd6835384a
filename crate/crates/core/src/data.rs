//! Datasets, covariate scaling, and CSV ingestion.
//!
//! Every downstream computation (kernels, smoothing, balancing) operates on
//! covariates rescaled to the unit cube. `ScalingMap` records the per-column
//! affine maps so grids and curves can be reported back in original units.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{CfbError, Result};

/// Per-column tag controlling which reproducing kernel applies and whether
/// the column participates in min-max rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

/// An observational sample: covariates `X`, binary treatment `T`, outcome `Y`,
/// and the indices of the conditioning columns `V` within `X`.
#[derive(Debug, Clone)]
pub struct ObservationalDataset {
    x: DMatrix<f64>,
    t: Vec<u8>,
    y: DVector<f64>,
    v_cols: Vec<usize>,
    col_kinds: Vec<ColumnKind>,
}

impl ObservationalDataset {
    pub fn new(
        x: DMatrix<f64>,
        t: Vec<u8>,
        y: DVector<f64>,
        v_cols: Vec<usize>,
        col_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let n = x.nrows();
        let d = x.ncols();
        if n < 2 {
            return Err(CfbError::InvalidDataset(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        if t.len() != n || y.len() != n {
            return Err(CfbError::InvalidDataset(format!(
                "row counts disagree: X has {n}, T has {}, Y has {}",
                t.len(),
                y.len()
            )));
        }
        if col_kinds.len() != d {
            return Err(CfbError::InvalidDataset(format!(
                "{} column kinds for {} columns",
                col_kinds.len(),
                d
            )));
        }
        if t.iter().any(|&ti| ti > 1) {
            return Err(CfbError::InvalidDataset(
                "treatment vector contains values outside {0,1}".into(),
            ));
        }
        let n_treated = t.iter().filter(|&&ti| ti == 1).count();
        if n_treated == 0 || n_treated == n {
            return Err(CfbError::InvalidDataset(
                "both treatment arms must be non-empty".into(),
            ));
        }
        for (j, kind) in col_kinds.iter().enumerate() {
            if *kind == ColumnKind::Binary {
                for i in 0..n {
                    let v = x[(i, j)];
                    if v != 0.0 && v != 1.0 {
                        return Err(CfbError::InvalidDataset(format!(
                            "column {j} is tagged binary but contains {v} at row {i}"
                        )));
                    }
                }
            }
        }
        if v_cols.is_empty() {
            return Err(CfbError::InvalidDataset(
                "at least one conditioning column is required".into(),
            ));
        }
        let mut seen = vec![false; d];
        for &c in &v_cols {
            if c >= d {
                return Err(CfbError::InvalidDataset(format!(
                    "conditioning column index {c} out of range (d = {d})"
                )));
            }
            if seen[c] {
                return Err(CfbError::InvalidDataset(format!(
                    "conditioning column index {c} listed twice"
                )));
            }
            if col_kinds[c] != ColumnKind::Continuous {
                return Err(CfbError::InvalidDataset(format!(
                    "conditioning column {c} must be continuous"
                )));
            }
            seen[c] = true;
        }
        Ok(Self {
            x,
            t,
            y,
            v_cols,
            col_kinds,
        })
    }

    /// Constructor that skips arm-balance validation, for internal tests of
    /// degenerate configurations.
    #[allow(dead_code)]
    pub(crate) fn new_unchecked(
        x: DMatrix<f64>,
        t: Vec<u8>,
        y: DVector<f64>,
        v_cols: Vec<usize>,
        col_kinds: Vec<ColumnKind>,
    ) -> Self {
        Self {
            x,
            t,
            y,
            v_cols,
            col_kinds,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn d1(&self) -> usize {
        self.v_cols.len()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn v_cols(&self) -> &[usize] {
        &self.v_cols
    }

    pub fn col_kinds(&self) -> &[ColumnKind] {
        &self.col_kinds
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.t[i] == 1
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().filter(|&&ti| ti == 1).count()
    }

    /// The N×d1 matrix of conditioning values, columns in `v_cols` order.
    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.d1(), |i, k| self.x[(i, self.v_cols[k])])
    }

    /// Copy of the dataset with treatment labels flipped.
    pub fn flip_treatment(&self) -> Self {
        let mut out = self.clone();
        for ti in &mut out.t {
            *ti = 1 - *ti;
        }
        out
    }
}

/// Affine rescaling of each continuous column to `[0, 1]`; binary columns
/// pass through untouched.
#[derive(Debug, Clone)]
pub struct ScalingMap {
    cols: Vec<ColumnScale>,
}

#[derive(Debug, Clone, Copy)]
enum ColumnScale {
    Continuous { min: f64, max: f64 },
    Binary,
}

impl ScalingMap {
    pub fn scale_value(&self, col: usize, v: f64) -> f64 {
        match self.cols[col] {
            ColumnScale::Continuous { min, max } => (v - min) / (max - min),
            ColumnScale::Binary => v,
        }
    }

    pub fn unscale_value(&self, col: usize, v: f64) -> f64 {
        match self.cols[col] {
            ColumnScale::Continuous { min, max } => min + v * (max - min),
            ColumnScale::Binary => v,
        }
    }
}

/// Records per-column min/max over the sample. Constant continuous columns
/// are rejected since their affine map would degenerate.
pub fn fit_scaling(ds: &ObservationalDataset) -> Result<ScalingMap> {
    let mut cols = Vec::with_capacity(ds.dim());
    for j in 0..ds.dim() {
        match ds.col_kinds()[j] {
            ColumnKind::Binary => cols.push(ColumnScale::Binary),
            ColumnKind::Continuous => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for i in 0..ds.n() {
                    let v = ds.x()[(i, j)];
                    min = min.min(v);
                    max = max.max(v);
                }
                if !(max > min) {
                    return Err(CfbError::ConstantColumn(format!("column {j}")));
                }
                cols.push(ColumnScale::Continuous { min, max });
            }
        }
    }
    Ok(ScalingMap { cols })
}

/// Applies the map; `N`, `d`, `T`, `Y` are preserved exactly.
pub fn apply_scaling(ds: &ObservationalDataset, map: &ScalingMap) -> ObservationalDataset {
    let x = DMatrix::from_fn(ds.n(), ds.dim(), |i, j| map.scale_value(j, ds.x()[(i, j)]));
    ObservationalDataset {
        x,
        t: ds.t.clone(),
        y: ds.y.clone(),
        v_cols: ds.v_cols.clone(),
        col_kinds: ds.col_kinds.clone(),
    }
}

/// Named-column view of a CSV file for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub treatment_col: String,
    pub outcome_col: String,
    pub v_cols: Vec<String>,
    pub covariate_cols: Vec<String>,
    /// One kind per covariate column, in `covariate_cols` order. When `None`,
    /// columns whose observed values all lie in {0, 1} are tagged binary.
    pub kinds: Option<Vec<ColumnKind>>,
}

/// Reads a comma-separated, UTF-8, headered file into a dataset. Column order
/// follows `schema.covariate_cols`; missing cells are a hard error.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CfbError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CfbError::Csv {
            path: path.display().to_string(),
            source: e,
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CfbError::MissingColumn(name.to_string()))
    };

    let t_idx = col_index(&schema.treatment_col)?;
    let y_idx = col_index(&schema.outcome_col)?;
    let cov_idx: Vec<usize> = schema
        .covariate_cols
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let v_cols: Vec<usize> = schema
        .v_cols
        .iter()
        .map(|v| {
            schema
                .covariate_cols
                .iter()
                .position(|c| c == v)
                .ok_or_else(|| CfbError::MissingColumn(v.clone()))
        })
        .collect::<Result<_>>()?;

    if let Some(kinds) = &schema.kinds {
        if kinds.len() != schema.covariate_cols.len() {
            return Err(CfbError::InvalidConfig(format!(
                "{} kinds given for {} covariate columns",
                kinds.len(),
                schema.covariate_cols.len()
            )));
        }
    }

    let parse_cell = |row: usize, col: &str, raw: &str| -> Result<f64> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(CfbError::MissingValue {
                row,
                col: col.to_string(),
            });
        }
        trimmed.parse::<f64>().map_err(|_| CfbError::MalformedNumber {
            row,
            col: col.to_string(),
            value: trimmed.to_string(),
        })
    };

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CfbError::Csv {
            path: path.display().to_string(),
            source: e,
        })?;
        let get = |idx: usize, col: &str| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| CfbError::MissingValue {
                row,
                col: col.to_string(),
            })?;
            parse_cell(row, col, raw)
        };
        let t_val = get(t_idx, &schema.treatment_col)?;
        if t_val != 0.0 && t_val != 1.0 {
            return Err(CfbError::NonBinaryTreatment {
                row,
                value: format!("{t_val}"),
            });
        }
        t.push(t_val as u8);
        y.push(get(y_idx, &schema.outcome_col)?);
        let mut xr = Vec::with_capacity(cov_idx.len());
        for (k, &idx) in cov_idx.iter().enumerate() {
            xr.push(get(idx, &schema.covariate_cols[k])?);
        }
        x_rows.push(xr);
    }

    let n = x_rows.len();
    let d = cov_idx.len();
    let x = DMatrix::from_fn(n, d, |i, j| x_rows[i][j]);

    let kinds = match &schema.kinds {
        Some(k) => k.clone(),
        None => (0..d)
            .map(|j| {
                let binary = (0..n).all(|i| x[(i, j)] == 0.0 || x[(i, j)] == 1.0);
                // Conditioning columns are always treated as continuous.
                if binary && !v_cols.contains(&j) {
                    ColumnKind::Binary
                } else {
                    ColumnKind::Continuous
                }
            })
            .collect(),
    };

    ObservationalDataset::new(x, t, DVector::from_vec(y), v_cols, kinds)
}
