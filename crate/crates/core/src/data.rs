//! Estimation datasets and model-kind detection.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Label of the constant column.
pub const INTERCEPT: &str = "_cons";

const DUMMY_TOL: f64 = 1e-12;

/// How the dependent variable is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Censored,
    Binary,
    Plain,
}

impl ModelKind {
    pub fn title(self) -> &'static str {
        match self {
            ModelKind::Censored => "Censored quantile regression",
            ModelKind::Binary => "Binary quantile regression",
            ModelKind::Plain => "Smoothed quantile regression",
        }
    }
}

/// Decide between censored, binary and plain quantile regression.
///
/// Supplying either limit always selects the censored model, even for a 0/1
/// outcome.
pub fn detect_model_kind(y: &[f64], ll: Option<f64>, ul: Option<f64>) -> Result<ModelKind> {
    if y.is_empty() {
        return Err(Error::InvalidInput("dependent variable is empty".into()));
    }
    let first = y[0];
    if y.iter().all(|&v| v == first) {
        return Err(Error::DegenerateDepVar);
    }
    if ll.is_some() || ul.is_some() {
        return Ok(ModelKind::Censored);
    }
    if is_dummy(y) {
        Ok(ModelKind::Binary)
    } else {
        Ok(ModelKind::Plain)
    }
}

/// True when every value is within `1e-12` of 0 or 1 and both occur.
pub fn is_dummy(y: &[f64]) -> bool {
    let mut zero = false;
    let mut one = false;
    for &v in y {
        if v.abs() <= DUMMY_TOL {
            zero = true;
        } else if (v - 1.0).abs() <= DUMMY_TOL {
            one = true;
        } else {
            return false;
        }
    }
    zero && one
}

/// Named numeric columns as read from a file; missing entries are NaN.
#[derive(Debug, Clone, Default)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.columns.first() {
            if first.len() != values.len() {
                return Err(Error::LengthMismatch {
                    name,
                    got: values.len(),
                    expected: first.len(),
                });
            }
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Response vector and design matrix used for estimation.
///
/// The intercept, when present, is the last column, so coefficient vectors
/// list `_cons` last.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    depvar: String,
    intercept: Option<usize>,
    /// Indices into the source table of the rows kept.
    rows: Vec<usize>,
    dropped: usize,
    warnings: Vec<String>,
}

impl Dataset {
    /// Build directly from a design matrix. `intercept` names the constant
    /// column, if any.
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        names: Vec<String>,
        intercept: Option<usize>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, X has {}",
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        let k = x.ncols();
        if k == 0 {
            return Err(Error::InvalidInput("design matrix has no columns".into()));
        }
        if n < k {
            return Err(Error::TooFewRows { n, k });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        if let Some(j) = intercept {
            if j >= k || x.column(j).iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "column {j} is not a constant-one intercept"
                )));
            }
        }
        let warnings = rank_deficiency_warning(&x, &names).into_iter().collect();
        Ok(Dataset {
            y: DVector::from_vec(y),
            x,
            names,
            depvar: "y".into(),
            intercept,
            rows: (0..n).collect(),
            dropped: 0,
            warnings,
        })
    }

    /// Covariate columns followed by an intercept.
    pub fn from_columns(y: Vec<f64>, covars: &[(&str, &[f64])]) -> Result<Self> {
        let n = y.len();
        let k = covars.len() + 1;
        let mut x = DMatrix::from_element(n, k, 1.0);
        let mut names = Vec::with_capacity(k);
        for (j, (name, col)) in covars.iter().enumerate() {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    name: name.to_string(),
                    got: col.len(),
                    expected: n,
                });
            }
            x.set_column(j, &DVector::from_column_slice(col));
            names.push(name.to_string());
        }
        names.push(INTERCEPT.to_string());
        Dataset::new(y, x, names, Some(k - 1))
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn depvar(&self) -> &str {
        &self.depvar
    }

    pub fn intercept(&self) -> Option<usize> {
        self.intercept
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Source-table row index of each estimation row.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn with_depvar(mut self, name: impl Into<String>) -> Self {
        self.depvar = name.into();
        self
    }

    /// Same design, new response.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "response has {} rows, design has {}",
                y.len(),
                self.n()
            )));
        }
        let mut out = self.clone();
        out.y = DVector::from_vec(y);
        Ok(out)
    }

    /// Rows selected by index, with repetition allowed (bootstrap draws).
    pub fn resample(&self, idx: &[usize]) -> Dataset {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let x = self.x.select_rows(idx);
        Dataset {
            y,
            x,
            names: self.names.clone(),
            depvar: self.depvar.clone(),
            intercept: self.intercept,
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            dropped: 0,
            warnings: Vec::new(),
        }
    }
}

/// Assemble a dataset from named columns with listwise deletion.
pub fn build_dataset(
    table: &Table,
    depvar: &str,
    covars: &[String],
    add_intercept: bool,
) -> Result<Dataset> {
    let y_col = table
        .get(depvar)
        .ok_or_else(|| Error::UnknownColumn(depvar.to_string()))?;
    let cols: Vec<&[f64]> = covars
        .iter()
        .map(|c| table.get(c).ok_or_else(|| Error::UnknownColumn(c.clone())))
        .collect::<Result<_>>()?;

    let keep: Vec<usize> = (0..table.nrows())
        .filter(|&i| y_col[i].is_finite() && cols.iter().all(|c| c[i].is_finite()))
        .collect();
    let dropped = table.nrows() - keep.len();
    if keep.is_empty() {
        return Err(Error::EmptyDataset { dropped });
    }

    let n = keep.len();
    let k = covars.len() + usize::from(add_intercept);
    let mut x = DMatrix::from_element(n, k, 1.0);
    for (j, col) in cols.iter().enumerate() {
        for (r, &i) in keep.iter().enumerate() {
            x[(r, j)] = col[i];
        }
    }
    let mut names = covars.to_vec();
    if add_intercept {
        names.push(INTERCEPT.to_string());
    }
    let y = keep.iter().map(|&i| y_col[i]).collect();
    let intercept = add_intercept.then_some(k - 1);

    let mut d = Dataset::new(y, x, names, intercept)?.with_depvar(depvar);
    d.rows = keep;
    d.dropped = dropped;
    if dropped > 0 {
        d.warnings
            .push(format!("{dropped} observations dropped due to missing values"));
    }
    Ok(d)
}

/// Pivoted-QR rank check; names the columns found linearly dependent.
fn rank_deficiency_warning(x: &DMatrix<f64>, names: &[String]) -> Option<String> {
    let dependent = dependent_columns(x);
    if dependent.is_empty() {
        return None;
    }
    let list: Vec<&str> = dependent.iter().map(|&j| names[j].as_str()).collect();
    Some(format!(
        "design matrix is rank deficient; collinear columns: {}",
        list.join(", ")
    ))
}

pub(crate) fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let k = x.ncols();
    let min_dim = x.nrows().min(k);
    let qr = x.clone().col_piv_qr();
    let mut order = DMatrix::from_fn(1, k, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let r = qr.r();
    let diag: Vec<f64> = (0..min_dim).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    let tol = scale * 1e-10;
    let mut out: Vec<usize> = (0..k)
        .filter(|&pos| pos >= min_dim || diag[pos] <= tol)
        .map(|pos| order[(0, pos)] as usize)
        .collect();
    out.sort_unstable();
    out
}
