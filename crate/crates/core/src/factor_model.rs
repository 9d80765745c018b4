//! PCA market decomposition.
//!
//! For an excess-return window `R` (assets x days) with SVD `R = U S V^T`, the top-K
//! factors are `F = V_K^T`, the factor portfolios are `omega = S_K^-1 U_K^T` and the
//! loadings `beta` come from regressing a (shorter) window on `F = omega R`. The
//! residual projector `Phi = I - beta omega` satisfies `Phi beta = 0` because
//! `omega beta = I_K` whenever the regression factors are `omega R`.
//!
//! The SVD runs on raw excess returns, without demeaning.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Factor time series and the portfolios that define them.
#[derive(Clone, Debug)]
pub struct FactorBasis {
    /// `K x T` factor returns (top right-singular directions).
    pub factors: DMatrix<f64>,
    /// `K x N` factor portfolio weights.
    pub weights: DMatrix<f64>,
    /// Top-K singular values, descending.
    pub singular_values: Vec<f64>,
}

/// Top-`k` SVD factors of an `N x T` excess-return window.
///
/// Each right-singular vector is signed so its largest-magnitude entry is positive.
pub fn fit_factors(excess: &DMatrix<f64>, k: usize) -> Result<FactorBasis> {
    let (n, t) = excess.shape();
    if excess.iter().any(|x| !x.is_finite()) {
        return Err(Error::Fit("factor window contains masked or non-finite entries".into()));
    }
    if k > t || k > n {
        return Err(Error::Fit(format!("cannot fit {k} factors on a {n}x{t} window")));
    }
    for i in 0..n {
        let row = excess.row(i);
        let first = row[0];
        if row.iter().all(|&x| x == first) {
            return Err(Error::Fit(format!("asset row {i} has zero variance in the factor window")));
        }
    }
    if k == 0 {
        return Ok(FactorBasis {
            factors: DMatrix::zeros(0, t),
            weights: DMatrix::zeros(0, n),
            singular_values: Vec::new(),
        });
    }

    let svd = excess.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let top = svd.singular_values[order[0]];
    let mut factors = DMatrix::zeros(k, t);
    let mut weights = DMatrix::zeros(k, n);
    let mut singular_values = Vec::with_capacity(k);
    for (row, &j) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[j];
        if !(s > top * 1e-12) {
            return Err(Error::Fit(format!(
                "window has rank below {k} (singular value {row} is {s:e})"
            )));
        }
        let v = v_t.row(j);
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..t {
            factors[(row, c)] = sign * v[c];
        }
        for i in 0..n {
            weights[(row, i)] = sign * u[(i, j)] / s;
        }
        singular_values.push(s);
    }
    Ok(FactorBasis {
        factors,
        weights,
        singular_values,
    })
}

/// Least-squares loadings of an `N x T` window on `K x T` factors:
/// `beta = R F^T (F F^T)^-1`.
pub fn fit_loadings(excess: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, t) = excess.shape();
    let k = factors.nrows();
    if factors.ncols() != t {
        return Err(Error::Domain(format!(
            "factor series has {} days but the loading window has {t}",
            factors.ncols()
        )));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if t < k + 1 {
        return Err(Error::Fit(format!("loading window of {t} days is too short for {k} factors")));
    }
    let gram = factors * factors.transpose();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Fit("factor regressors are singular".into()))?;
    let rhs = factors * excess.transpose(); // K x N
    Ok(chol.solve(&rhs).transpose())
}

/// `Phi = I - beta omega`.
pub fn build_projector(loadings: &DMatrix<f64>, weights: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = loadings.nrows();
    if loadings.ncols() != weights.nrows() || weights.ncols() != n {
        return Err(Error::Domain(format!(
            "loadings {:?} and factor weights {:?} are not conformable",
            loadings.shape(),
            weights.shape()
        )));
    }
    Ok(DMatrix::identity(n, n) - loadings * weights)
}

/// Residual returns `Phi (r - r_f)`.
pub fn residuals(projector: &DMatrix<f64>, excess: &DVector<f64>) -> Result<DVector<f64>> {
    if projector.ncols() != excess.len() {
        return Err(Error::Domain(format!(
            "projector is {:?} but the return vector has {} entries",
            projector.shape(),
            excess.len()
        )));
    }
    Ok(projector * excess)
}

/// Equity-space weights `Phi^T w_eps`, optionally l1-normalized.
pub fn weights_to_equity(
    projector: &DMatrix<f64>,
    w_eps: &DVector<f64>,
    normalize: bool,
) -> Result<DVector<f64>> {
    if projector.nrows() != w_eps.len() {
        return Err(Error::Domain(format!(
            "projector is {:?} but residual weights have {} entries",
            projector.shape(),
            w_eps.len()
        )));
    }
    let w = projector.tr_mul(w_eps);
    if !normalize {
        return Ok(w);
    }
    let l1 = w.lp_norm(1);
    if !(l1 > 0.0) {
        return Err(Error::Degenerate("equity weights have zero l1 norm".into()));
    }
    Ok(w / l1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionConfig {
    /// Look-back for the factor SVD.
    pub factor_window: usize,
    /// Look-back for the loading regression (the trailing part of the factor window).
    pub loading_window: usize,
    pub k: usize,
}

impl DecompositionConfig {
    pub fn name_space() -> Self {
        DecompositionConfig {
            factor_window: 252,
            loading_window: 60,
            k: 5,
        }
    }

    pub fn rank_space() -> Self {
        DecompositionConfig { k: 1, ..Self::name_space() }
    }
}

/// A fitted decomposition for one as-of date.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub as_of: NaiveDate,
    pub k: usize,
    /// `K x N`.
    pub factor_weights: DMatrix<f64>,
    /// `N x K`.
    pub loadings: DMatrix<f64>,
    /// `N x N`.
    pub projector: DMatrix<f64>,
    pub universe: Vec<String>,
    pub singular_values: Vec<f64>,
}

/// Fits factors on the whole `excess` window and loadings on its trailing
/// `loading_window` days, then builds the projector.
pub fn decompose(
    excess: &DMatrix<f64>,
    universe: Vec<String>,
    as_of: NaiveDate,
    config: &DecompositionConfig,
) -> Result<FactorModel> {
    let (n, t) = excess.shape();
    if universe.len() != n {
        return Err(Error::Domain(format!("{} universe labels for {n} rows", universe.len())));
    }
    if config.loading_window > t || config.loading_window == 0 {
        return Err(Error::Domain(format!(
            "loading window {} does not fit inside a {t}-day factor window",
            config.loading_window
        )));
    }
    let basis = fit_factors(excess, config.k).map_err(|e| match e {
        Error::Fit(msg) => Error::Fit(name_row(msg, &universe)),
        other => other,
    })?;
    let tail = excess.columns(t - config.loading_window, config.loading_window).into_owned();
    let factor_tail = &basis.weights * &tail;
    let loadings = fit_loadings(&tail, &factor_tail)?;
    let projector = build_projector(&loadings, &basis.weights)?;
    Ok(FactorModel {
        as_of,
        k: config.k,
        factor_weights: basis.weights,
        loadings,
        projector,
        universe,
        singular_values: basis.singular_values,
    })
}

fn name_row(msg: String, universe: &[String]) -> String {
    // "asset row {i} ..." -> "asset {id} ..."
    if let Some(rest) = msg.strip_prefix("asset row ") {
        if let Some((idx, tail)) = rest.split_once(' ') {
            if let Some(id) = idx.parse::<usize>().ok().and_then(|i| universe.get(i)) {
                return format!("asset {id} {tail}");
            }
        }
    }
    msg
}

#[derive(Serialize, Deserialize)]
struct FactorModelDoc {
    as_of: NaiveDate,
    k: usize,
    universe: Vec<String>,
    singular_values: Vec<f64>,
    factor_weights: Vec<Vec<f64>>,
    loadings: Vec<Vec<f64>>,
    projector: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Domain("ragged matrix in factor model document".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl FactorModel {
    /// JSON document with row-major matrices.
    pub fn to_json(&self, config_hash: Option<&str>) -> Result<String> {
        let doc = FactorModelDoc {
            as_of: self.as_of,
            k: self.k,
            universe: self.universe.clone(),
            singular_values: self.singular_values.clone(),
            factor_weights: rows(&self.factor_weights),
            loadings: rows(&self.loadings),
            projector: rows(&self.projector),
            config_hash: config_hash.map(str::to_string),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FactorModelDoc = serde_json::from_str(s)?;
        let n = doc.universe.len();
        Ok(FactorModel {
            as_of: doc.as_of,
            k: doc.k,
            factor_weights: from_rows(&doc.factor_weights, n)?,
            loadings: from_rows(&doc.loadings, doc.k)?,
            projector: from_rows(&doc.projector, n)?,
            universe: doc.universe,
            singular_values: doc.singular_values,
        })
    }
}
