//! Two-stage HAR pipeline for panels of log realized measures.
//!
//! Stage 1 regresses each series on its own daily, weekly, and monthly
//! history (disjoint lag windows 1, 2–5, and 6–22) by OLS. Stage 2 fits a
//! convolution-t specification to the stage-1 residual panel with the
//! location fixed at zero (per-series OLS residuals have exactly zero mean).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitOptions, FitResult};
use crate::identification::ClusterStructure;

/// Number of lags consumed by the regressor windows.
pub const HAR_LAGS: usize = 22;

/// A panel with derived HAR regressors. Row t of every matrix refers to the
/// same time period; the first [`HAR_LAGS`] rows of the input are consumed by
/// the lag windows.
#[derive(Debug, Clone)]
pub struct HARDataset {
    /// Targets Y_t (T−22 × n).
    pub y: DMatrix<f64>,
    /// Daily regressor Y_t^{(d)} = Y_{t−1}.
    pub daily: DMatrix<f64>,
    /// Weekly regressor Y_t^{(w)} = ¼ Σ_{i=2}^{5} Y_{t−i}.
    pub weekly: DMatrix<f64>,
    /// Monthly regressor Y_t^{(m)} = (1/17) Σ_{i=6}^{22} Y_{t−i}.
    pub monthly: DMatrix<f64>,
}

/// Per-series stage-1 OLS fit of Y on (1, Y^{(d)}, Y^{(w)}, Y^{(m)}).
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Coefficients (ξ, β_d, β_w, β_m).
    pub coef: DVector<f64>,
    /// Classical OLS standard errors.
    pub se: DVector<f64>,
    /// Heteroskedasticity-robust (HC0) standard errors, when requested.
    pub se_robust: Option<DVector<f64>>,
    /// Residual standard deviation σ_v (dof-adjusted).
    pub residual_std: f64,
    /// Persistence π = β_d + β_w + β_m.
    pub persistence: f64,
    /// Implied unconditional mean E[Y] = ξ/(1 − π).
    pub implied_mean: f64,
}

/// Combined two-stage result.
#[derive(Debug, Clone)]
pub struct HARTwoStageFit {
    /// Stage-1 fits, one per series.
    pub ols: Vec<OlsFit>,
    /// Stage-1 residual panel V̂ (T−22 × n).
    pub residuals: DMatrix<f64>,
    /// Stage-2 convolution-t fit on the residuals (location fixed at 0).
    pub stage2: FitResult,
}

/// Build the HAR regressors from a T×n panel, dropping the first 22 rows.
pub fn build_har_features(panel: &DMatrix<f64>) -> Result<HARDataset> {
    let t = panel.nrows();
    let n = panel.ncols();
    if t <= HAR_LAGS {
        return Err(Error::InvalidArgument(format!(
            "panel needs more than {HAR_LAGS} rows, got {t}"
        )));
    }
    if panel.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("panel contains non-finite values".into()));
    }
    let rows = t - HAR_LAGS;
    let mut y = DMatrix::zeros(rows, n);
    let mut daily = DMatrix::zeros(rows, n);
    let mut weekly = DMatrix::zeros(rows, n);
    let mut monthly = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let tt = r + HAR_LAGS;
        for j in 0..n {
            y[(r, j)] = panel[(tt, j)];
            daily[(r, j)] = panel[(tt - 1, j)];
            weekly[(r, j)] = (2..=5).map(|i| panel[(tt - i, j)]).sum::<f64>() / 4.0;
            monthly[(r, j)] = (6..=22).map(|i| panel[(tt - i, j)]).sum::<f64>() / 17.0;
        }
    }
    Ok(HARDataset { y, daily, weekly, monthly })
}

/// Per-series OLS of the HAR equation with classical (and optionally HC0)
/// standard errors. Errors on collinear regressors.
fn ols_series(ds: &HARDataset, series: usize, robust: bool) -> Result<(OlsFit, DVector<f64>)> {
    let t = ds.y.nrows();
    let mut x = DMatrix::zeros(t, 4);
    for r in 0..t {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = ds.daily[(r, series)];
        x[(r, 2)] = ds.weekly[(r, series)];
        x[(r, 3)] = ds.monthly[(r, series)];
    }
    let y = ds.y.column(series).into_owned();
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.try_inverse().ok_or_else(|| {
        Error::Singular(format!("collinear HAR regressors for series {series}"))
    })?;
    let coef = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &coef;
    let dof = (t - 4) as f64;
    let s2 = resid.dot(&resid) / dof;
    let se = DVector::from_fn(4, |i, _| (s2 * xtx_inv[(i, i)]).sqrt());
    let se_robust = if robust {
        // HC0: (X'X)^{-1} X'diag(e²)X (X'X)^{-1}.
        let mut meat = DMatrix::zeros(4, 4);
        for r in 0..t {
            let xr = x.row(r).transpose();
            meat += resid[r] * resid[r] * &xr * xr.transpose();
        }
        let cov = &xtx_inv * meat * &xtx_inv;
        Some(DVector::from_fn(4, |i, _| cov[(i, i)].sqrt()))
    } else {
        None
    };
    let persistence = coef[1] + coef[2] + coef[3];
    let implied_mean = coef[0] / (1.0 - persistence);
    Ok((
        OlsFit {
            coef,
            se,
            se_robust,
            residual_std: s2.sqrt(),
            persistence,
            implied_mean,
        },
        resid,
    ))
}

/// Two-stage estimation: per-series HAR OLS, then a convolution-t fit of the
/// residual panel with the location fixed at zero. `robust` adds HC0
/// standard errors to stage 1.
pub fn fit_har_two_stage(
    dataset: &HARDataset,
    structure: &ClusterStructure,
    dof_init: Option<&[f64]>,
    opts: &FitOptions,
    robust: bool,
) -> Result<HARTwoStageFit> {
    let n = dataset.y.ncols();
    if structure.n() != n {
        return Err(Error::InvalidArgument("structure dimension must match panel width".into()));
    }
    let t = dataset.y.nrows();
    let mut ols = Vec::with_capacity(n);
    let mut residuals = DMatrix::zeros(t, n);
    for j in 0..n {
        let (fit, resid) = ols_series(dataset, j, robust)?;
        residuals.set_column(j, &resid);
        ols.push(fit);
    }
    let stage_opts = FitOptions {
        fix_location: Some(DVector::zeros(n)),
        ..opts.clone()
    };
    let stage2 = fit_mle(&residuals, structure, dof_init, &stage_opts)?;
    Ok(HARTwoStageFit { ols, residuals, stage2 })
}
