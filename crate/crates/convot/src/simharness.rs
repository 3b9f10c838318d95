//! Seeded, parallel Monte Carlo study harness: estimator means, empirical vs
//! asymptotic standard deviations, tail coverages, and convergence-rate
//! ratios R_σ(T) = Std(θ̂ | T/2)/Std(θ̂ | T).
//!
//! Per-replication seeds are a splittable hash of (base seed, T, replication
//! index), so results are bit-for-bit reproducible regardless of worker
//! count; aggregation is an ordered fold over replication indices.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::distribution::CTSpec;
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitOptions};
use crate::identification::ClusterStructure;
use crate::likelihood::{fisher_information, free_parameter_basis};

/// Monte Carlo study configuration.
#[derive(Debug, Clone)]
pub struct MCConfig {
    /// True data-generating specification.
    pub spec: CTSpec,
    /// Structure to fit.
    pub structure: ClusterStructure,
    /// Sample sizes, ascending.
    pub sample_sizes: Vec<usize>,
    /// Replications per sample size.
    pub replications: usize,
    /// Base seed.
    pub base_seed: u64,
    /// Worker threads (0 = library default).
    pub workers: usize,
    /// Initial dof per cluster for each fit.
    pub dof_init: Vec<f64>,
    /// Fit controls (standard errors and decomposition are forced off).
    pub fit: FitOptions,
}

impl MCConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replication count must be ≥ 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("sample sizes must be ascending".into()));
        }
        Ok(())
    }
}

/// One parameter × sample-size summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    /// Parameter name in reported coordinates (μ_i, Ξ_ij, 1/ν_k).
    pub name: String,
    /// Sample size T.
    pub t: usize,
    /// True value in reported coordinates.
    pub truth: f64,
    /// Monte Carlo mean of the estimates.
    pub mean: f64,
    /// Empirical standard deviation (NaN for a single replication).
    pub std: f64,
    /// Asymptotic standard deviation from the Cramér–Rao bound at the truth
    /// (None when the Fisher information is undefined, e.g. ν ≤ 2).
    pub astd: Option<f64>,
    /// Fraction of standardized errors below −1.96 (needs `astd`).
    pub alpha_l: Option<f64>,
    /// Fraction of standardized errors above 1.96 (needs `astd`).
    pub alpha_r: Option<f64>,
    /// Std(θ̂ | T/2)/Std(θ̂ | T), filled by [`run_rate_study`].
    pub r_sigma: Option<f64>,
}

/// Study output.
#[derive(Debug, Clone, PartialEq)]
pub struct MCStudyReport {
    /// One row per parameter × sample size.
    pub rows: Vec<ParamSummary>,
    /// Excluded replications (optimizer failures).
    pub failures: usize,
    /// Total replications attempted.
    pub total: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-replication seed: splittable hash of (base, T, r), independent of
/// scheduling and worker count.
pub fn replication_seed(base: u64, t: usize, r: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ t as u64) ^ r as u64)
}

/// Reported-coordinate names for the free parameters of a structure.
fn coordinate_names(cfg: &MCConfig) -> Vec<String> {
    let n = cfg.spec.n();
    let basis = free_parameter_basis(&cfg.structure, cfg.spec.dof());
    let mut names = Vec::with_capacity(basis.ncols());
    let mut nu_seen = 0usize;
    for c in 0..basis.ncols() {
        let p = (0..basis.nrows()).find(|&r| basis[(r, c)] != 0.0).expect("nonzero column");
        if p < n {
            names.push(format!("mu{}", p + 1));
        } else if p < n + n * n {
            let i = (p - n) % n;
            let j = (p - n) / n;
            names.push(format!("xi{}{}", i + 1, j + 1));
        } else {
            nu_seen += 1;
            names.push(format!("inv_nu{nu_seen}"));
        }
    }
    names
}

/// True values in reported coordinates (μ; free Ξ; 1/ν).
fn reported_truth(cfg: &MCConfig) -> DVector<f64> {
    let spec = &cfg.spec;
    let n = spec.n();
    let basis = free_parameter_basis(&cfg.structure, spec.dof());
    let mut flat = DVector::zeros(basis.nrows());
    flat.rows_mut(0, n).copy_from(spec.location());
    for j in 0..n {
        for i in 0..n {
            flat[n + j * n + i] = spec.xi()[(i, j)];
        }
    }
    let finite: Vec<f64> = spec.dof().iter().copied().filter(|v| v.is_finite()).collect();
    for (k, &nu) in finite.iter().enumerate() {
        flat[n + n * n + k] = nu;
    }
    let gram = (basis.transpose() * &basis).try_inverse().expect("independent basis");
    let mut coords = gram * basis.transpose() * flat;
    let base = coords.len() - finite.len();
    for (k, &nu) in finite.iter().enumerate() {
        coords[base + k] = 1.0 / nu;
    }
    coords
}

/// Asymptotic standard deviations √diag((B'IB)^{-1}/T) at the truth, in
/// reported coordinates (dof entries by the delta method). None when the
/// Fisher information is unavailable (e.g. some ν ≤ 2).
fn reported_astd(cfg: &MCConfig, t: usize) -> Option<DVector<f64>> {
    let info = fisher_information(&cfg.spec).ok()?;
    let basis = free_parameter_basis(&cfg.structure, cfg.spec.dof());
    let compressed = basis.transpose() * info * &basis;
    let cov = compressed.try_inverse()? / t as f64;
    let finite: Vec<f64> = cfg.spec.dof().iter().copied().filter(|v| v.is_finite()).collect();
    let base = cov.nrows() - finite.len();
    let mut astd = DVector::from_fn(cov.nrows(), |i, _| cov[(i, i)].max(0.0).sqrt());
    for (k, &nu) in finite.iter().enumerate() {
        astd[base + k] /= nu * nu;
    }
    Some(astd)
}

/// Fit one simulated replication; returns reported-coordinate estimates.
fn run_single(cfg: &MCConfig, t: usize, r: usize) -> Result<DVector<f64>> {
    let seed = replication_seed(cfg.base_seed, t, r);
    let data = cfg.spec.sample(t, seed);
    let opts = FitOptions {
        compute_se: false,
        decompose: false,
        standardized: cfg.spec.standardized(),
        ..cfg.fit.clone()
    };
    let fit = fit_mle(&data, &cfg.structure, Some(&cfg.dof_init), &opts)?;
    let mut est = fit.estimates.clone();
    let finite = fit.spec.dof().iter().filter(|v| v.is_finite()).count();
    let base = est.len() - finite;
    for k in 0..finite {
        est[base + k] = 1.0 / est[base + k];
    }
    Ok(est)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Aggregate all replications at the given sample sizes. Internal driver for
/// both study types.
fn run_at_sizes(cfg: &MCConfig, sizes: &[usize]) -> Result<(Vec<Vec<ParamSummary>>, usize, usize)> {
    let names = coordinate_names(cfg);
    let truth = reported_truth(cfg);
    let reps = cfg.replications;
    let mut all_rows = Vec::new();
    let mut failures = 0usize;
    let mut total = 0usize;
    for &t in sizes {
        let results: Vec<Option<DVector<f64>>> = with_pool(cfg.workers, || {
            (0..reps)
                .into_par_iter()
                .map(|r| run_single(cfg, t, r).ok())
                .collect()
        })?;
        total += reps;
        let ok: Vec<&DVector<f64>> = results.iter().flatten().collect();
        failures += reps - ok.len();
        if ok.is_empty() {
            return Err(Error::NonConvergence(format!("every replication failed at T = {t}")));
        }
        let m = ok.len() as f64;
        let p = truth.len();
        let astd = reported_astd(cfg, t);
        let mut rows = Vec::with_capacity(p);
        for c in 0..p {
            let mean = ok.iter().map(|e| e[c]).sum::<f64>() / m;
            let std = if ok.len() > 1 {
                (ok.iter().map(|e| (e[c] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let (al, ar) = match &astd {
                Some(a) if a[c] > 0.0 => {
                    let zl = ok.iter().filter(|e| (e[c] - truth[c]) / a[c] < -1.96).count();
                    let zr = ok.iter().filter(|e| (e[c] - truth[c]) / a[c] > 1.96).count();
                    (Some(zl as f64 / m), Some(zr as f64 / m))
                }
                _ => (None, None),
            };
            rows.push(ParamSummary {
                name: names[c].clone(),
                t,
                truth: truth[c],
                mean,
                std,
                astd: astd.as_ref().map(|a| a[c]),
                alpha_l: al,
                alpha_r: ar,
                r_sigma: None,
            });
        }
        all_rows.push(rows);
    }
    Ok((all_rows, failures, total))
}

fn check_failures(failures: usize, total: usize) -> Result<()> {
    if failures * 100 > total {
        return Err(Error::NonConvergence(format!(
            "{failures}/{total} replications failed (> 1%)"
        )));
    }
    Ok(())
}

/// Run the finite-sample study: one summary row per parameter × sample size.
/// Replication failures are excluded and reported; more than 1% failures is a
/// study-level error.
pub fn run_mc_study(cfg: &MCConfig) -> Result<MCStudyReport> {
    cfg.validate()?;
    let (rows, failures, total) = run_at_sizes(cfg, &cfg.sample_sizes)?;
    check_failures(failures, total)?;
    Ok(MCStudyReport { rows: rows.into_iter().flatten().collect(), failures, total })
}

/// Run the convergence-rate study: every configured T is paired with a T/2
/// companion run and R_σ(T) = Std(θ̂ | T/2)/Std(θ̂ | T) is reported.
pub fn run_rate_study(cfg: &MCConfig) -> Result<MCStudyReport> {
    cfg.validate()?;
    if cfg.sample_sizes.iter().any(|&t| t % 2 != 0 || t < 4) {
        return Err(Error::InvalidArgument("rate-study sample sizes must be even and ≥ 4".into()));
    }
    let mut failures = 0usize;
    let mut total = 0usize;
    let mut rows = Vec::new();
    for &t in &cfg.sample_sizes {
        let (pair, f, n) = run_at_sizes(cfg, &[t / 2, t])?;
        failures += f;
        total += n;
        let (half, full) = (&pair[0], &pair[1]);
        for (h, fl) in half.iter().zip(full) {
            let mut row = fl.clone();
            row.r_sigma = Some(h.std / fl.std);
            rows.push(row);
        }
    }
    check_failures(failures, total)?;
    Ok(MCStudyReport { rows, failures, total })
}
