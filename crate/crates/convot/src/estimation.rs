//! Maximum-likelihood fitting of convolution-t specifications, copula
//! decomposition of the log-likelihood, and BIC.
//!
//! Fitting works in an unconstrained internal parameterization: μ free (or
//! fixed), diagonal blocks `Ξ_kk = exp(γ_k)` with symmetric γ_k (or linear
//! coefficient coordinates for the block-restricted forms), remaining Ξ
//! entries free or tied per restriction, and dof through a log transform
//! (`ν = e^c` raw, `ν = 2 + e^c` standardized). Results are canonicalized and
//! (for just-identified fits) trace-max permuted, with standard errors from
//! the sandwich estimator and the inverse Fisher information.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::distribution::CTSpec;
use crate::error::{Error, Result};
use crate::identification::{
    canonicalize, trace_max_permutation, ClusterStructure, Restriction,
};
use crate::likelihood::{
    free_parameter_basis, free_xi_basis, loglik, loglik_and_score, sandwich_covariance_basis,
    ParamLayout,
};
use crate::linalg::{sym_exp, sym_exp_frechet, sym_log, sym_sqrt, vec_of};
use crate::marginal::{marginal_of, QuadratureConfig};
use crate::optim::{minimize, OptimOptions};

/// Controls for [`fit_mle`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Maximum optimizer iterations per start.
    pub max_iter: usize,
    /// Gradient ∞-norm convergence tolerance.
    pub grad_tol: f64,
    /// Relative parameter-change convergence tolerance.
    pub param_tol: f64,
    /// Number of multistarts (best log-likelihood wins, ties by lowest index).
    pub multistart: usize,
    /// Seed for multistart perturbations.
    pub seed: u64,
    /// Fit the standardized variant (unit-variance t factors).
    pub standardized: bool,
    /// Fix the location at this value instead of estimating it.
    pub fix_location: Option<DVector<f64>>,
    /// Compute sandwich / inverse-Fisher standard errors (disable for bulk
    /// Monte Carlo runs or when dof estimates may fall below 2).
    pub compute_se: bool,
    /// Also compute the marginal/copula decomposition of the log-likelihood.
    pub decompose: bool,
    /// Quadrature controls for the decomposition.
    pub quadrature: QuadratureConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            param_tol: 1e-9,
            multistart: 3,
            seed: 0,
            standardized: false,
            fix_location: None,
            compute_se: true,
            decompose: false,
            quadrature: QuadratureConfig::default(),
        }
    }
}

/// Convergence diagnostics of a fit.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// Optimizer convergence flag of the winning start.
    pub converged: bool,
    /// Iterations used by the winning start.
    pub iterations: usize,
    /// Gradient ∞-norm (internal coordinates) at the optimum.
    pub grad_norm: f64,
    /// Index of the winning multistart.
    pub multistart_index: usize,
    /// Whether the mean negative Hessian at the optimum is positive definite.
    pub hessian_pd: bool,
}

/// A fitted specification with standard errors and fit statistics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Canonical (and, where applicable, trace-max permuted) fitted spec.
    pub spec: CTSpec,
    /// The structure actually reported (cluster order may be permuted).
    pub structure: ClusterStructure,
    /// Maximized log-likelihood ℓ.
    pub loglik: f64,
    /// Marginal part ℓ_m (when decomposition was requested).
    pub loglik_marginal: Option<f64>,
    /// Copula part ℓ_c = ℓ − ℓ_m (when decomposition was requested).
    pub loglik_copula: Option<f64>,
    /// BIC = −2ℓ + p·log T.
    pub bic: f64,
    /// Free parameter count p.
    pub param_count: usize,
    /// Free-coordinate estimates (μ if free; Ξ coordinates; finite ν).
    pub estimates: DVector<f64>,
    /// Inverse-Fisher standard errors, aligned with `estimates`.
    pub se_fisher: DVector<f64>,
    /// Sandwich standard errors, aligned with `estimates`.
    pub se_sandwich: DVector<f64>,
    /// Cluster permutation applied by trace maximization.
    pub permutation: Vec<usize>,
    /// Convergence diagnostics.
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// Reported dof coordinates: `(1/ν, SE_fisher, SE_sandwich)` per finite
    /// cluster, with `SE(1/ν) = SE(ν)/ν²`.
    pub fn inv_dof_reports(&self) -> Vec<(f64, f64, f64)> {
        let n_nu = self.spec.dof().iter().filter(|v| v.is_finite()).count();
        let base = self.estimates.len() - n_nu;
        self.spec
            .dof()
            .iter()
            .filter(|v| v.is_finite())
            .enumerate()
            .map(|(i, &nu)| {
                let sc = nu * nu;
                (1.0 / nu, self.se_fisher[base + i] / sc, self.se_sandwich[base + i] / sc)
            })
            .collect()
    }
}

/// BIC = −2ℓ + p·log T.
pub fn bic(loglik: f64, p: usize, t: usize) -> f64 {
    -2.0 * loglik + p as f64 * (t as f64).ln()
}

/// Internal unconstrained parameterization of a restricted fit.
struct Parameterization {
    structure: ClusterStructure,
    dof_pattern: Vec<f64>,
    standardized: bool,
    fix_mu: Option<DVector<f64>>,
    n: usize,
    /// Linear coefficient basis for block restrictions.
    block_basis: Option<DMatrix<f64>>,
}

impl Parameterization {
    fn new(
        structure: &ClusterStructure,
        dof_pattern: &[f64],
        standardized: bool,
        fix_mu: Option<DVector<f64>>,
    ) -> Self {
        let block_basis = match structure.restriction() {
            Restriction::Block | Restriction::BlockAsymmetric => {
                Some(free_xi_basis(structure))
            }
            _ => None,
        };
        Self {
            structure: structure.clone(),
            dof_pattern: dof_pattern.to_vec(),
            standardized,
            fix_mu,
            n: structure.n(),
            block_basis,
        }
    }

    fn sizes(&self) -> &[usize] {
        self.structure.sizes()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for &s in self.sizes() {
            off.push(off.last().unwrap() + s);
        }
        off
    }

    fn n_mu(&self) -> usize {
        if self.fix_mu.is_some() { 0 } else { self.n }
    }

    fn n_xi(&self) -> usize {
        self.structure.xi_param_count()
    }

    fn n_nu(&self) -> usize {
        self.dof_pattern.iter().filter(|v| v.is_finite()).count()
    }

    fn dim(&self) -> usize {
        self.n_mu() + self.n_xi() + self.n_nu()
    }

    fn nu_from_internal(&self, c: f64) -> f64 {
        if self.standardized { 2.0 + c.exp() } else { c.exp() }
    }

    fn nu_to_internal(&self, nu: f64) -> f64 {
        if self.standardized { (nu - 2.0).ln() } else { nu.ln() }
    }

    /// Map (μ, Ξ, ν) to internal coordinates. Diagonal blocks must be SPD for
    /// the matrix-log restrictions.
    fn encode(&self, mu: &DVector<f64>, xi: &DMatrix<f64>, dof: &[f64]) -> Result<DVector<f64>> {
        let n = self.n;
        let mut theta = DVector::zeros(self.dim());
        let mut pos = 0;
        if self.fix_mu.is_none() {
            theta.rows_mut(0, n).copy_from(mu);
            pos = n;
        }
        match self.structure.restriction() {
            Restriction::JustIdentified => {
                let offs = self.offsets();
                for (k, &nk) in self.sizes().iter().enumerate() {
                    let block = xi.view((offs[k], offs[k]), (nk, nk)).into_owned();
                    let gamma = sym_log(&block)?;
                    for j in 0..nk {
                        for i in j..nk {
                            theta[pos] = gamma[(i, j)];
                            pos += 1;
                        }
                    }
                }
                for (k, &nk) in self.sizes().iter().enumerate() {
                    for j in offs[k]..offs[k] + nk {
                        for i in 0..n {
                            if i < offs[k] || i >= offs[k] + nk {
                                theta[pos] = xi[(i, j)];
                                pos += 1;
                            }
                        }
                    }
                }
            }
            Restriction::SymmetricXi => {
                let gamma = sym_log(xi)?;
                for j in 0..n {
                    for i in j..n {
                        theta[pos] = gamma[(i, j)];
                        pos += 1;
                    }
                }
            }
            Restriction::Block | Restriction::BlockAsymmetric => {
                let d = self.block_basis.as_ref().unwrap();
                let v = vec_of(xi);
                let gram = (d.transpose() * d)
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("degenerate block basis".into()))?;
                let coef = gram * d.transpose() * v;
                theta.rows_mut(pos, coef.len()).copy_from(&coef);
                pos += coef.len();
            }
        }
        for (k, &pat) in self.dof_pattern.iter().enumerate() {
            if pat.is_finite() {
                theta[pos] = self.nu_to_internal(dof[k]);
                pos += 1;
            }
        }
        debug_assert_eq!(pos, self.dim());
        Ok(theta)
    }

    /// Build the spec from internal coordinates.
    fn decode(&self, theta: &DVector<f64>) -> Result<CTSpec> {
        let n = self.n;
        let mut pos = 0;
        let mu = match &self.fix_mu {
            Some(m) => m.clone(),
            None => {
                pos = n;
                theta.rows(0, n).into_owned()
            }
        };
        let mut xi = DMatrix::zeros(n, n);
        match self.structure.restriction() {
            Restriction::JustIdentified => {
                let offs = self.offsets();
                for (k, &nk) in self.sizes().iter().enumerate() {
                    let mut gamma = DMatrix::zeros(nk, nk);
                    for j in 0..nk {
                        for i in j..nk {
                            gamma[(i, j)] = theta[pos];
                            gamma[(j, i)] = theta[pos];
                            pos += 1;
                        }
                    }
                    let block = sym_exp(&gamma);
                    xi.view_mut((offs[k], offs[k]), (nk, nk)).copy_from(&block);
                }
                for (k, &nk) in self.sizes().iter().enumerate() {
                    for j in offs[k]..offs[k] + nk {
                        for i in 0..n {
                            if i < offs[k] || i >= offs[k] + nk {
                                xi[(i, j)] = theta[pos];
                                pos += 1;
                            }
                        }
                    }
                }
            }
            Restriction::SymmetricXi => {
                let mut gamma = DMatrix::zeros(n, n);
                for j in 0..n {
                    for i in j..n {
                        gamma[(i, j)] = theta[pos];
                        gamma[(j, i)] = theta[pos];
                        pos += 1;
                    }
                }
                xi = sym_exp(&gamma);
            }
            Restriction::Block | Restriction::BlockAsymmetric => {
                let d = self.block_basis.as_ref().unwrap();
                let coef = theta.rows(pos, d.ncols()).into_owned();
                pos += d.ncols();
                let v = d * coef;
                for j in 0..n {
                    for i in 0..n {
                        xi[(i, j)] = v[j * n + i];
                    }
                }
            }
        }
        let mut dof = Vec::with_capacity(self.dof_pattern.len());
        for &pat in &self.dof_pattern {
            if pat.is_finite() {
                dof.push(self.nu_from_internal(theta[pos]));
                pos += 1;
            } else {
                dof.push(f64::INFINITY);
            }
        }
        debug_assert_eq!(pos, self.dim());
        CTSpec::new(self.sizes(), &dof, mu, xi, self.standardized)
    }

    /// Jacobian ∂(μ; vec(Ξ); ν)/∂θ_internal' at θ.
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let kc = self.sizes().len();
        let layout = ParamLayout::new(n, kc);
        let mut jac = DMatrix::zeros(layout.dim(), self.dim());
        let mut pos = 0;
        if self.fix_mu.is_none() {
            for i in 0..n {
                jac[(i, i)] = 1.0;
            }
            pos = n;
        }
        match self.structure.restriction() {
            Restriction::JustIdentified => {
                let offs = self.offsets();
                for (k, &nk) in self.sizes().iter().enumerate() {
                    let mut gamma = DMatrix::zeros(nk, nk);
                    let mut local = pos;
                    for j in 0..nk {
                        for i in j..nk {
                            gamma[(i, j)] = theta[local];
                            gamma[(j, i)] = theta[local];
                            local += 1;
                        }
                    }
                    for j in 0..nk {
                        for i in j..nk {
                            let mut dir = DMatrix::zeros(nk, nk);
                            dir[(i, j)] = 1.0;
                            dir[(j, i)] = 1.0;
                            let dxi = sym_exp_frechet(&gamma, &dir);
                            for jj in 0..nk {
                                for ii in 0..nk {
                                    jac[(layout.xi_pos(offs[k] + ii, offs[k] + jj), pos)] =
                                        dxi[(ii, jj)];
                                }
                            }
                            pos += 1;
                        }
                    }
                }
                for (k, &nk) in self.sizes().iter().enumerate() {
                    for j in offs[k]..offs[k] + nk {
                        for i in 0..n {
                            if i < offs[k] || i >= offs[k] + nk {
                                jac[(layout.xi_pos(i, j), pos)] = 1.0;
                                pos += 1;
                            }
                        }
                    }
                }
            }
            Restriction::SymmetricXi => {
                let mut gamma = DMatrix::zeros(n, n);
                let mut local = pos;
                for j in 0..n {
                    for i in j..n {
                        gamma[(i, j)] = theta[local];
                        gamma[(j, i)] = theta[local];
                        local += 1;
                    }
                }
                for j in 0..n {
                    for i in j..n {
                        let mut dir = DMatrix::zeros(n, n);
                        dir[(i, j)] = 1.0;
                        dir[(j, i)] = 1.0;
                        let dxi = sym_exp_frechet(&gamma, &dir);
                        for jj in 0..n {
                            for ii in 0..n {
                                jac[(layout.xi_pos(ii, jj), pos)] = dxi[(ii, jj)];
                            }
                        }
                        pos += 1;
                    }
                }
            }
            Restriction::Block | Restriction::BlockAsymmetric => {
                let d = self.block_basis.as_ref().unwrap();
                for c in 0..d.ncols() {
                    for r in 0..n * n {
                        jac[(n + r, pos)] = d[(r, c)];
                    }
                    pos += 1;
                }
            }
        }
        for (k, &pat) in self.dof_pattern.iter().enumerate() {
            if pat.is_finite() {
                // dν/dc = e^c in both transforms.
                jac[(layout.nu_pos(k), pos)] = theta[pos].exp();
                pos += 1;
            }
        }
        jac
    }
}

/// Kurtosis-based dof initialization: ν = 4 + 6/κ̄ from the mean coordinate
/// excess kurtosis, clipped to [2.5, 100].
fn init_dof(data: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let t = data.nrows() as f64;
    let mut kappa_sum = 0.0;
    for j in 0..data.ncols() {
        let col = data.column(j);
        let m = col.mean();
        let m2: f64 = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t;
        let m4: f64 = col.iter().map(|v| (v - m).powi(4)).sum::<f64>() / t;
        kappa_sum += m4 / (m2 * m2) - 3.0;
    }
    let kappa = kappa_sum / data.ncols() as f64;
    let nu = if kappa > 0.05 { 4.0 + 6.0 / kappa } else { 100.0 };
    vec![nu.clamp(2.5, 100.0); k]
}

/// Maximum-likelihood fit of a convolution-t specification.
///
/// `dof_init` optionally provides initial dof per cluster; `∞` entries mark
/// Gaussian clusters whose dof stay fixed. When absent, dof are initialized
/// from sample kurtosis. Errors with [`Error::NonConvergence`] when no start
/// converges within the iteration budget.
pub fn fit_mle(
    data: &DMatrix<f64>,
    structure: &ClusterStructure,
    dof_init: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = structure.n();
    let kc = structure.sizes().len();
    if data.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "data has {} columns, structure dimension {n}",
            data.ncols()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("data contains non-finite values".into()));
    }
    let t = data.nrows();
    if let Some(d) = dof_init {
        if d.len() != kc {
            return Err(Error::InvalidArgument("dof_init length must match cluster count".into()));
        }
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("initial dof must be positive".into()));
        }
        if opts.standardized && d.iter().any(|&v| !(v > 2.0)) {
            return Err(Error::InvalidArgument(
                "standardized fits require initial dof > 2".into(),
            ));
        }
    }
    if let Some(m) = &opts.fix_location {
        if m.len() != n {
            return Err(Error::InvalidArgument("fixed location dimension mismatch".into()));
        }
    }
    let dof0 = match dof_init {
        Some(d) => d.to_vec(),
        None => init_dof(data, kc),
    };
    let param =
        Parameterization::new(structure, &dof0, opts.standardized, opts.fix_location.clone());
    let p = param.dim();
    if t <= p {
        return Err(Error::InvalidArgument(format!("need T > p = {p}, got T = {t}")));
    }

    // Initialization: sample mean and symmetric square root of the sample
    // covariance (block columns deflated to raw scale when needed), with a
    // small off-block perturbation to break cluster symmetry.
    let mu0 = match &opts.fix_location {
        Some(m) => m.clone(),
        // Infinite-mean clusters: a single extreme draw dominates the sample
        // mean, so start from the per-coordinate median instead.
        None if dof0.iter().any(|&v| v <= 2.0) => DVector::from_fn(n, |j, _| {
            let mut col: Vec<f64> = data.column(j).iter().copied().collect();
            col.sort_by(|a, b| a.total_cmp(b));
            if t % 2 == 1 {
                col[t / 2]
            } else {
                0.5 * (col[t / 2 - 1] + col[t / 2])
            }
        }),
        None => DVector::from_fn(n, |j, _| data.column(j).mean()),
    };
    let mut xi0 = if dof0.iter().any(|&v| v <= 2.0) {
        // Infinite-variance clusters: the sample covariance is dominated by a
        // few extreme draws, so start from a robust diagonal scale instead
        // (median absolute deviation, rescaled to the Gaussian σ).
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                let mut col: Vec<f64> = (0..t).map(|r| (data[(r, j)] - mu0[j]).abs()).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                (col[t / 2] / 0.6745).max(1e-8)
            } else {
                0.0
            }
        })
    } else {
        let mut s = DMatrix::zeros(n, n);
        for r in 0..t {
            let d = DVector::from_fn(n, |j, _| data[(r, j)] - mu0[j]);
            s += &d * d.transpose();
        }
        s /= t as f64;
        sym_sqrt(&s)
    };
    let offs = param.offsets();
    for (k, &nk) in param.sizes().iter().enumerate() {
        for j in offs[k]..offs[k] + nk {
            // Raw t factors have variance ν/(ν−2): deflate block columns.
            if !opts.standardized && dof0[k].is_finite() && dof0[k] > 2.0 {
                let scale = ((dof0[k] - 2.0) / dof0[k]).sqrt();
                for i in 0..n {
                    xi0[(i, j)] *= scale;
                }
            }
            for i in 0..n {
                if i < offs[k] || i >= offs[k] + nk {
                    xi0[(i, j)] += 1e-3;
                }
            }
        }
    }
    let theta0 = param.encode(&mu0, &xi0, &dof0)?;

    // Objective: negative log-likelihood with analytic gradient through the
    // internal-coordinate Jacobian.
    let objective = |theta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let spec = param.decode(theta)?;
        let (ll, score) = loglik_and_score(&spec, data)?;
        if !ll.is_finite() {
            return Err(Error::InvalidArgument("non-finite log-likelihood".into()));
        }
        let jac = param.jacobian(theta);
        Ok((-ll, -(jac.transpose() * score)))
    };

    let oopts = OptimOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        param_tol: opts.param_tol,
        memory: 10,
    };
    let starts: Vec<DVector<f64>> = (0..opts.multistart.max(1))
        .map(|r| {
            if r == 0 {
                theta0.clone()
            } else {
                use rand::{Rng, SeedableRng};
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
                DVector::from_fn(theta0.len(), |i, _| {
                    theta0[i] + rng.gen_range(-0.05..0.05) * (theta0[i].abs() + 1.0)
                })
            }
        })
        .collect();
    let runs: Vec<_> = starts
        .into_par_iter()
        .map(|x0| minimize(objective, x0, &oopts))
        .collect();
    // Heavy-tailed likelihoods admit degenerate spikes where a diagonal block
    // of Ξ collapses towards singularity while the likelihood diverges (the
    // classic unbounded-likelihood pathology of scale mixtures). Such runs are
    // screened out here: a candidate is only admissible if its Ξ survives the
    // canonical polar projection, and the best admissible local maximum wins.
    // Converged runs are preferred over non-converged ones regardless of
    // value: a stalled run's objective is not a verified local maximum.
    let mut best: Option<(usize, crate::optim::OptimResult)> = None;
    for (i, run) in runs.into_iter().enumerate() {
        let Ok(run) = run else { continue };
        let better = match &best {
            None => true,
            Some((_, b)) => {
                if run.converged != b.converged {
                    run.converged
                } else {
                    run.value < b.value - 1e-8
                }
            }
        };
        if !better {
            continue;
        }
        let Ok(decoded) = param.decode(&run.x) else { continue };
        if canonicalize(decoded.xi(), param.sizes()).is_err() {
            continue;
        }
        best = Some((i, run));
    }
    let Some((start_idx, run)) = best else {
        return Err(Error::NonConvergence(
            "all optimization starts failed or degenerated".into(),
        ));
    };
    if !run.converged {
        return Err(Error::NonConvergence(format!(
            "no convergence after {} iterations; best loglik {:.6}, gradient norm {:.3e}",
            run.iterations, -run.value, run.grad_norm
        )));
    }

    let fitted = param.decode(&run.x)?;
    // Canonical form; trace-max cluster order only for just-identified fits
    // (restricted patterns pin the cluster order to the coordinate layout).
    let canon = canonicalize(fitted.xi(), param.sizes())?;
    let (spec, structure_out, permutation) =
        if structure.restriction() == Restriction::JustIdentified {
            let tm = trace_max_permutation(&canon, param.sizes(), fitted.dof())?;
            let spec = CTSpec::new(
                &tm.sizes,
                &tm.dof,
                fitted.location().clone(),
                tm.xi.clone(),
                opts.standardized,
            )?;
            let st = ClusterStructure::new(&tm.sizes, Restriction::JustIdentified)?;
            (spec, st, tm.permutation.clone())
        } else {
            let spec = fitted.with_xi(canon)?;
            (spec, structure.clone(), (0..kc).collect())
        };
    let ll = loglik(&spec, data)?;

    // Standard errors in free coordinates.
    let mut basis = free_parameter_basis(&structure_out, spec.dof());
    if opts.fix_location.is_some() {
        basis = basis.columns(n, basis.ncols() - n).into_owned();
    }
    let pfree = basis.ncols();
    let (se_fisher, se_sandwich, hessian_pd) = if opts.compute_se {
        let cov = sandwich_covariance_basis(&spec, data, &basis)?;
        let pd = cov.j_hat.clone().cholesky().is_some();
        (
            DVector::from_fn(pfree, |i, _| cov.inv_fisher[(i, i)].max(0.0).sqrt()),
            DVector::from_fn(pfree, |i, _| cov.sandwich[(i, i)].max(0.0).sqrt()),
            pd,
        )
    } else {
        (DVector::zeros(pfree), DVector::zeros(pfree), true)
    };

    // Free-coordinate estimates: project the flat parameter onto the basis
    // (exact because basis columns have disjoint supports).
    let layout = ParamLayout::new(n, structure_out.sizes().len());
    let mut flat = DVector::zeros(layout.dim());
    flat.rows_mut(0, n).copy_from(spec.location());
    flat.rows_mut(n, n * n).copy_from(&vec_of(spec.xi()));
    for (k, &v) in spec.dof().iter().enumerate() {
        flat[layout.nu_pos(k)] = if v.is_finite() { v } else { 0.0 };
    }
    let gram = (basis.transpose() * &basis)
        .try_inverse()
        .ok_or_else(|| Error::Singular("degenerate free basis".into()))?;
    let estimates = gram * basis.transpose() * flat;

    let (lm, lc) = if opts.decompose {
        let (_, lm, lc) = loglik_decompose(&spec, data, &opts.quadrature)?;
        (Some(lm), Some(lc))
    } else {
        (None, None)
    };

    Ok(FitResult {
        bic: bic(ll, pfree, t),
        param_count: pfree,
        spec,
        structure: structure_out,
        loglik: ll,
        loglik_marginal: lm,
        loglik_copula: lc,
        estimates,
        se_fisher,
        se_sandwich,
        permutation,
        diagnostics: FitDiagnostics {
            converged: run.converged,
            iterations: run.iterations,
            grad_norm: run.grad_norm,
            multistart_index: start_idx,
            hessian_pd,
        },
    })
}

/// Split the log-likelihood into marginal and copula parts:
/// `ℓ = Σ_t Σ_i log f_i(Y_{t,i}) + ℓ_c`, with the univariate marginals
/// evaluated by characteristic-function inversion.
pub fn loglik_decompose(
    spec: &CTSpec,
    data: &DMatrix<f64>,
    q: &QuadratureConfig,
) -> Result<(f64, f64, f64)> {
    let n = spec.n();
    if data.ncols() != n {
        return Err(Error::InvalidArgument("data dimension mismatch".into()));
    }
    let ll = loglik(spec, data)?;
    let mut lm = 0.0;
    for i in 0..n {
        let mut beta = DVector::zeros(n);
        beta[i] = 1.0;
        let marg = marginal_of(spec, &beta)?;
        for r in 0..data.nrows() {
            let f = marg.pdf(data[(r, i)], q).map_err(|e| {
                Error::InvalidArgument(format!("marginal pdf failed at (t={r}, i={i}): {e}"))
            })?;
            if f <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "non-positive marginal density at (t={r}, i={i})"
                )));
            }
            lm += f.ln();
        }
    }
    Ok((ll, lm, ll - lm))
}
