//! Core representation of a convolution-t distribution `CT_{n,ν}(μ, Ξ)`:
//! joint log-density evaluation and exact sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Sentinel degrees of freedom encoding a Gaussian cluster.
pub const GAUSSIAN_DOF: f64 = f64::INFINITY;

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cluster bookkeeping derived from the cluster sizes: offsets and selector
/// matrices `e_k` (n × n_k) with `J_k = e_k e_k'` summing to the identity.
#[derive(Debug, Clone)]
pub struct ClusterIndex {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
}

impl ClusterIndex {
    /// Build from cluster sizes; all sizes must be positive.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidSpec("cluster sizes must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes: sizes.to_vec(), offsets, n: acc })
    }

    /// Total dimension n = Σ n_k.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of clusters K.
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Cluster sizes.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// First coordinate of cluster `k`.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Half-open coordinate range of cluster `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.sizes[k]
    }

    /// Selector matrix `e_k` (n × n_k).
    pub fn selector(&self, k: usize) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, self.sizes[k]);
        for (j, i) in self.range(k).enumerate() {
            e[(i, j)] = 1.0;
        }
        e
    }

    /// Projection `J_k = e_k e_k'` (n × n diagonal 0/1).
    pub fn jk(&self, k: usize) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n, self.n);
        for i in self.range(k) {
            j[(i, i)] = 1.0;
        }
        j
    }
}

/// A convolution-t distribution `Y = μ + Ξ X`, where `X` stacks `K`
/// independent multivariate t clusters `X_k ~ t_{n_k, ν_k}(0, I)`.
///
/// `ν_k = ∞` ([`GAUSSIAN_DOF`]) encodes a Gaussian cluster (at most one). The
/// standardized variant rescales each cluster by `√((ν_k−2)/ν_k)` so that
/// `var(Y) = ΞΞ'`; it requires all finite `ν_k > 2`.
#[derive(Debug, Clone)]
pub struct CTSpec {
    index: ClusterIndex,
    dof: Vec<f64>,
    location: DVector<f64>,
    xi: DMatrix<f64>,
    standardized: bool,
    // Cached for density evaluation.
    xi_inv: DMatrix<f64>,
    ln_abs_det_xi: f64,
}

impl CTSpec {
    /// Validate and construct a specification.
    pub fn new(
        cluster_sizes: &[usize],
        dof: &[f64],
        location: DVector<f64>,
        xi: DMatrix<f64>,
        standardized: bool,
    ) -> Result<Self> {
        let index = ClusterIndex::new(cluster_sizes)?;
        let n = index.n();
        if dof.len() != cluster_sizes.len() {
            return Err(Error::InvalidSpec(format!(
                "dof length {} != number of clusters {}",
                dof.len(),
                cluster_sizes.len()
            )));
        }
        if dof.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidSpec("all degrees of freedom must be > 0".into()));
        }
        let gaussians = dof.iter().filter(|v| v.is_infinite()).count();
        if gaussians > 1 {
            return Err(Error::InvalidSpec(format!(
                "{gaussians} Gaussian clusters supplied; at most one ν_k = ∞ is allowed \
                 (merge them explicitly with merge_gaussian_clusters)"
            )));
        }
        if standardized {
            if let Some(bad) = dof.iter().find(|v| v.is_finite() && **v <= 2.0) {
                return Err(Error::InvalidSpec(format!(
                    "standardized variant requires all ν_k > 2, got {bad}"
                )));
            }
        }
        if location.len() != n {
            return Err(Error::InvalidSpec(format!(
                "location has dimension {}, cluster sizes sum to {n}",
                location.len()
            )));
        }
        if xi.nrows() != n || xi.ncols() != n {
            return Err(Error::InvalidSpec(format!(
                "xi is {}x{}, expected {n}x{n}",
                xi.nrows(),
                xi.ncols()
            )));
        }
        if !location.iter().all(|v| v.is_finite()) || !xi.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("location and xi must be finite".into()));
        }
        let lu = xi.clone().lu();
        let det = lu.determinant();
        let xi_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("xi is numerically singular".into()))?;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Singular("xi is numerically singular".into()));
        }
        Ok(Self {
            index,
            dof: dof.to_vec(),
            location,
            xi,
            standardized,
            xi_inv,
            ln_abs_det_xi: det.abs().ln(),
        })
    }

    /// Cluster sizes (n_1, …, n_K).
    pub fn cluster_sizes(&self) -> &[usize] {
        self.index.sizes()
    }

    /// Degrees of freedom (ν_1, …, ν_K); `∞` encodes a Gaussian cluster.
    pub fn dof(&self) -> &[f64] {
        &self.dof
    }

    /// Location vector μ.
    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    /// Scale-rotation matrix Ξ.
    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// Cached Ξ⁻¹.
    pub fn xi_inv(&self) -> &DMatrix<f64> {
        &self.xi_inv
    }

    /// ln |det Ξ|.
    pub fn ln_abs_det_xi(&self) -> f64 {
        self.ln_abs_det_xi
    }

    /// Whether this is the standardized variant (`var(Y) = ΞΞ'`).
    pub fn standardized(&self) -> bool {
        self.standardized
    }

    /// Cluster bookkeeping.
    pub fn index(&self) -> &ClusterIndex {
        &self.index
    }

    /// Total dimension n.
    pub fn n(&self) -> usize {
        self.index.n()
    }

    /// Number of clusters K.
    pub fn k(&self) -> usize {
        self.index.k()
    }

    /// Same distribution with a different Ξ (revalidates).
    pub fn with_xi(&self, xi: DMatrix<f64>) -> Result<Self> {
        Self::new(self.cluster_sizes(), &self.dof, self.location.clone(), xi, self.standardized)
    }

    /// Joint log-density log f_Y(y).
    ///
    /// `f_Y(y) = |det Ξ|⁻¹ f_X(Ξ⁻¹(y − μ))` with each t cluster contributing
    /// `c(ν, n_k) (1 + x_k'x_k/ν)^{-(ν+n_k)/2}`; a Gaussian cluster contributes
    /// the standard normal density; the standardized variant replaces ν by
    /// (ν − 2) in the quadratic form and normalization.
    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "y has dimension {}, spec dimension {}",
                y.len(),
                self.n()
            )));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("y must be finite".into()));
        }
        let x = &self.xi_inv * (y - &self.location);
        let mut ld = -self.ln_abs_det_xi;
        for k in 0..self.k() {
            let nk = self.index.sizes()[k] as f64;
            let xx: f64 = self.index.range(k).map(|i| x[i] * x[i]).sum();
            let nu = self.dof[k];
            if nu.is_infinite() {
                ld += -0.5 * nk * LN_2PI - 0.5 * xx;
            } else {
                // Scale parameter in the quadratic form: ν (raw) or ν−2 (standardized).
                let s = if self.standardized { nu - 2.0 } else { nu };
                let c = ln_gamma(0.5 * (nu + nk)) - ln_gamma(0.5 * nu) - 0.5 * nk * (s.ln() + LN_PI);
                ld += c - 0.5 * (nu + nk) * (xx / s).ln_1p();
            }
        }
        Ok(ld)
    }

    /// Draw `count` i.i.d. samples; returns a `count × n` matrix (one row per
    /// draw). Deterministic given `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    /// Draw using a caller-provided generator (used by the MC harness).
    pub fn sample_with<R: rand::Rng>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(count, n);
        let mut x = DVector::zeros(n);
        for t in 0..count {
            for k in 0..self.k() {
                let nu = self.dof[k];
                let scale = if nu.is_finite() {
                    // χ²_ν = Gamma(ν/2, scale 2); X_k = √(ν/χ²) Z.
                    let chi2 = Gamma::new(0.5 * nu, 2.0).expect("valid dof").sample(rng);
                    let mut s = (nu / chi2).sqrt();
                    if self.standardized {
                        s *= ((nu - 2.0) / nu).sqrt();
                    }
                    s
                } else {
                    1.0
                };
                for i in self.index.range(k) {
                    let z: f64 = StandardNormal.sample(rng);
                    x[i] = scale * z;
                }
            }
            let y = &self.location + &self.xi * &x;
            out.row_mut(t).copy_from_slice(y.as_slice());
        }
        out
    }

    /// Covariance matrix var(Y): `ΞΞ'` (standardized) or `Ξ D Ξ'` with
    /// `D = diag(ν_k/(ν_k−2) I_{n_k})` (raw); requires all finite ν_k > 2.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if let Some(bad) = self.dof.iter().find(|v| v.is_finite() && **v <= 2.0) {
            return Err(Error::MomentUndefined(format!(
                "variance requires all ν_k > 2, got {bad}"
            )));
        }
        if self.standardized {
            return Ok(&self.xi * self.xi.transpose());
        }
        let mut scaled = self.xi.clone();
        for k in 0..self.k() {
            let nu = self.dof[k];
            let f = if nu.is_finite() { (nu / (nu - 2.0)).sqrt() } else { 1.0 };
            for j in self.index.range(k) {
                for i in 0..self.n() {
                    scaled[(i, j)] *= f;
                }
            }
        }
        Ok(&scaled * scaled.transpose())
    }
}

/// Merge all Gaussian (ν = ∞) clusters of an explicit parameterization into a
/// single trailing-position-preserving cluster, permuting the columns of Ξ
/// accordingly. Returns (sizes, dof, permuted Ξ). Provided as an explicit
/// helper because silent merging would change the parameter layout.
pub fn merge_gaussian_clusters(
    sizes: &[usize],
    dof: &[f64],
    xi: &DMatrix<f64>,
) -> Result<(Vec<usize>, Vec<f64>, DMatrix<f64>)> {
    let index = ClusterIndex::new(sizes)?;
    if dof.len() != sizes.len() {
        return Err(Error::InvalidSpec("dof length must match cluster count".into()));
    }
    let gaussian: Vec<usize> = (0..sizes.len()).filter(|&k| dof[k].is_infinite()).collect();
    if gaussian.len() <= 1 {
        return Ok((sizes.to_vec(), dof.to_vec(), xi.clone()));
    }
    // New column order: clusters in original order, but all Gaussian ones
    // collapsed into the position of the first.
    let first = gaussian[0];
    let mut order: Vec<usize> = Vec::with_capacity(index.n());
    let mut new_sizes = Vec::new();
    let mut new_dof = Vec::new();
    for k in 0..sizes.len() {
        if dof[k].is_infinite() && k != first {
            continue;
        }
        if k == first {
            let merged: usize = gaussian.iter().map(|&g| sizes[g]).sum();
            new_sizes.push(merged);
            new_dof.push(GAUSSIAN_DOF);
            for &g in &gaussian {
                order.extend(index.range(g));
            }
        } else {
            new_sizes.push(sizes[k]);
            new_dof.push(dof[k]);
            order.extend(index.range(k));
        }
    }
    let mut new_xi = DMatrix::zeros(xi.nrows(), xi.ncols());
    for (newj, &oldj) in order.iter().enumerate() {
        new_xi.set_column(newj, &xi.column(oldj));
    }
    Ok((new_sizes, new_dof, new_xi))
}

/// A trivariate reference specification: clusters (1, 2) with ν = (ν₁, ν₂), an
/// asymmetric mixing matrix whose lower-right 2×2 block is symmetric, and
/// `var(Y)` an equicorrelation matrix with ρ = 1/2 (raw parameterization).
/// Used pervasively as a test fixture.
pub fn trivariate_example(nu1: f64, nu2: f64, symmetric_a: bool) -> CTSpec {
    let s = 1.0 / (3.0 * std::f64::consts::SQRT_2); // 1/(3√2)
    let d = 2.0 * std::f64::consts::SQRT_2 / 3.0; // 2√2/3
    let h = 1.0 / std::f64::consts::SQRT_2; // 1/√2
    let a = if symmetric_a {
        DMatrix::from_row_slice(3, 3, &[d, s, s, s, d, s, s, s, d])
    } else {
        DMatrix::from_row_slice(3, 3, &[d, -s, -s, h, h, 0.0, h, 0.0, h])
    };
    let c1 = ((nu1 - 2.0) / nu1).sqrt();
    let c2 = ((nu2 - 2.0) / nu2).sqrt();
    let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![c1, c2, c2]));
    CTSpec::new(&[1, 2], &[nu1, nu2], DVector::zeros(3), a * scale, false)
        .expect("example spec is valid")
}
