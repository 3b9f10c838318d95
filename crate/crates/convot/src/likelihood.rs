//! Log-likelihood derivatives: analytic score, Hessian, Fisher information,
//! the Jacobian linking the unrestricted Ξ̃ to the canonical Ξ, and sandwich
//! covariance assembly.
//!
//! All derivatives are organized in the flat layout `θ = (μ; vec(Ξ); ν)` of
//! dimension n + n² + K. For a standardized specification the derivatives are
//! taken with respect to the standardized Ξ, via the exact chain rule through
//! the rescaling `Ξ_raw = Ξ·Λ(ν)` with `Λ = blockdiag(√((ν_k−2)/ν_k)·I)`.
//! Degrees-of-freedom coordinates of Gaussian (ν = ∞) clusters are not free
//! parameters; their derivative entries are identically zero.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::digamma;

use crate::distribution::{CTSpec, ClusterIndex};
use crate::error::{Error, Result};
use crate::identification::{ClusterStructure, Restriction};
use crate::linalg::{commutation_matrix, vec_of};
use crate::special::trigamma;

/// Flat parameter layout `(μ; vec(Ξ); ν)` for a given cluster partition.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    n: usize,
    k: usize,
}

impl ParamLayout {
    /// Layout for an n-dimensional spec with K clusters.
    pub fn new(n: usize, k: usize) -> Self {
        Self { n, k }
    }

    /// Total flat dimension n + n² + K.
    pub fn dim(&self) -> usize {
        self.n + self.n * self.n + self.k
    }

    /// Positions of μ.
    pub fn mu_range(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    /// Positions of vec(Ξ) (column-major).
    pub fn xi_range(&self) -> std::ops::Range<usize> {
        self.n..self.n + self.n * self.n
    }

    /// Positions of ν.
    pub fn nu_range(&self) -> std::ops::Range<usize> {
        self.n + self.n * self.n..self.dim()
    }

    /// Flat position of Ξ entry (i, j).
    pub fn xi_pos(&self, i: usize, j: usize) -> usize {
        self.n + j * self.n + i
    }

    /// Flat position of ν_k.
    pub fn nu_pos(&self, k: usize) -> usize {
        self.n + self.n * self.n + k
    }
}

/// Per-observation derivative evaluation: score, Hessian, and the dampening
/// weights `W_k = (ν_k+n_k)/(ν_k + X_k'X_k)` with `X = A(y−μ)`, `A = Ξ̃^{-1}`.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    /// Flat score ∇_θ in the layout (μ; vec(Ξ); ν).
    pub score: DVector<f64>,
    /// Flat Hessian ∇_{θθ'}.
    pub hessian: DMatrix<f64>,
    /// Per-cluster weights W_k.
    pub weights: Vec<f64>,
    /// A = Ξ̃^{-1} (inverse of the effective raw mixing matrix).
    pub a: DMatrix<f64>,
    /// X = A(y − μ).
    pub x: DVector<f64>,
}

/// Per-cluster scale factor λ_k of the standardization Λ(ν) and its first two
/// ν-derivatives (1 and 0 for Gaussian clusters).
fn lambda_derivs(nu: f64) -> (f64, f64, f64) {
    if nu.is_infinite() {
        return (1.0, 0.0, 0.0);
    }
    let lam = ((nu - 2.0) / nu).sqrt();
    let d1 = 1.0 / (nu * nu) / lam;
    let d2 = -2.0 / nu.powi(3) / lam - 1.0 / nu.powi(4) / lam.powi(3);
    (lam, d1, d2)
}

/// Evaluation workspace: observation-independent quantities for one spec.
struct Workspace {
    index: ClusterIndex,
    dof: Vec<f64>,
    layout: ParamLayout,
    a: DMatrix<f64>,
    kn: DMatrix<f64>,
    /// (A ⊗ A')K_n, the observation-independent Hessian term.
    aat_kn: DMatrix<f64>,
    /// Chain-rule Jacobian G = ∂θ_raw/∂θ_std' (identity when raw).
    g: Option<DMatrix<f64>>,
    xi_std: DMatrix<f64>,
}

impl Workspace {
    fn new(spec: &CTSpec) -> Result<Self> {
        let index = spec.index().clone();
        let n = index.n();
        let layout = ParamLayout::new(n, index.k());
        let xi_std = spec.xi().clone();
        let (xi_raw, g) = if spec.standardized() {
            let mut xi_raw = xi_std.clone();
            let mut g = DMatrix::identity(layout.dim(), layout.dim());
            for k in 0..index.k() {
                let (lam, d1, _) = lambda_derivs(spec.dof()[k]);
                for j in index.range(k) {
                    for i in 0..n {
                        xi_raw[(i, j)] *= lam;
                        let p = layout.xi_pos(i, j);
                        g[(p, p)] = lam;
                        // ∂Ξ̃_ij/∂ν_k = Ξ_ij·λ'_k.
                        g[(p, layout.nu_pos(k))] = xi_std[(i, j)] * d1;
                    }
                }
            }
            (xi_raw, Some(g))
        } else {
            (xi_std.clone(), None)
        };
        let a = xi_raw
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("mixing matrix is not invertible".into()))?;
        let kn = commutation_matrix(n, n);
        let aat_kn = kron(&a, &a.transpose()) * &kn;
        Ok(Self { index, dof: spec.dof().to_vec(), layout, a, kn, aat_kn, g, xi_std })
    }

    /// Shared score computation: returns (X, weights, raw score).
    fn raw_score(&self, y: &DVector<f64>, mu: &DVector<f64>) -> (DVector<f64>, Vec<f64>, DVector<f64>) {
        let n = self.index.n();
        let kc = self.index.k();
        let layout = &self.layout;
        let a = &self.a;
        let x = a * (y - mu);
        let mut score = DVector::zeros(layout.dim());

        let mut weights = Vec::with_capacity(kc);
        for k in 0..kc {
            let nu = self.dof[k];
            let nk = self.index.sizes()[k] as f64;
            let q: f64 = self.index.range(k).map(|i| x[i] * x[i]).sum();
            let w = if nu.is_infinite() { 1.0 } else { (nu + nk) / (nu + q) };
            weights.push(w);
        }

        // u = Σ_k W_k e_k X_k (clusterwise weighted X).
        let mut u = DVector::zeros(n);
        for k in 0..kc {
            for i in self.index.range(k) {
                u[i] = weights[k] * x[i];
            }
        }
        let at = a.transpose();
        let grad_mu = &at * &u;
        score.rows_mut(0, n).copy_from(&grad_mu);
        let sxi = &at * (&u * x.transpose() - DMatrix::identity(n, n));
        score.rows_mut(n, n * n).copy_from(&vec_of(&sxi));
        for k in 0..kc {
            let nu = self.dof[k];
            if nu.is_infinite() {
                continue;
            }
            let nk = self.index.sizes()[k] as f64;
            let q: f64 = self.index.range(k).map(|i| x[i] * x[i]).sum();
            score[layout.nu_pos(k)] = 0.5
                * (digamma(0.5 * (nu + nk)) - digamma(0.5 * nu) + 1.0
                    - weights[k]
                    - (q / nu).ln_1p());
        }
        (x, weights, score)
    }

    /// Score in the spec's own coordinates (no Hessian).
    fn score_at(&self, y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let (_, _, raw) = self.raw_score(y, mu);
        match &self.g {
            Some(g) => g.transpose() * raw,
            None => raw,
        }
    }

    /// Raw-parameterization score and Hessian at one observation.
    fn raw_bundle(&self, y: &DVector<f64>, mu: &DVector<f64>) -> DerivativeBundle {
        let n = self.index.n();
        let kc = self.index.k();
        let layout = &self.layout;
        let a = &self.a;
        let dim = layout.dim();
        let (x, weights, score) = self.raw_score(y, mu);
        let mut hess = DMatrix::zeros(dim, dim);
        let at = a.transpose();

        // Hessian. Per-cluster helper vectors:
        //   v_k = A'e_k X_k  (n),   m_k = vec(A'e_k X_k X')  (n²),
        //   row_k = X_k'e_k'A  (1×n),   c2_k = 2W_k²/(ν_k+n_k).
        let mut h_mm = DMatrix::zeros(n, n);
        let mut h_mx = DMatrix::zeros(n, n * n);
        let mut h_xx = self.aat_kn.clone();
        let xxt = &x * x.transpose();
        for k in 0..kc {
            let nu = self.dof[k];
            let nk = self.index.sizes()[k] as f64;
            let w = weights[k];
            let c2 = if nu.is_infinite() { 0.0 } else { 2.0 * w * w / (nu + nk) };
            let mut ek_xk = DVector::zeros(n);
            for i in self.index.range(k) {
                ek_xk[i] = x[i];
            }
            let v = &at * &ek_xk;
            let row = v.transpose(); // X_k'e_k'A = (A'e_k X_k)'
            let m = vec_of(&(&v * x.transpose()));
            let ajka = at.columns(self.index.offset(k), self.index.sizes()[k])
                * a.rows(self.index.offset(k), self.index.sizes()[k]);

            h_mm += c2 * &v * &v.transpose() - w * &ajka;
            // ∂∇_μ/∂vec(Ξ̃)' = c2 v (x'⊗row) − W(row⊗A')K_n − W(x'⊗A'J_kA).
            let x_kron_row = kron_vec_row(&x, &row);
            h_mx += c2 * &v * &x_kron_row;
            h_mx -= w * kron_row_mat(&row, &at) * &self.kn;
            h_mx -= w * kron_rowvec_mat(&x.transpose(), &ajka);
            // ∂∇_Ξ̃/∂vec(Ξ̃)' = c2 m m' − W(x row⊗A')K_n − W(xx'⊗A'J_kA)
            //                  − W(A⊗v x')K_n.
            h_xx += c2 * &m * m.transpose();
            h_xx -= w * kron(&(&x * &row), &at) * &self.kn;
            h_xx -= w * kron(&xxt, &ajka);
            h_xx -= w * kron(a, &(&v * x.transpose())) * &self.kn;

            if nu.is_finite() {
                let dw = (w - w * w) / (nu + nk);
                // Cross derivatives with ν_k.
                let p = layout.nu_pos(k);
                for i in 0..n {
                    hess[(i, p)] = dw * v[i];
                    hess[(p, i)] = dw * v[i];
                }
                for (r, &mv) in m.iter().enumerate() {
                    hess[(n + r, p)] = dw * mv;
                    hess[(p, n + r)] = dw * mv;
                }
                hess[(p, p)] = 0.25 * trigamma(0.5 * (nu + nk))
                    - 0.25 * trigamma(0.5 * nu)
                    + 0.5 / nu
                    + (w * w - 2.0 * w) / (2.0 * (nu + nk));
            }
        }
        hess.view_mut((0, 0), (n, n)).copy_from(&h_mm);
        hess.view_mut((0, n), (n, n * n)).copy_from(&h_mx);
        hess.view_mut((n, 0), (n * n, n)).copy_from(&h_mx.transpose());
        hess.view_mut((n, n), (n * n, n * n)).copy_from(&h_xx);

        DerivativeBundle { score, hessian: hess, weights, a: a.clone(), x }
    }

    /// Bundle in the spec's own coordinates (chain rule for standardized).
    fn bundle(&self, y: &DVector<f64>, mu: &DVector<f64>) -> DerivativeBundle {
        let raw = self.raw_bundle(y, mu);
        let Some(g) = &self.g else { return raw };
        let layout = &self.layout;
        let score = g.transpose() * &raw.score;
        let mut hess = g.transpose() * &raw.hessian * g;
        // Second-order terms of the reparameterization: ∂²Ξ̃_ij/∂Ξ_ij∂ν_k = λ'_k
        // and ∂²Ξ̃_ij/∂ν_k² = Ξ_ij·λ''_k, contracted against the raw Ξ̃ score.
        for k in 0..self.index.k() {
            let (_, d1, d2) = lambda_derivs(self.dof[k]);
            if d1 == 0.0 {
                continue;
            }
            let p = layout.nu_pos(k);
            let mut acc = 0.0;
            for j in self.index.range(k) {
                for i in 0..self.index.n() {
                    let q = layout.xi_pos(i, j);
                    let gr = raw.score[q];
                    hess[(q, p)] += gr * d1;
                    hess[(p, q)] += gr * d1;
                    acc += gr * self.xi_std[(i, j)] * d2;
                }
            }
            hess[(p, p)] += acc;
        }
        DerivativeBundle { score, hessian: hess, ..raw }
    }
}

/// Dense Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `x' ⊗ row` for column x and row vector `row` (1 × n·len(row)).
fn kron_vec_row(x: &DVector<f64>, row: &nalgebra::RowDVector<f64>) -> nalgebra::RowDVector<f64> {
    let mut out = nalgebra::RowDVector::zeros(x.len() * row.len());
    for (j, &xj) in x.iter().enumerate() {
        for (i, &ri) in row.iter().enumerate() {
            out[j * row.len() + i] = xj * ri;
        }
    }
    out
}

/// `row ⊗ B` for a 1×m row and n×n matrix B (n × mn).
fn kron_row_mat(row: &nalgebra::RowDVector<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (b.nrows(), row.len());
    let mut out = DMatrix::zeros(n, m * b.ncols());
    for (j, &rj) in row.iter().enumerate() {
        out.view_mut((0, j * b.ncols()), (n, b.ncols())).copy_from(&(b * rj));
    }
    out
}

/// `row ⊗ B` where row is a matrix transpose view (1×m).
fn kron_rowvec_mat(
    row: &nalgebra::Matrix1xX<f64>,
    b: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = row.len();
    let mut out = DMatrix::zeros(b.nrows(), m * b.ncols());
    for j in 0..m {
        out.view_mut((0, j * b.ncols()), (b.nrows(), b.ncols())).copy_from(&(b * row[j]));
    }
    out
}

/// Log-likelihood of a T×n data matrix: the sum of per-row log-densities.
pub fn loglik(spec: &CTSpec, data: &DMatrix<f64>) -> Result<f64> {
    if data.ncols() != spec.n() {
        return Err(Error::InvalidArgument(format!(
            "data has {} columns, spec dimension {}",
            data.ncols(),
            spec.n()
        )));
    }
    let mut total = 0.0;
    let mut y = DVector::zeros(spec.n());
    for r in 0..data.nrows() {
        for j in 0..spec.n() {
            y[j] = data[(r, j)];
        }
        total += spec.log_density(&y)?;
    }
    Ok(total)
}

/// Score and Hessian at one observation, in the spec's coordinates.
pub fn derivative_bundle(spec: &CTSpec, y: &DVector<f64>) -> Result<DerivativeBundle> {
    if y.len() != spec.n() {
        return Err(Error::InvalidArgument("observation dimension mismatch".into()));
    }
    let ws = Workspace::new(spec)?;
    Ok(ws.bundle(y, spec.location()))
}

/// Flat score ∇_θ at one observation.
pub fn score(spec: &CTSpec, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(derivative_bundle(spec, y)?.score)
}

/// Flat Hessian ∇_{θθ'} at one observation.
pub fn hessian(spec: &CTSpec, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(derivative_bundle(spec, y)?.hessian)
}

/// Batch log-likelihood and summed flat score over a T×n data matrix.
/// Equivalent to summing [`score`] over rows, but reuses one workspace.
pub fn loglik_and_score(spec: &CTSpec, data: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    if data.ncols() != spec.n() {
        return Err(Error::InvalidArgument("data dimension mismatch".into()));
    }
    let ws = Workspace::new(spec)?;
    let mut total = DVector::zeros(ws.layout.dim());
    let mut ll = 0.0;
    let mut y = DVector::zeros(spec.n());
    for r in 0..data.nrows() {
        for j in 0..spec.n() {
            y[j] = data[(r, j)];
        }
        ll += spec.log_density(&y)?;
        total += ws.score_at(&y, spec.location());
    }
    Ok((ll, total))
}

/// Fisher information in the flat layout (μ; vec(Ξ); ν).
///
/// Blocks: `I_μ = Σ φ_k A'J_kA` with `φ_k = (ν_k+n_k)/(ν_k+n_k+2)`;
/// `I_Ξ̃ = (A⊗A')K_n + Σ_k Ψ_k`;
/// `I_{ν_k} = ¼(ψ'(ν_k/2) − ψ'((ν_k+n_k)/2)) − n_k(ν_k+n_k+4)/(2ν_k(ν_k+n_k+2)(ν_k+n_k))`;
/// `I_{Ξ̃ν_k} = ((φ_k−1)/(ν_k+n_k))·vec(A'J_k)`; the μ cross blocks vanish.
/// Requires every finite ν_k > 2 (otherwise the Ξ blocks are undefined).
/// Rows/columns of Gaussian cluster dof are zero.
pub fn fisher_information(spec: &CTSpec) -> Result<DMatrix<f64>> {
    let ws = Workspace::new(spec)?;
    if let Some(bad) = ws.dof.iter().find(|v| v.is_finite() && **v <= 2.0) {
        return Err(Error::MomentUndefined(format!(
            "Fisher information for Ξ requires ν_k > 2, got {bad}"
        )));
    }
    let n = ws.index.n();
    let kc = ws.index.k();
    let layout = &ws.layout;
    let a = &ws.a;
    let at = a.transpose();
    let mut info = DMatrix::zeros(layout.dim(), layout.dim());

    // Convenience: A'J_kA and vec(A'J_k).
    let phis: Vec<f64> = (0..kc)
        .map(|k| {
            let nu = ws.dof[k];
            let nk = ws.index.sizes()[k] as f64;
            if nu.is_infinite() { 1.0 } else { (nu + nk) / (nu + nk + 2.0) }
        })
        .collect();

    // I_μ.
    let mut i_mu = DMatrix::zeros(n, n);
    for k in 0..kc {
        let ajka = at.columns(ws.index.offset(k), ws.index.sizes()[k])
            * a.rows(ws.index.offset(k), ws.index.sizes()[k]);
        i_mu += phis[k] * ajka;
    }
    info.view_mut((0, 0), (n, n)).copy_from(&i_mu);

    // I_Ξ̃ = (A⊗A')K_n + Σ Ψ_k.
    let mut i_xi = ws.aat_kn.clone();
    for k in 0..kc {
        let jk = ws.index.jk(k);
        let ajka = &at * &jk * a;
        let mut j_dot = DMatrix::zeros(n, n);
        for l in 0..kc {
            let scale = if l == k {
                1.0
            } else {
                let nu = ws.dof[l];
                if nu.is_infinite() { 1.0 } else { nu / (nu - 2.0) }
            };
            for i in ws.index.range(l) {
                j_dot[(i, i)] = scale;
            }
        }
        let jka = &jk * a;
        let atjk = &at * &jk;
        let vec_atjk = vec_of(&atjk);
        let psi = phis[k] * kron(&j_dot, &ajka)
            + (phis[k] - 1.0)
                * (kron(&jka, &atjk) * &ws.kn + &vec_atjk * vec_atjk.transpose());
        i_xi += psi;
    }
    info.view_mut((n, n), (n * n, n * n)).copy_from(&i_xi);

    // ν blocks.
    for k in 0..kc {
        let nu = ws.dof[k];
        if nu.is_infinite() {
            continue;
        }
        let nk = ws.index.sizes()[k] as f64;
        let p = layout.nu_pos(k);
        info[(p, p)] = 0.25 * (trigamma(0.5 * nu) - trigamma(0.5 * (nu + nk)))
            - nk * (nu + nk + 4.0) / (2.0 * nu * (nu + nk + 2.0) * (nu + nk));
        let coef = (phis[k] - 1.0) / (nu + nk);
        let atjk = &at * ws.index.jk(k);
        let v = vec_of(&atjk);
        for (r, &vr) in v.iter().enumerate() {
            info[(n + r, p)] = coef * vr;
            info[(p, n + r)] = coef * vr;
        }
    }

    // Standardized coordinates: the score transforms linearly, so I = G'I G.
    if let Some(g) = &ws.g {
        info = g.transpose() * info * g;
    }
    Ok(info)
}

/// The Jacobian `M = ∂vec(Ξ)/∂vec(Ξ̃)'` of the canonicalization map at a
/// canonical point (block diagonal over block columns), together with its
/// Moore-Penrose pseudo-inverse.
pub fn jacobian_identified(
    xi: &DMatrix<f64>,
    sizes: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let index = ClusterIndex::new(sizes)?;
    let n = index.n();
    if xi.nrows() != n || xi.ncols() != n {
        return Err(Error::InvalidArgument("xi dimension must match sizes".into()));
    }
    let kc = index.k();
    let mut m = DMatrix::zeros(n * n, n * n);
    for k in 0..kc {
        let nk = sizes[k];
        let xi_kk = xi.view((index.offset(k), index.offset(k)), (nk, nk)).into_owned();
        // ∂vec(P_kk')/∂vec(Ξ̃_kk')' at the canonical point (P_kk = I):
        // K_{n_k}(Ξ_kk^{-1}⊗I)[I − (I⊗Ξ_kk + Ξ_kk⊗I)^{-1}(I + K_{n_k})(I⊗Ξ_kk)].
        let knk = commutation_matrix(nk, nk);
        let eye_k = DMatrix::identity(nk, nk);
        let eye_k2 = DMatrix::identity(nk * nk, nk * nk);
        let xi_inv = xi_kk
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("diagonal block {} not invertible", k + 1)))?;
        let inner = (kron(&eye_k, &xi_kk) + kron(&xi_kk, &eye_k))
            .try_inverse()
            .ok_or_else(|| Error::Singular("singular Sylvester operator in Jacobian".into()))?;
        let dp = &knk
            * kron(&xi_inv, &eye_k)
            * (&eye_k2 - inner * (&eye_k2 + &knk) * kron(&eye_k, &xi_kk));

        // Assemble Π^{(k)} from its cluster-blocks.
        let mut pi = DMatrix::zeros(n * nk, n * nk);
        // Row/col offsets in Π follow cluster coordinate offsets scaled by n_k.
        for i in 0..kc {
            let ni = sizes[i];
            let ro = index.offset(i) * nk;
            for j in 0..kc {
                let nj = sizes[j];
                let co = index.offset(j) * nk;
                let block: Option<DMatrix<f64>> = if i == j && j != k {
                    Some(DMatrix::identity(ni * nk, ni * nk))
                } else if i != j && j == k {
                    let xi_ik =
                        xi.view((index.offset(i), index.offset(k)), (ni, nk)).into_owned();
                    Some(kron(&xi_ik, &eye_k) * &dp)
                } else if i == j && j == k {
                    Some(kron(&eye_k, &eye_k) + kron(&xi_kk, &eye_k) * &dp)
                } else {
                    None
                };
                if let Some(b) = block {
                    debug_assert_eq!(b.nrows(), ni * nk);
                    debug_assert_eq!(b.ncols(), nj * nk);
                    m_view_add(&mut pi, ro, co, &b);
                }
            }
        }
        let gamma = commutation_matrix(nk, n) * pi * commutation_matrix(n, nk);
        let off = index.offset(k) * n;
        m.view_mut((off, off), (n * nk, n * nk)).copy_from(&gamma);
    }
    let m_plus = m
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok((m, m_plus))
}

fn m_view_add(target: &mut DMatrix<f64>, r: usize, c: usize, b: &DMatrix<f64>) {
    let mut view = target.view_mut((r, c), (b.nrows(), b.ncols()));
    view += b;
}

/// Basis matrix D (n² × p) whose columns are the free directions of vec(Ξ)
/// under the restriction: symmetric diagonal-block coordinates (lower
/// triangle, with the mirrored entry tied), free off-diagonal entries for
/// just-identified Ξ, symmetric pairs for symmetric Ξ, and per-block
/// (d, β, β_kl) coefficient directions for the block forms.
pub fn free_xi_basis(structure: &ClusterStructure) -> DMatrix<f64> {
    let sizes = structure.sizes();
    let index = ClusterIndex::new(sizes).expect("validated structure");
    let n = index.n();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let unit = |i: usize, j: usize| -> DVector<f64> {
        let mut v = DVector::zeros(n * n);
        v[j * n + i] = 1.0;
        v
    };
    match structure.restriction() {
        Restriction::JustIdentified => {
            // Diagonal blocks: symmetric coordinates.
            for k in 0..index.k() {
                for j in index.range(k) {
                    for i in index.range(k) {
                        if i == j {
                            cols.push(unit(i, j));
                        } else if i > j {
                            cols.push(unit(i, j) + unit(j, i));
                        }
                    }
                }
            }
            // Everything outside the diagonal blocks is free.
            for k in 0..index.k() {
                for j in index.range(k) {
                    for i in 0..n {
                        if !index.range(k).contains(&i) {
                            cols.push(unit(i, j));
                        }
                    }
                }
            }
        }
        Restriction::SymmetricXi => {
            for j in 0..n {
                for i in j..n {
                    if i == j {
                        cols.push(unit(i, j));
                    } else {
                        cols.push(unit(i, j) + unit(j, i));
                    }
                }
            }
        }
        Restriction::Block | Restriction::BlockAsymmetric => {
            let pidx = ClusterIndex::new(structure.partition()).expect("validated partition");
            for k in 0..pidx.k() {
                // d_k: all diagonal entries of block k move together.
                let mut d = DVector::zeros(n * n);
                for i in pidx.range(k) {
                    d[i * n + i] = 1.0;
                }
                cols.push(d);
                // β_kk for non-singleton blocks.
                if pidx.sizes()[k] > 1 {
                    let mut b = DVector::zeros(n * n);
                    for i in pidx.range(k) {
                        for j in pidx.range(k) {
                            if i != j {
                                b[j * n + i] = 1.0;
                            }
                        }
                    }
                    cols.push(b);
                }
            }
            let sym = structure.restriction() == Restriction::Block;
            for k in 0..pidx.k() {
                for l in 0..pidx.k() {
                    if l == k || (sym && l < k) {
                        continue;
                    }
                    let mut b = DVector::zeros(n * n);
                    for i in pidx.range(k) {
                        for j in pidx.range(l) {
                            b[j * n + i] = 1.0;
                        }
                    }
                    if sym {
                        for i in pidx.range(l) {
                            for j in pidx.range(k) {
                                b[j * n + i] = 1.0;
                            }
                        }
                    }
                    cols.push(b);
                }
            }
        }
    }
    DMatrix::from_columns(&cols)
}

/// Embedding of the full flat layout onto free parameters:
/// `B = blockdiag(I_n, D, S_ν)` where D is [`free_xi_basis`] and S_ν keeps the
/// finite-dof coordinates only. Used to compress score/Hessian/information to
/// the free parameter vector (μ; θ_Ξ; ν finite).
pub fn free_parameter_basis(structure: &ClusterStructure, dof: &[f64]) -> DMatrix<f64> {
    let d = free_xi_basis(structure);
    let n: usize = structure.sizes().iter().sum();
    let kc = structure.sizes().len();
    let n_free_nu = dof.iter().filter(|v| v.is_finite()).count();
    let full = n + n * n + kc;
    let p = n + d.ncols() + n_free_nu;
    let mut b = DMatrix::zeros(full, p);
    for i in 0..n {
        b[(i, i)] = 1.0;
    }
    b.view_mut((n, n), (n * n, d.ncols())).copy_from(&d);
    let mut col = n + d.ncols();
    for (k, v) in dof.iter().enumerate() {
        if v.is_finite() {
            b[(n + n * n + k, col)] = 1.0;
            col += 1;
        }
    }
    b
}

/// Sandwich and inverse-Fisher covariance estimates of the free parameters.
#[derive(Debug, Clone)]
pub struct SandwichResult {
    /// (1/T)·Ĵ⁻¹ Î Ĵ⁻¹ with Ĵ = −mean Hessian, Î = mean score outer product.
    pub sandwich: DMatrix<f64>,
    /// (1/T)·I(θ̂)⁻¹, the inverse-Fisher covariance.
    pub inv_fisher: DMatrix<f64>,
    /// Ĵ (compressed to free parameters).
    pub j_hat: DMatrix<f64>,
    /// Î (compressed to free parameters).
    pub i_hat: DMatrix<f64>,
}

/// Compute the sandwich covariance `(1/T)Ĵ⁻¹ÎĴ⁻¹` over a fitted data set,
/// in the free coordinates of the given structure, alongside the
/// inverse-Fisher covariance. Expects a (near-)stationary point so that the
/// curvature correction of the canonical reparameterization is negligible.
pub fn sandwich_covariance(
    spec: &CTSpec,
    data: &DMatrix<f64>,
    structure: &ClusterStructure,
) -> Result<SandwichResult> {
    let b = free_parameter_basis(structure, spec.dof());
    sandwich_covariance_basis(spec, data, &b)
}

/// [`sandwich_covariance`] with an explicit compression basis B (flat-dim ×
/// free-dim), e.g. with the μ columns removed when the location is fixed.
pub fn sandwich_covariance_basis(
    spec: &CTSpec,
    data: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<SandwichResult> {
    if data.ncols() != spec.n() {
        return Err(Error::InvalidArgument("data dimension mismatch".into()));
    }
    let t = data.nrows();
    if t == 0 {
        return Err(Error::InvalidArgument("empty data".into()));
    }
    let ws = Workspace::new(spec)?;
    let p = b.ncols();
    let mut j_acc = DMatrix::zeros(p, p);
    let mut i_acc = DMatrix::zeros(p, p);
    let mut y = DVector::zeros(spec.n());
    for r in 0..t {
        for j in 0..spec.n() {
            y[j] = data[(r, j)];
        }
        let bundle = ws.bundle(&y, spec.location());
        let sc = b.transpose() * &bundle.score;
        i_acc += &sc * sc.transpose();
        j_acc += b.transpose() * &bundle.hessian * b;
    }
    let j_hat = -j_acc / t as f64;
    let i_hat = i_acc / t as f64;
    let j_inv = j_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("mean Hessian is not invertible".into()))?;
    let sandwich = &j_inv * &i_hat * &j_inv / t as f64;
    let info = b.transpose() * fisher_information(spec)? * b;
    let inv_fisher = info
        .try_inverse()
        .ok_or_else(|| Error::Singular("Fisher information is not invertible".into()))?
        / t as f64;
    Ok(SandwichResult { sandwich, inv_fisher, j_hat, i_hat })
}

/// The §-style reference simulation design used across tests: n = 3 with
/// cluster sizes (1, 2), ν = (4, 8), raw parameterization.
#[cfg(test)]
pub(crate) fn simulation_design() -> CTSpec {
    let mu = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let xi = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8]);
    CTSpec::new(&[1, 2], &[4.0, 8.0], mu, xi, false).unwrap()
}
