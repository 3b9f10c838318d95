//! Canonical identification of the mixing matrix Ξ.
//!
//! Ξ is identified only up to clusterwise orthonormal rotations: `Ξ_k` and
//! `Ξ_k Q_k` with `Q_k'Q_k = I` generate the same distribution. The canonical
//! representative makes every diagonal block `Ξ_kk` symmetric positive
//! definite (block polar factors), and cluster order is pinned by maximizing
//! `tr{Ξ}` over permutations. The module also provides block-structured Ξ
//! construction (compound-symmetric diagonal blocks, constant off-diagonal
//! blocks) and the per-cluster decomposition `ΞΞ' = Σ_k Ω_k`.

use nalgebra::DMatrix;

use crate::distribution::ClusterIndex;
use crate::error::{Error, Result};
use crate::linalg::{sym_exp, sym_inv_sqrt};

/// Relative eigenvalue floor below which a diagonal block is declared
/// singular in the polar factor.
const POLAR_FLOOR: f64 = 1e-12;

/// Relative trace tolerance for declaring a permutation tie.
const TRACE_TIE_REL: f64 = 1e-9;

/// Identification restriction imposed on Ξ during estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    /// Canonical Ξ with free off-diagonal blocks (symmetric-PD diagonal
    /// blocks only).
    JustIdentified,
    /// Fully symmetric Ξ.
    SymmetricXi,
    /// Block Ξ with symmetric off-diagonal coefficients (β_kl = β_lk).
    Block,
    /// Block Ξ with free (asymmetric) off-diagonal coefficients.
    BlockAsymmetric,
}

/// A cluster partition plus the Ξ restriction used for estimation. For the
/// block restrictions the block partition defaults to the cluster sizes.
#[derive(Debug, Clone)]
pub struct ClusterStructure {
    sizes: Vec<usize>,
    restriction: Restriction,
    partition: Vec<usize>,
}

impl ClusterStructure {
    /// Construct with the block partition equal to the cluster sizes.
    pub fn new(sizes: &[usize], restriction: Restriction) -> Result<Self> {
        ClusterIndex::new(sizes)?;
        Ok(Self { sizes: sizes.to_vec(), restriction, partition: sizes.to_vec() })
    }

    /// Construct with an explicit block partition (must sum to the same n).
    pub fn with_partition(
        sizes: &[usize],
        restriction: Restriction,
        partition: &[usize],
    ) -> Result<Self> {
        ClusterIndex::new(sizes)?;
        ClusterIndex::new(partition)?;
        if partition.iter().sum::<usize>() != sizes.iter().sum::<usize>() {
            return Err(Error::InvalidSpec("block partition must sum to n".into()));
        }
        Ok(Self { sizes: sizes.to_vec(), restriction, partition: partition.to_vec() })
    }

    /// Cluster sizes.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// The restriction.
    pub fn restriction(&self) -> Restriction {
        self.restriction
    }

    /// Block partition used by the block restrictions.
    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    /// Total dimension.
    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of free parameters in Ξ under the restriction.
    ///
    /// Just-identified: n² minus the n_k(n_k−1)/2 rotation constraints per
    /// cluster. Symmetric: n(n+1)/2. Block: K(K+3)/2 coefficients, or
    /// K(K+1) if asymmetric, minus one per singleton block (a 1×1 diagonal
    /// block has a single coefficient).
    pub fn xi_param_count(&self) -> usize {
        let n = self.n();
        match self.restriction {
            Restriction::JustIdentified => {
                n * n - self.sizes.iter().map(|&nk| nk * (nk - 1) / 2).sum::<usize>()
            }
            Restriction::SymmetricXi => n * (n + 1) / 2,
            Restriction::Block | Restriction::BlockAsymmetric => {
                let k = self.partition.len();
                let singles = self.partition.iter().filter(|&&nk| nk == 1).count();
                match self.restriction {
                    Restriction::Block => k * (k + 3) / 2 - singles,
                    _ => k * (k + 1) - singles,
                }
            }
        }
    }
}

/// The per-cluster scale components `Ω_k = Ξ_k Ξ_k'` (symmetric PSD with
/// rank n_k, summing to ΞΞ').
#[derive(Debug, Clone)]
pub struct OmegaSet {
    omegas: Vec<DMatrix<f64>>,
    sizes: Vec<usize>,
}

impl OmegaSet {
    /// The component matrices.
    pub fn omegas(&self) -> &[DMatrix<f64>] {
        &self.omegas
    }

    /// Cluster sizes (the ranks of the components).
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Σ_k Ω_k = ΞΞ'.
    pub fn total(&self) -> DMatrix<f64> {
        let n = self.omegas[0].nrows();
        self.omegas.iter().fold(DMatrix::zeros(n, n), |acc, o| acc + o)
    }

    /// Numerical rank check: each Ω_k must have exactly n_k eigenvalues
    /// above `tol` times its largest eigenvalue.
    pub fn check_ranks(&self, tol: f64) -> Result<()> {
        for (k, (omega, &nk)) in self.omegas.iter().zip(&self.sizes).enumerate() {
            let eig = omega.clone().symmetric_eigen();
            let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let rank = eig.eigenvalues.iter().filter(|&&l| l > tol * lmax).count();
            if rank != nk {
                return Err(Error::Singular(format!(
                    "Ω_{} has numerical rank {rank}, expected {nk}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Decompose ΞΞ' into its per-cluster components `Ω_k = Ξ_k Ξ_k'` (block
/// columns of Ξ).
pub fn omega_decomposition(xi: &DMatrix<f64>, sizes: &[usize]) -> Result<OmegaSet> {
    let index = ClusterIndex::new(sizes)?;
    if xi.nrows() != index.n() || xi.ncols() != index.n() {
        return Err(Error::InvalidArgument("xi dimension must match sizes".into()));
    }
    let omegas = (0..index.k())
        .map(|k| {
            let block = xi.columns(index.offset(k), sizes[k]);
            &block * block.transpose()
        })
        .collect();
    Ok(OmegaSet { omegas, sizes: sizes.to_vec() })
}

/// Canonicalize Ξ̃ by right-multiplying each block column with its polar
/// factor `P_kk = Ξ̃_kk'(Ξ̃_kk Ξ̃_kk')^{−1/2}`, making every diagonal block
/// `Ξ_kk = (Ξ̃_kk Ξ̃_kk')^{1/2}` symmetric positive definite while leaving
/// each `Ξ_k Ξ_k'` (and hence the distribution) unchanged.
pub fn canonicalize(xi_tilde: &DMatrix<f64>, sizes: &[usize]) -> Result<DMatrix<f64>> {
    let index = ClusterIndex::new(sizes)?;
    let n = index.n();
    if xi_tilde.nrows() != n || xi_tilde.ncols() != n {
        return Err(Error::InvalidArgument("xi dimension must match sizes".into()));
    }
    let mut out = xi_tilde.clone();
    for k in 0..index.k() {
        let off = index.offset(k);
        let nk = sizes[k];
        let diag = xi_tilde.view((off, off), (nk, nk)).into_owned();
        let inv_sqrt = sym_inv_sqrt(&(&diag * diag.transpose()), POLAR_FLOOR).map_err(|_| {
            Error::Singular(format!("diagonal block of cluster {} is numerically singular", k + 1))
        })?;
        let p = diag.transpose() * inv_sqrt;
        // The polar factor must be orthonormal; a floored (rank-deficient)
        // inverse square root breaks this, so report it as singularity.
        let gram = &p * p.transpose();
        if (gram - DMatrix::identity(nk, nk)).norm() > 1e-8 {
            return Err(Error::Singular(format!(
                "diagonal block of cluster {} is numerically singular",
                k + 1
            )));
        }
        let col = xi_tilde.columns(off, nk) * &p;
        out.view_mut((0, off), (n, nk)).copy_from(&col);
    }
    Ok(out)
}

/// All permutations of 0..k in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn rec(k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(k, &mut cur, &mut used, &mut out);
    out
}

/// Reorder the block columns of Ξ according to a cluster permutation.
fn permute_block_columns(
    xi: &DMatrix<f64>,
    index: &ClusterIndex,
    perm: &[usize],
) -> DMatrix<f64> {
    let n = index.n();
    let mut out = DMatrix::zeros(n, n);
    let mut col = 0;
    for &k in perm {
        let nk = index.sizes()[k];
        out.view_mut((0, col), (n, nk)).copy_from(&xi.columns(index.offset(k), nk));
        col += nk;
    }
    out
}

/// Result of the trace-maximizing cluster ordering.
#[derive(Debug, Clone)]
pub struct TraceMaxResult {
    /// The chosen permutation (new position i holds old cluster perm[i]).
    pub permutation: Vec<usize>,
    /// Ξ permuted and re-canonicalized.
    pub xi: DMatrix<f64>,
    /// Degrees of freedom in the new order.
    pub dof: Vec<f64>,
    /// Cluster sizes in the new order.
    pub sizes: Vec<usize>,
}

/// Pin the cluster order of a canonical Ξ by enumerating all K! orders,
/// re-canonicalizing each, and keeping the trace-maximizing one. Trace ties
/// (relative tolerance 1e−9) are broken lexicographically by the permuted
/// (n_k, ν_k) sequence. K is capped at 8 (40320 re-canonicalizations);
/// beyond that, supply a fixed cluster order instead.
pub fn trace_max_permutation(
    xi: &DMatrix<f64>,
    sizes: &[usize],
    dof: &[f64],
) -> Result<TraceMaxResult> {
    let index = ClusterIndex::new(sizes)?;
    if dof.len() != sizes.len() {
        return Err(Error::InvalidArgument("dof length must match cluster count".into()));
    }
    let k = index.k();
    if k > 8 {
        return Err(Error::InvalidArgument(format!(
            "trace-max enumeration supports at most 8 clusters, got {k}; fix the cluster order \
             explicitly for larger K"
        )));
    }
    let mut best: Option<(Vec<usize>, DMatrix<f64>, f64)> = None;
    for perm in permutations(k) {
        let permuted = permute_block_columns(xi, &index, &perm);
        let perm_sizes: Vec<usize> = perm.iter().map(|&p| sizes[p]).collect();
        // A rearrangement whose diagonal block is numerically singular has no
        // canonical representative and cannot be the identified order; skip
        // it rather than fail the whole search.
        let Ok(candidate) = canonicalize(&permuted, &perm_sizes) else {
            continue;
        };
        let tr = candidate.trace();
        let better = match &best {
            None => true,
            Some((bperm, _, btr)) => {
                if tr > *btr + TRACE_TIE_REL * btr.abs() {
                    true
                } else if tr < *btr - TRACE_TIE_REL * btr.abs() {
                    false
                } else {
                    // Tie: smaller (n_k, ν_k) sequence wins.
                    let key = |p: &[usize]| -> Vec<(usize, f64)> {
                        p.iter().map(|&i| (sizes[i], dof[i])).collect()
                    };
                    let (ka, kb) = (key(&perm), key(bperm));
                    ka.iter()
                        .zip(&kb)
                        .find_map(|(a, b)| {
                            if a.0 != b.0 {
                                Some(a.0 < b.0)
                            } else if a.1 != b.1 {
                                Some(a.1 < b.1)
                            } else {
                                None
                            }
                        })
                        .unwrap_or(false)
                }
            }
        };
        if better {
            best = Some((perm, candidate, tr));
        }
    }
    let Some((permutation, xi, _)) = best else {
        return Err(Error::Singular(
            "no cluster arrangement admits a canonical representative".into(),
        ));
    };
    let dof = permutation.iter().map(|&p| dof[p]).collect();
    let sizes = permutation.iter().map(|&p| sizes[p]).collect();
    Ok(TraceMaxResult { permutation, xi, dof, sizes })
}

/// Assemble a block Ξ: compound-symmetric diagonal blocks
/// `Ξ_kk = d_kk I + β_kk (11' − I)` and constant off-diagonal blocks
/// `Ξ_kl = β_kl 11'`. `offdiag` is a K×K matrix whose (k,l) entry is β_kl
/// (the diagonal is ignored). Errors when a diagonal block is singular.
pub fn build_block_xi(
    diag_params: &[(f64, f64)],
    offdiag: &DMatrix<f64>,
    partition: &[usize],
) -> Result<DMatrix<f64>> {
    let index = ClusterIndex::new(partition)?;
    let k = index.k();
    if diag_params.len() != k || offdiag.nrows() != k || offdiag.ncols() != k {
        return Err(Error::InvalidArgument(
            "diag_params and offdiag must match the partition size".into(),
        ));
    }
    let n = index.n();
    let mut xi = DMatrix::zeros(n, n);
    for bk in 0..k {
        let (d, beta) = diag_params[bk];
        let nk = partition[bk];
        // Eigenvalues of the compound-symmetric block: d − β (n_k − 1 times)
        // and d + (n_k − 1)β.
        let lam1 = d - beta;
        let lam2 = d + (nk as f64 - 1.0) * beta;
        if (nk > 1 && lam1.abs() < 1e-12) || lam2.abs() < 1e-12 {
            return Err(Error::Singular(format!("diagonal block {} is singular", bk + 1)));
        }
        for i in index.range(bk) {
            for j in index.range(bk) {
                xi[(i, j)] = if i == j { d } else { beta };
            }
        }
        for bl in 0..k {
            if bl == bk {
                continue;
            }
            for i in index.range(bk) {
                for j in index.range(bl) {
                    xi[(i, j)] = offdiag[(bk, bl)];
                }
            }
        }
    }
    Ok(xi)
}

/// The unconstrained optimizer parameterization: `Ξ_kk = exp(γ_k)` for
/// symmetric γ_k (symmetric PD by construction), off-diagonal blocks copied
/// from `offdiag` (its diagonal blocks are ignored).
pub fn symmetric_block_param(
    gammas: &[DMatrix<f64>],
    offdiag: &DMatrix<f64>,
    sizes: &[usize],
) -> Result<DMatrix<f64>> {
    let index = ClusterIndex::new(sizes)?;
    let n = index.n();
    if gammas.len() != index.k() || offdiag.nrows() != n || offdiag.ncols() != n {
        return Err(Error::InvalidArgument("gamma/offdiag dimensions must match sizes".into()));
    }
    let mut xi = offdiag.clone();
    for k in 0..index.k() {
        let g = &gammas[k];
        if g.nrows() != sizes[k] || g.ncols() != sizes[k] {
            return Err(Error::InvalidArgument(format!(
                "gamma for cluster {} must be {}×{}",
                k + 1,
                sizes[k],
                sizes[k]
            )));
        }
        if (g - g.transpose()).norm() > 1e-10 * (1.0 + g.norm()) {
            return Err(Error::InvalidArgument(format!(
                "gamma for cluster {} must be symmetric",
                k + 1
            )));
        }
        let off = index.offset(k);
        xi.view_mut((off, off), (sizes[k], sizes[k])).copy_from(&sym_exp(g));
    }
    Ok(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{trivariate_example, CTSpec};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    fn random_xi(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Diagonally dominant for comfortable invertibility.
        DMatrix::from_fn(n, n, |i, j| {
            rng.gen_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 }
        })
    }

    /// A random block-diagonal orthonormal matrix (QR per cluster).
    fn random_block_orthonormal(sizes: &[usize], seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let index = ClusterIndex::new(sizes).unwrap();
        let n = index.n();
        let mut q = DMatrix::zeros(n, n);
        for k in 0..index.k() {
            let nk = sizes[k];
            let a = DMatrix::from_fn(nk, nk, |_, _| rng.gen_range(-1.0..1.0f64));
            let qr = a.qr();
            let off = index.offset(k);
            q.view_mut((off, off), (nk, nk)).copy_from(&qr.q());
        }
        q
    }

    #[test]
    fn canonical_matrix_is_fixed_point() {
        // The trivariate reference Ξ has a scalar first block and √(c₂/2)·I
        // lower-right block: already canonical.
        let spec = trivariate_example(4.0, 8.0, false);
        let xi = spec.xi();
        let out = canonicalize(xi, &[1, 2]).unwrap();
        assert_relative_eq!(out, *xi, epsilon = 1e-12);
        // Idempotence on random matrices.
        for seed in 0..5 {
            let xi = random_xi(4, seed);
            let once = canonicalize(&xi, &[1, 3]).unwrap();
            let twice = canonicalize(&once, &[1, 3]).unwrap();
            assert_relative_eq!(twice, once, epsilon = 1e-10);
        }
    }

    #[test]
    fn canonicalize_produces_spd_diagonal_blocks() {
        let sizes = [2, 3];
        let index = ClusterIndex::new(&sizes).unwrap();
        for seed in 0..5 {
            let xi = random_xi(5, 100 + seed);
            let can = canonicalize(&xi, &sizes).unwrap();
            for k in 0..2 {
                let off = index.offset(k);
                let d = can.view((off, off), (sizes[k], sizes[k])).into_owned();
                assert_relative_eq!(d, d.transpose(), epsilon = 1e-10);
                assert!(d.symmetric_eigen().eigenvalues.iter().all(|&l| l > 0.0));
            }
            // Per-cluster scale components are unchanged.
            let before = omega_decomposition(&xi, &sizes).unwrap();
            let after = omega_decomposition(&can, &sizes).unwrap();
            for (a, b) in before.omegas().iter().zip(after.omegas()) {
                assert_relative_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn canonicalize_invariant_to_block_rotations() {
        let sizes = [2, 2, 1];
        for seed in 0..5 {
            let xi = random_xi(5, 200 + seed);
            let q = random_block_orthonormal(&sizes, 300 + seed);
            let a = canonicalize(&(&xi * q), &sizes).unwrap();
            let b = canonicalize(&xi, &sizes).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_density_invariant_under_canonicalization() {
        let sizes = [1, 2];
        let dof = [4.0, 8.0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for seed in 0..3 {
            let xi = random_xi(3, 400 + seed);
            let can = canonicalize(&xi, &sizes).unwrap();
            let s1 = CTSpec::new(&sizes, &dof, DVector::zeros(3), xi, false).unwrap();
            let s2 = CTSpec::new(&sizes, &dof, DVector::zeros(3), can, false).unwrap();
            for _ in 0..100 {
                let y = DVector::from_fn(3, |_, _| rng.gen_range(-3.0..3.0f64));
                assert_relative_eq!(
                    s1.log_density(&y).unwrap(),
                    s2.log_density(&y).unwrap(),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn omega_decomposition_reference_values() {
        // Ω₁ of the trivariate reference: c₁·[[8/9,2/3,2/3],[2/3,1/2,1/2],[2/3,1/2,1/2]].
        let (nu1, nu2) = (4.0, 8.0);
        let spec = trivariate_example(nu1, nu2, false);
        let set = omega_decomposition(spec.xi(), &[1, 2]).unwrap();
        let c1 = (nu1 - 2.0) / nu1;
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[8.0 / 9.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 0.5, 0.5, 2.0 / 3.0, 0.5, 0.5],
        ) * c1;
        assert_relative_eq!(set.omegas()[0], expect, epsilon = 1e-12);
        set.check_ranks(1e-9).unwrap();

        // Identity, sizes (1,2).
        let set = omega_decomposition(&DMatrix::identity(3, 3), &[1, 2]).unwrap();
        let mut d1 = DMatrix::zeros(3, 3);
        d1[(0, 0)] = 1.0;
        assert_relative_eq!(set.omegas()[0], d1, epsilon = 1e-14);
        assert_relative_eq!(set.omegas()[1], DMatrix::identity(3, 3) - d1, epsilon = 1e-14);

        // Components sum to ΞΞ'.
        let xi = random_xi(5, 11);
        let set = omega_decomposition(&xi, &[2, 2, 1]).unwrap();
        assert_relative_eq!(set.total(), &xi * xi.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn trace_max_selects_reference_order() {
        let (nu1, nu2) = (4.0, 8.0);
        let spec = trivariate_example(nu1, nu2, false);
        let xi = spec.xi();
        let c1 = (nu1 - 2.0) / nu1;
        let c2 = (nu2 - 2.0) / nu2;
        let expect_tr = 4.0 / 3.0 * (c1 / 2.0f64).sqrt() + 2.0 * (c2 / 2.0f64).sqrt();

        // Reverse the cluster order, canonicalize, and let trace-max restore it.
        let index = ClusterIndex::new(&[1, 2]).unwrap();
        let reversed = permute_block_columns(xi, &index, &[1, 0]);
        let reversed_can = canonicalize(&reversed, &[2, 1]).unwrap();
        // The reversed canonical order has tr ≈ √(c₁/2) + 1.374·√(c₂/2).
        let alt = (reversed_can.trace() - (c1 / 2.0f64).sqrt()) / (c2 / 2.0f64).sqrt();
        assert_relative_eq!(alt, 1.374, epsilon = 5e-4);

        let res = trace_max_permutation(&reversed_can, &[2, 1], &[nu2, nu1]).unwrap();
        assert_eq!(res.sizes, vec![1, 2]);
        assert_eq!(res.dof, vec![nu1, nu2]);
        assert_relative_eq!(res.xi.trace(), expect_tr, epsilon = 1e-12);
        assert_relative_eq!(res.xi, *xi, epsilon = 1e-10);

        // K = 1: identity permutation.
        let one = canonicalize(&random_xi(3, 5), &[3]).unwrap();
        let res = trace_max_permutation(&one, &[3], &[6.0]).unwrap();
        assert_eq!(res.permutation, vec![0]);
        assert_relative_eq!(res.xi, one, epsilon = 1e-12);

        // Random 2-cluster spec: chosen trace beats the other order.
        for seed in 0..5 {
            let xi = canonicalize(&random_xi(4, 500 + seed), &[2, 2]).unwrap();
            let res = trace_max_permutation(&xi, &[2, 2], &[4.0, 9.0]).unwrap();
            let index = ClusterIndex::new(&[2, 2]).unwrap();
            let other = canonicalize(&permute_block_columns(&xi, &index, &[1, 0]), &[2, 2]).unwrap();
            assert!(res.xi.trace() >= other.trace() - 1e-12);
        }
    }

    #[test]
    fn trace_max_rejects_large_k() {
        let xi = DMatrix::identity(9, 9);
        let sizes = [1usize; 9];
        let dof = [5.0f64; 9];
        assert!(trace_max_permutation(&xi, &sizes, &dof).is_err());
    }

    #[test]
    fn block_xi_assembly() {
        // K = 1, n = 3, d = 1, β = 0 → I₃.
        let xi = build_block_xi(&[(1.0, 0.0)], &DMatrix::zeros(1, 1), &[3]).unwrap();
        assert_relative_eq!(xi, DMatrix::identity(3, 3), epsilon = 1e-15);

        // First row of a 10-dimensional 4-block layout with sizes (1,3,3,3).
        let diag = [(0.404, 0.0), (1.0, 0.1), (1.0, 0.1), (1.0, 0.1)];
        let mut off = DMatrix::zeros(4, 4);
        off[(0, 1)] = -0.111;
        off[(0, 2)] = -0.044;
        off[(0, 3)] = -0.128;
        let xi = build_block_xi(&diag, &off, &[1, 3, 3, 3]).unwrap();
        let expect = [0.404, -0.111, -0.111, -0.111, -0.044, -0.044, -0.044, -0.128, -0.128, -0.128];
        for (j, &e) in expect.iter().enumerate() {
            assert_relative_eq!(xi[(0, j)], e, epsilon = 1e-15);
        }

        // ΞΞ' is itself a symmetric block matrix: constant within-block
        // off-diagonals, constant diagonals per block.
        let diag = [(1.2, 0.3), (0.9, -0.1)];
        let mut off = DMatrix::zeros(2, 2);
        off[(0, 1)] = 0.25;
        off[(1, 0)] = -0.15;
        let partition = [3usize, 2];
        let xi = build_block_xi(&diag, &off, &partition).unwrap();
        let gram = &xi * xi.transpose();
        let index = ClusterIndex::new(&partition).unwrap();
        for bk in 0..2 {
            for bl in 0..2 {
                let mut seen_diag: Option<f64> = None;
                let mut seen_off: Option<f64> = None;
                for i in index.range(bk) {
                    for j in index.range(bl) {
                        if bk == bl && i == j {
                            let v = seen_diag.get_or_insert(gram[(i, j)]);
                            assert_relative_eq!(gram[(i, j)], *v, epsilon = 1e-12);
                        } else {
                            let v = seen_off.get_or_insert(gram[(i, j)]);
                            assert_relative_eq!(gram[(i, j)], *v, epsilon = 1e-12);
                        }
                    }
                }
            }
        }

        // Singular diagonal block rejected (d = β makes d − β = 0).
        assert!(build_block_xi(&[(0.5, 0.5)], &DMatrix::zeros(1, 1), &[3]).is_err());
    }

    #[test]
    fn parameter_counts() {
        // Asymmetric block, K = 4, sizes (1,3,3,3): K(K+1) − 1 = 19.
        let s =
            ClusterStructure::new(&[1, 3, 3, 3], Restriction::BlockAsymmetric).unwrap();
        assert_eq!(s.xi_param_count(), 19);
        // Symmetric block, no singletons: K(K+3)/2.
        let s = ClusterStructure::new(&[2, 3], Restriction::Block).unwrap();
        assert_eq!(s.xi_param_count(), 5);
        // Just-identified subtracts the rotation dimensions.
        let s = ClusterStructure::new(&[1, 2], Restriction::JustIdentified).unwrap();
        assert_eq!(s.xi_param_count(), 8);
        // Symmetric Ξ.
        let s = ClusterStructure::new(&[1, 2], Restriction::SymmetricXi).unwrap();
        assert_eq!(s.xi_param_count(), 6);
    }

    #[test]
    fn symmetric_block_param_round_trip() {
        // γ = 0 → identity block; diagonal γ → diagonal exponential.
        let xi = symmetric_block_param(
            &[DMatrix::zeros(2, 2)],
            &DMatrix::zeros(2, 2),
            &[2],
        )
        .unwrap();
        assert_relative_eq!(xi, DMatrix::identity(2, 2), epsilon = 1e-14);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5f64.ln(), 2.0f64.ln()]));
        let xi = symmetric_block_param(&[g], &DMatrix::zeros(2, 2), &[2]).unwrap();
        assert_relative_eq!(
            xi,
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])),
            epsilon = 1e-12
        );

        // Canonical Ξ_kk → γ = log Ξ_kk → exp(γ) recovers Ξ_kk.
        let sizes = [2, 3];
        let index = ClusterIndex::new(&sizes).unwrap();
        let can = canonicalize(&random_xi(5, 77), &sizes).unwrap();
        let mut gammas = Vec::new();
        for k in 0..2 {
            let off = index.offset(k);
            let d = can.view((off, off), (sizes[k], sizes[k])).into_owned();
            gammas.push(crate::linalg::sym_log(&d).unwrap());
        }
        let rebuilt = symmetric_block_param(&gammas, &can, &sizes).unwrap();
        assert_relative_eq!(rebuilt, can, epsilon = 1e-10);
    }
}
