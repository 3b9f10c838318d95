//! Acceptance suite: one pass/fail check per release criterion, with pinned
//! tolerances and runtime caps. Each test prints a single summary line.

use std::time::Instant;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::digamma;

use convot::distribution::trivariate_example;
use convot::estimation::{fit_mle, FitOptions};
use convot::har::{build_har_features, fit_har_two_stage};
use convot::identification::{omega_decomposition, trace_max_permutation};
use convot::likelihood::{
    derivative_bundle, fisher_information, loglik, score, ParamLayout,
};
use convot::marginal::{marginal_of, odd_df_pdf, voigt_pdf, OddDfPair};
use convot::simharness::{run_mc_study, run_rate_study, MCConfig, ParamSummary};
use convot::{
    approximation, canonicalize, quad, CTSpec, ClusterStructure, MarginalSpec,
    QuadratureConfig, Restriction,
};

/// The trivariate two-cluster design used by the simulation studies:
/// μ = (0.1, 0.2, 0.3), ν = (4, 8), cluster sizes (1, 2), raw coordinates.
fn study_design() -> CTSpec {
    CTSpec::new(
        &[1, 2],
        &[4.0, 8.0],
        DVector::from_vec(vec![0.1, 0.2, 0.3]),
        DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8]),
        false,
    )
    .unwrap()
}

fn grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
        .collect()
}

#[test]
fn criterion_01_closed_form_marginal_oracles() {
    let clock = Instant::now();
    let q = QuadratureConfig::default();
    let ys = grid(-10.0, 10.0, 201);
    // Normal + Cauchy convolution against the Voigt profile.
    let voigt = MarginalSpec::new(0.0, &[1.0, 1.0], &[1.0, f64::INFINITY], false).unwrap();
    for &y in &ys {
        assert!((voigt.pdf(y, &q).unwrap() - voigt_pdf(y)).abs() < 1e-8, "voigt at {y}");
    }
    // Odd-degrees-of-freedom rational closed forms.
    for (dof, pair) in [(3.0, OddDfPair::T1T3), (5.0, OddDfPair::T1T5)] {
        let m = MarginalSpec::new(0.0, &[1.0, 1.0], &[1.0, dof], false).unwrap();
        for &y in &ys {
            assert!(
                (m.pdf(y, &q).unwrap() - odd_df_pdf(pair, y)).abs() < 1e-8,
                "t1+t{dof} at {y}"
            );
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 10.0, "runtime {dt:.1}s");
    println!("criterion 1 (closed-form marginal oracles): PASS ({dt:.1}s)");
}

/// First-coordinate marginal by nested 2-D quadrature of the joint density,
/// with a tangent change of variables mapping the plane to a finite box.
fn marginal_by_double_integration(spec: &CTSpec, y1: f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let inner = |u2: f64| {
        let y2 = u2.tan();
        let f = |u3: f64| {
            let y3 = u3.tan();
            let y = DVector::from_vec(vec![y1, y2, y3]);
            spec.log_density(&y).unwrap().exp() * (1.0 + y3 * y3)
        };
        let (v, _) = quad::integrate(&f, -half, half, 1e-11, 1e-9).unwrap();
        v * (1.0 + y2 * y2)
    };
    let (v, _) = quad::integrate(&inner, -half, half, 1e-10, 1e-8).unwrap();
    v
}

#[test]
fn criterion_02_marginalization_consistency() {
    let clock = Instant::now();
    let q = QuadratureConfig::default();
    let gaussian_mix = CTSpec::new(
        &[1, 2],
        &[f64::INFINITY, 6.0],
        DVector::zeros(3),
        DMatrix::from_row_slice(3, 3, &[0.8, 0.2, 0.1, 0.1, 0.9, 0.3, 0.0, 0.3, 0.7]),
        true,
    )
    .unwrap();
    for spec in [trivariate_example(4.0, 8.0, false), study_design(), gaussian_mix] {
        let mut e1 = DVector::zeros(3);
        e1[0] = 1.0;
        let marginal = marginal_of(&spec, &e1).unwrap();
        for y1 in grid(spec.location()[0] - 3.0, spec.location()[0] + 3.0, 21) {
            let direct = marginal.pdf(y1, &q).unwrap();
            let integrated = marginal_by_double_integration(&spec, y1);
            assert!(
                (direct - integrated).abs() < 1e-5,
                "marginal mismatch at {y1}: {direct} vs {integrated}"
            );
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 120.0, "runtime {dt:.1}s");
    println!("criterion 2 (marginalization consistency): PASS ({dt:.1}s)");
}

/// Random small spec for derivative checks (n ≤ 4, K ≤ 3, invertible Ξ).
fn random_spec(rng: &mut impl rand::Rng) -> CTSpec {
    loop {
        let sizes: Vec<usize> = match rng.gen_range(0..4) {
            0 => vec![rng.gen_range(1..=3)],
            1 => vec![1, rng.gen_range(1..=3)],
            2 => vec![2, 2],
            _ => vec![1, 1, 2],
        };
        let n: usize = sizes.iter().sum();
        let standardized = rng.gen_bool(0.5);
        let dof: Vec<f64> = (0..sizes.len())
            .map(|_| {
                if !standardized && rng.gen_bool(0.2) {
                    f64::INFINITY
                } else {
                    rng.gen_range(3.0..12.0)
                }
            })
            .collect();
        if dof.iter().filter(|v| v.is_infinite()).count() > 1 {
            continue;
        }
        let xi = DMatrix::<f64>::from_fn(n, n, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) + rng.gen_range(-0.3..0.3)
        });
        if xi.determinant().abs() < 0.1 {
            continue;
        }
        let mu = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        if let Ok(spec) = CTSpec::new(&sizes, &dof, mu, xi, standardized) {
            return spec;
        }
    }
}

fn spec_with_theta(template: &CTSpec, theta: &DVector<f64>) -> CTSpec {
    let n = template.n();
    let layout = ParamLayout::new(n, template.k());
    let mu = DVector::from_fn(n, |i, _| theta[i]);
    let xi = DMatrix::from_fn(n, n, |i, j| theta[layout.xi_pos(i, j)]);
    let dof: Vec<f64> = template
        .dof()
        .iter()
        .enumerate()
        .map(|(k, &v)| if v.is_finite() { theta[layout.nu_pos(k)] } else { v })
        .collect();
    CTSpec::new(
        template.cluster_sizes(),
        &dof,
        mu,
        xi,
        template.standardized(),
    )
    .unwrap()
}

fn theta_of(spec: &CTSpec) -> DVector<f64> {
    let n = spec.n();
    let layout = ParamLayout::new(n, spec.k());
    let mut theta = DVector::zeros(layout.dim());
    for i in 0..n {
        theta[i] = spec.location()[i];
    }
    for j in 0..n {
        for i in 0..n {
            theta[layout.xi_pos(i, j)] = spec.xi()[(i, j)];
        }
    }
    for (k, &v) in spec.dof().iter().enumerate() {
        theta[layout.nu_pos(k)] = if v.is_finite() { v } else { 0.0 };
    }
    theta
}

#[test]
fn criterion_03_analytic_derivatives_vs_finite_differences() {
    let clock = Instant::now();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(20240);
    for case in 0..20 {
        let spec = random_spec(&mut rng);
        let n = spec.n();
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0f64));
        let data = DMatrix::from_fn(1, n, |_, j| y[j]);
        let theta = theta_of(&spec);
        let layout = ParamLayout::new(n, spec.k());
        let active: Vec<usize> = (0..layout.dim())
            .filter(|&i| {
                // Gaussian degrees of freedom are fixed constants.
                !(layout.nu_range().contains(&i)
                    && spec.dof()[i - layout.nu_range().start].is_infinite())
            })
            .collect();

        // Score against central differences of the log-likelihood.
        let analytic = score(&spec, &y).unwrap();
        for &i in &active {
            let h = 1e-6 * (theta[i].abs() + 1.0);
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (loglik(&spec_with_theta(&spec, &tp), &data).unwrap()
                - loglik(&spec_with_theta(&spec, &tm), &data).unwrap())
                / (2.0 * h);
            let scale = analytic[i].abs().max(1.0);
            assert!(
                (analytic[i] - fd).abs() / scale < 1e-6,
                "case {case} score[{i}]: {} vs {fd}",
                analytic[i]
            );
        }

        // Hessian against central differences of the analytic score.
        let hess = convot::likelihood::hessian(&spec, &y).unwrap();
        let hscale = hess.norm().max(1.0);
        for &j in &active {
            let h = 1e-5 * (theta[j].abs() + 1.0);
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fd = (score(&spec_with_theta(&spec, &tp), &y).unwrap()
                - score(&spec_with_theta(&spec, &tm), &y).unwrap())
                / (2.0 * h);
            for &i in &active {
                assert!(
                    (hess[(i, j)] - fd[i]).abs() / hscale < 1e-5,
                    "case {case} hessian[{i},{j}]: {} vs {}",
                    hess[(i, j)],
                    fd[i]
                );
            }
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 30.0, "runtime {dt:.1}s");
    println!("criterion 3 (derivative correctness, 20 random cases): PASS ({dt:.1}s)");
}

#[test]
fn criterion_04_information_matrix_identity() {
    let clock = Instant::now();
    let spec = study_design();
    let info = fisher_information(&spec).unwrap();
    let p = info.nrows();
    let reps = 1_000_000usize;
    let draws = spec.sample(reps, 4040);
    let mut sum_outer = DMatrix::<f64>::zeros(p, p);
    let mut sumsq_outer = DMatrix::<f64>::zeros(p, p);
    let mut sum_negh = DMatrix::<f64>::zeros(p, p);
    let mut sumsq_negh = DMatrix::<f64>::zeros(p, p);
    for r in 0..reps {
        let y = draws.row(r).transpose();
        let b = derivative_bundle(&spec, &y).unwrap();
        for j in 0..p {
            for i in 0..p {
                let o = b.score[i] * b.score[j];
                sum_outer[(i, j)] += o;
                sumsq_outer[(i, j)] += o * o;
                let h = -b.hessian[(i, j)];
                sum_negh[(i, j)] += h;
                sumsq_negh[(i, j)] += h * h;
            }
        }
    }
    let tf = reps as f64;
    for (label, sum, sumsq) in
        [("outer", &sum_outer, &sumsq_outer), ("neg-hessian", &sum_negh, &sumsq_negh)]
    {
        for j in 0..p {
            for i in 0..p {
                let mean = sum[(i, j)] / tf;
                let var = (sumsq[(i, j)] / tf - mean * mean).max(0.0);
                let se = (var / tf).sqrt();
                assert!(
                    (mean - info[(i, j)]).abs() < 4.0 * se + 1e-10,
                    "{label}[{i},{j}]: {mean} vs {} (se {se})",
                    info[(i, j)]
                );
            }
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 300.0, "runtime {dt:.1}s");
    println!("criterion 4 (information matrix identity, 1e6 draws): PASS ({dt:.1}s)");
}

#[test]
fn criterion_05_weight_moment_oracles() {
    let clock = Instant::now();
    let reps = 1_000_000usize;
    for (seed, (n, nu)) in [(51u64, (1usize, 5.0f64)), (52, (2, 8.0)), (53, (3, 4.5))] {
        let spec =
            CTSpec::new(&[n], &[nu], DVector::zeros(n), DMatrix::identity(n, n), false).unwrap();
        let draws = spec.sample(reps, seed);
        let nf = n as f64;
        // Statistics whose means are pinned by the weight-moment identities:
        // E[W X'X]/n, E[W² X'X·(ν+n+2)/(ν+n)]/n, E[X'X (ν−2)/ν]/n, and
        // E[ln(1+X'X/ν)] − (ψ((ν+n)/2) − ψ(ν/2)).
        let mut acc = [[0.0f64; 2]; 4];
        for r in 0..reps {
            let q: f64 = (0..n).map(|j| draws[(r, j)].powi(2)).sum();
            let w = (nu + nf) / (nu + q);
            let stats = [
                w * q / nf,
                w * w * q * (nu + nf + 2.0) / (nu + nf) / nf,
                q * (nu - 2.0) / nu / nf,
                (q / nu).ln_1p(),
            ];
            for (a, s) in acc.iter_mut().zip(stats) {
                a[0] += s;
                a[1] += s * s;
            }
        }
        let tf = reps as f64;
        let targets = [1.0, 1.0, 1.0, digamma(0.5 * (nu + nf)) - digamma(0.5 * nu)];
        let labels = ["zeta22", "zeta42", "zeta02", "log-moment"];
        for ((a, target), label) in acc.iter().zip(targets).zip(labels) {
            let mean = a[0] / tf;
            let se = ((a[1] / tf - mean * mean).max(0.0) / tf).sqrt();
            assert!(
                (mean - target).abs() < 4.0 * se,
                "(n={n}, ν={nu}) {label}: {mean} vs {target} (se {se})"
            );
        }
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 120.0, "runtime {dt:.1}s");
    println!("criterion 5 (weight-moment oracles): PASS ({dt:.1}s)");
}

/// Reference values for the study design at T = 4000: per-coordinate truth,
/// mean, empirical std, asymptotic std, and tail fractions from a 50,000-
/// replication reference run.
const LARGE_T_REFERENCE: &[(&str, [f64; 6])] = &[
    ("mu1", [0.1, 0.1001, 0.0125, 0.0125, 0.0253, 0.0258]),
    ("mu2", [0.2, 0.2000, 0.0158, 0.0157, 0.0250, 0.0260]),
    ("mu3", [0.3, 0.3000, 0.0162, 0.0161, 0.0266, 0.0250]),
    ("xi11", [0.6, 0.5994, 0.0135, 0.0135, 0.0259, 0.0253]),
    ("xi21", [0.5, 0.4995, 0.0179, 0.0177, 0.0256, 0.0263]),
    ("xi31", [0.4, 0.3994, 0.0186, 0.0184, 0.0266, 0.0262]),
    ("xi12", [0.3, 0.3002, 0.0161, 0.0159, 0.0267, 0.0267]),
    ("xi22", [0.7, 0.7000, 0.0161, 0.0160, 0.0263, 0.0258]),
    ("xi32", [0.2, 0.2001, 0.0112, 0.0111, 0.0252, 0.0254]),
    ("xi13", [0.1, 0.1002, 0.0139, 0.0138, 0.0254, 0.0264]),
    ("xi33", [0.8, 0.7998, 0.0151, 0.0150, 0.0271, 0.0246]),
    ("inv_nu1", [0.25, 0.2498, 0.0164, 0.0164, 0.0269, 0.0244]),
    ("inv_nu2", [0.125, 0.1248, 0.0099, 0.0099, 0.0267, 0.0237]),
];

#[test]
fn criterion_06_large_sample_simulation_study() {
    let clock = Instant::now();
    let reps = 2000usize;
    let cfg = MCConfig {
        spec: study_design(),
        structure: ClusterStructure::new(&[1, 2], Restriction::JustIdentified).unwrap(),
        sample_sizes: vec![4000],
        replications: reps,
        base_seed: 60,
        workers: 1,
        dof_init: vec![4.0, 8.0],
        fit: FitOptions { multistart: 2, ..FitOptions::default() },
    };
    let report = run_mc_study(&cfg).unwrap();
    let row = |name: &str| -> &ParamSummary {
        report.rows.iter().find(|r| r.name == name).unwrap()
    };
    // Collect every violation (rather than stopping at the first) so a single
    // Monte Carlo noise exceedance is distinguishable from a systematic one.
    let mut violations: Vec<String> = Vec::new();
    println!("name      mean     std      astd     alpha_l  alpha_r");
    for (name, [truth, ref_mean, ref_std, ref_astd, ref_al, ref_ar]) in LARGE_T_REFERENCE {
        let r = row(name);
        let astd = r.astd.unwrap();
        let (al, ar) = (r.alpha_l.unwrap(), r.alpha_r.unwrap());
        println!(
            "{name:<9} {:<8.4} {:<8.4} {astd:<8.4} {al:<8.4} {ar:<8.4}",
            r.mean, r.std
        );
        assert_eq!(r.truth, *truth, "{name} truth");
        let mc_se = r.std / (reps as f64).sqrt();
        if (r.mean - ref_mean).abs() >= 3.0 * mc_se {
            violations.push(format!("{name} mean {} vs {ref_mean} (mc se {mc_se})", r.mean));
        }
        if (r.std / ref_std - 1.0).abs() >= 0.10 {
            violations.push(format!("{name} std {} vs {ref_std}", r.std));
        }
        if (astd - ref_astd).abs() >= 5e-4 {
            violations.push(format!("{name} astd {astd} vs {ref_astd}"));
        }
        // Tail rates are checked against the nominal 0.025 (the reference
        // values above are themselves ≈0.025 up to their own sampling noise)
        // with a 3-standard-error band: se(α̂) = √(0.025·0.975/2000) ≈ 0.0035.
        let alpha_tol = 3.0 * (0.025f64 * 0.975 / reps as f64).sqrt();
        if (al - 0.025).abs() >= alpha_tol {
            violations.push(format!("{name} alpha_l {al} (reference {ref_al})"));
        }
        if (ar - 0.025).abs() >= alpha_tol {
            violations.push(format!("{name} alpha_r {ar} (reference {ref_ar})"));
        }
    }
    assert!(violations.is_empty(), "violations:\n{}", violations.join("\n"));
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 7200.0, "runtime {dt:.1}s");
    println!(
        "criterion 6 (large-sample study, {} failures / {}): PASS ({dt:.1}s)",
        report.failures, report.total
    );
}

#[test]
fn criterion_07_convergence_rate_study() {
    let clock = Instant::now();
    let cfg = MCConfig {
        spec: CTSpec::new(
            &[1, 2],
            &[1.0, 1.0],
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            false,
        )
        .unwrap(),
        structure: ClusterStructure::new(&[1, 2], Restriction::JustIdentified).unwrap(),
        sample_sizes: vec![500, 1000],
        replications: 1000,
        base_seed: 70,
        workers: 1,
        dof_init: vec![1.0, 1.0],
        fit: FitOptions { multistart: 2, max_iter: 10000, ..FitOptions::default() },
    };
    let report = run_rate_study(&cfg).unwrap();
    // Off-diagonal-block coordinates converge near rate T (reference ratio
    // ≈2.0); location and dof coordinates near rate √T (ratio ≈√2). The
    // off-block estimate distribution has excess kurtosis ≈8, which puts the
    // Monte Carlo standard error of a Std ratio at 1000 replications near
    // 0.14, hence the wider band there; both bands still separate the two
    // rates by a wide margin.
    let off_block = ["xi21", "xi31", "xi12", "xi13"];
    let root_t = ["mu1", "mu2", "mu3", "inv_nu1", "inv_nu2"];
    let mut violations: Vec<String> = Vec::new();
    for r in &report.rows {
        let ratio = r.r_sigma.unwrap();
        println!("{:<9} T={:<5} R_sigma={ratio:.3}", r.name, r.t);
        let band = if off_block.contains(&r.name.as_str()) {
            1.6..=2.5
        } else if root_t.contains(&r.name.as_str()) {
            1.3..=1.55
        } else {
            continue;
        };
        if !band.contains(&ratio) {
            violations.push(format!("{} at T={}: R_sigma {ratio} outside {band:?}", r.name, r.t));
        }
    }
    assert!(violations.is_empty(), "violations:\n{}", violations.join("\n"));
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 3600.0, "runtime {dt:.1}s");
    println!(
        "criterion 7 (convergence-rate study, {} failures / {}): PASS ({dt:.1}s)",
        report.failures, report.total
    );
}

#[test]
fn criterion_08_identification_suite() {
    let clock = Instant::now();
    let spec = trivariate_example(4.0, 8.0, false);
    let sizes = [1usize, 2];
    let c1 = 0.5f64; // (ν₁−2)/ν₁ at ν₁ = 4
    let c2 = 0.75f64; // (ν₂−2)/ν₂ at ν₂ = 8

    // Canonicalize is idempotent.
    let canon = canonicalize(spec.xi(), &sizes).unwrap();
    assert_relative_eq!(canonicalize(&canon, &sizes).unwrap(), canon, epsilon = 1e-12);

    // Post-multiplying block columns by orthonormal factors leaves the
    // distribution unchanged; the joint density must agree to 1e−10.
    let theta = 0.73f64;
    let mut rot = DMatrix::identity(3, 3);
    rot[(0, 0)] = -1.0; // reflection of the scalar cluster
    rot[(1, 1)] = theta.cos();
    rot[(1, 2)] = -theta.sin();
    rot[(2, 1)] = theta.sin();
    rot[(2, 2)] = theta.cos();
    let equivalent = spec.with_xi(spec.xi() * &rot).unwrap();
    for y in [
        DVector::zeros(3),
        DVector::from_vec(vec![0.8, -0.4, 1.3]),
        DVector::from_vec(vec![-2.1, 0.6, 0.2]),
    ] {
        let a = spec.log_density(&y).unwrap();
        let b = equivalent.log_density(&y).unwrap();
        assert!((a - b).abs() < 1e-10, "density changed under rotation: {a} vs {b}");
    }
    // The canonical representative recovered from the rotated matrix is Ξ.
    assert_relative_eq!(canonicalize(equivalent.xi(), &sizes).unwrap(), canon, epsilon = 1e-10);

    // Cluster-order comparison: reversing the clusters and re-canonicalizing
    // gives the displayed alternative, whose trace is smaller.
    let mut reversed = DMatrix::zeros(3, 3);
    reversed.view_mut((0, 0), (3, 2)).copy_from(&spec.xi().columns(1, 2));
    reversed.view_mut((0, 2), (3, 1)).copy_from(&spec.xi().columns(0, 1));
    let check = canonicalize(&reversed, &[2, 1]).unwrap();
    let s2 = (c2 / 2.0).sqrt();
    // Entry (3,2) is −0.242: with +0.242 the product Ξ̌₁Ξ̌₁′ would have a
    // nonzero (3,2) entry, contradicting Ω₂ above.
    let displayed = DMatrix::from_row_slice(
        3,
        2,
        &[0.404, -0.242, -0.242, 0.970, -0.970, -0.242],
    ) * s2;
    // Columns are determined up to the displayed 3-decimal rounding.
    for i in 0..3 {
        for j in 0..2 {
            assert!(
                (check[(i, j)] - displayed[(i, j)]).abs() < 5e-4,
                "alternative block [{i},{j}]: {} vs {}",
                check[(i, j)],
                displayed[(i, j)]
            );
        }
    }
    let tr_original = spec.xi().trace();
    let tr_reversed = check.trace();
    assert_relative_eq!(
        tr_original,
        4.0 / 3.0 * (c1 / 2.0f64).sqrt() + 2.0 * s2,
        epsilon = 1e-12
    );
    assert!((tr_reversed - ((c1 / 2.0f64).sqrt() + 1.374 * s2)).abs() < 1e-3);
    assert!(tr_original > tr_reversed);
    // trace_max applied to the reversed order restores the original one.
    let tm = trace_max_permutation(&check, &[2, 1], &[8.0, 4.0]).unwrap();
    assert_eq!(tm.dof, vec![4.0, 8.0]);
    assert_eq!(tm.sizes, vec![1, 2]);
    assert_relative_eq!(tm.xi, *spec.xi(), epsilon = 1e-10);

    // Scale-rotation decomposition reproduced entrywise.
    let set = omega_decomposition(spec.xi(), &sizes).unwrap();
    let omega1 = DMatrix::from_row_slice(
        3,
        3,
        &[
            8.0 / 9.0,
            2.0 / 3.0,
            2.0 / 3.0,
            2.0 / 3.0,
            0.5,
            0.5,
            2.0 / 3.0,
            0.5,
            0.5,
        ],
    ) * c1;
    let omega2 = DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 / 9.0,
            -1.0 / 6.0,
            -1.0 / 6.0,
            -1.0 / 6.0,
            0.5,
            0.0,
            -1.0 / 6.0,
            0.0,
            0.5,
        ],
    ) * c2;
    assert_relative_eq!(set.omegas()[0], omega1, epsilon = 1e-12);
    assert_relative_eq!(set.omegas()[1], omega2, epsilon = 1e-12);

    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 5.0, "runtime {dt:.1}s");
    println!("criterion 8 (identification suite): PASS ({dt:.1}s)");
}

#[test]
fn criterion_09_univariate_approximation() {
    let clock = Instant::now();
    let q = QuadratureConfig::default();
    // Single-factor marginals are exactly t: moment matching recovers ν.
    let single = MarginalSpec::new(0.0, &[1.0], &[7.0], true).unwrap();
    let mm = approximation::moment_match_t(&single).unwrap();
    assert_relative_eq!(mm.dof, 7.0, epsilon = 1e-8);

    // Two-factor equal-weight convolutions: the discrepancy-minimizing fit is
    // at least as close as the moment match.
    for nu in [7.0, 4.01] {
        let m = MarginalSpec::new(0.0, &[1.0, 1.0], &[nu, nu], true).unwrap();
        let mm = approximation::moment_match_t(&m).unwrap();
        let kl_mm = approximation::klic(&m, &mm, &q).unwrap();
        let (_, kl_best) = approximation::kl_best_t(&m, &q).unwrap();
        assert!(
            kl_best <= kl_mm + 1e-12,
            "ν = {nu}: best {kl_best} vs moment-match {kl_mm}"
        );
    }

    // Expected shortfall against a numeric tail integral.
    let approx = approximation::moment_match_t(
        &MarginalSpec::new(0.3, &[0.9, 0.7], &[7.0, 7.0], true).unwrap(),
    )
    .unwrap();
    for alpha in [0.01, 0.05] {
        let (var, es) = approximation::var_es(&approx, alpha).unwrap();
        let f = |y: f64| y * approx.pdf(y);
        let lo = approx.location - 1e4 * approx.sigma2.sqrt();
        let (tail, _) = quad::integrate(&f, lo, var, 1e-13, 1e-11).unwrap();
        assert!(
            (es - tail / alpha).abs() < 1e-8,
            "alpha {alpha}: es {es} vs numeric {}",
            tail / alpha
        );
    }
    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 60.0, "runtime {dt:.1}s");
    println!("criterion 9 (univariate approximation): PASS ({dt:.1}s)");
}

#[test]
fn criterion_10_har_pipeline_on_simulated_truth() {
    let clock = Instant::now();
    // Heterogeneous autoregression with persistence π = 0.557+0.312+0.088.
    let intercept = -0.432f64;
    let (bd, bw, bm) = (0.557f64, 0.312f64, 0.088f64);
    let persistence = bd + bw + bm;
    let mean = intercept / (1.0 - persistence);

    let err_spec = CTSpec::new(
        &[1, 2],
        &[4.0, 8.0],
        DVector::zeros(3),
        DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.5, 0.7, 0.2, 0.4, 0.2, 0.8]) * 0.4,
        false,
    )
    .unwrap();
    let burn = 300usize;
    let t_keep = 5022usize;
    let total = burn + t_keep;
    let errors = err_spec.sample(total, 1001);
    let mut y = DMatrix::from_element(total, 3, mean);
    for t in 22..total {
        for j in 0..3 {
            let daily = y[(t - 1, j)];
            let weekly = (2..=5).map(|i| y[(t - i, j)]).sum::<f64>() / 4.0;
            let monthly = (6..=22).map(|i| y[(t - i, j)]).sum::<f64>() / 17.0;
            y[(t, j)] =
                intercept + bd * daily + bw * weekly + bm * monthly + errors[(t, j)];
        }
    }
    let panel = y.rows(burn, t_keep).into_owned();
    let dataset = build_har_features(&panel).unwrap();
    let structure = ClusterStructure::new(&[1, 2], Restriction::JustIdentified).unwrap();
    let opts = FitOptions { multistart: 2, ..FitOptions::default() };
    let two = fit_har_two_stage(&dataset, &structure, Some(&[4.0, 8.0]), &opts, false).unwrap();

    // Stage one: coefficient recovery and persistence.
    let truth = [intercept, bd, bw, bm];
    for (j, ols) in two.ols.iter().enumerate() {
        for c in 0..4 {
            assert!(
                (ols.coef[c] - truth[c]).abs() < 4.0 * ols.se[c],
                "series {j} coef {c}: {} vs {} (se {})",
                ols.coef[c],
                truth[c],
                ols.se[c]
            );
        }
        assert!(
            (ols.persistence - persistence).abs() < 0.02,
            "series {j} persistence {}",
            ols.persistence
        );
    }

    // Stage two: degrees of freedom within four sandwich standard errors.
    let fit = &two.stage2;
    assert!(fit.diagnostics.converged);
    let p = fit.estimates.len();
    for (k, (truth_dof, idx)) in [(4.0, p - 2), (8.0, p - 1)].into_iter().enumerate() {
        let est = fit.estimates[idx];
        let se = fit.se_sandwich[idx];
        assert!(
            (est - truth_dof).abs() < 4.0 * se,
            "cluster {k} dof {est} vs {truth_dof} (se {se})"
        );
    }

    // The block restriction is nested: its likelihood cannot exceed the
    // just-identified one on the same residual panel.
    let block = ClusterStructure::new(&[1, 2], Restriction::Block).unwrap();
    let block_fit = fit_mle(
        &two.residuals,
        &block,
        Some(&[4.0, 8.0]),
        &FitOptions {
            multistart: 2,
            fix_location: Some(DVector::zeros(3)),
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert!(
        fit.loglik >= block_fit.loglik - 1e-6,
        "nesting violated: {} vs {}",
        fit.loglik,
        block_fit.loglik
    );

    let dt = clock.elapsed().as_secs_f64();
    assert!(dt < 600.0, "runtime {dt:.1}s");
    println!("criterion 10 (two-stage autoregression pipeline): PASS ({dt:.1}s)");
}
