//! Adaptive one-dimensional quadrature (Gauss–Kronrod 7–15).

use crate::error::{Error, Result};

// Kronrod-15 abscissae on [0, 1] side of the symmetric rule.
const XGK: [f64; 8] = [
    0.000000000000000000000000000000000,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
];

const WGK: [f64; 8] = [
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
];

// Gauss-7 weights for the nodes at XGK indices 0, 2, 4, 6.
const WG: [f64; 4] = [
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
];

/// One Gauss–Kronrod 7–15 panel: returns (kronrod, |kronrod − gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let f0 = f(c);
    let mut kronrod = WGK[0] * f0;
    let mut gauss = WG[0] * f0;
    for i in 1..8 {
        let dx = h * XGK[i];
        let fsum = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * fsum;
        if i % 2 == 0 {
            gauss += WG[i / 2] * fsum;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptively integrate `f` over `[a, b]` to absolute tolerance `atol` or
/// relative tolerance `rtol`, whichever is weaker. Returns the integral and an
/// error estimate.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, atol: f64, rtol: f64) -> Result<(f64, f64)> {
    const MAX_PANELS: usize = 4096;
    // Interval worklist, processed worst-error-first.
    let first = gk15(f, a, b);
    let mut intervals = vec![(a, b, first.0, first.1)];
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        let tol = atol.max(rtol * total.abs());
        if err <= tol {
            return Ok((total, err));
        }
        if intervals.len() >= MAX_PANELS {
            return Err(Error::QuadratureNonConvergence {
                context: format!("adaptive GK15 on [{a}, {b}] exceeded {MAX_PANELS} panels"),
                estimate: err,
            });
        }
        // Split the worst interval.
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (ia, ib, _, werr) = intervals.swap_remove(worst);
        let mid = 0.5 * (ia + ib);
        if mid <= ia || mid >= ib {
            // Interval at f64 resolution; keep its estimate and bail out if the
            // remaining error is dominated by it.
            return Err(Error::QuadratureNonConvergence {
                context: format!("interval [{ia}, {ib}] not splittable at f64 resolution"),
                estimate: werr,
            });
        }
        let left = gk15(f, ia, mid);
        let right = gk15(f, mid, ib);
        intervals.push((ia, mid, left.0, left.1));
        intervals.push((mid, ib, right.0, right.1));
    }
}

/// Integrate a smooth, eventually-decaying function over `[a, ∞)` by summing
/// panels of geometrically growing length until a panel contributes less than
/// `atol` and the last two panels are both negligible.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    initial_len: f64,
    atol: f64,
    rtol: f64,
) -> Result<(f64, f64)> {
    const MAX_SEGMENTS: usize = 200;
    let mut total = 0.0;
    let mut err = 0.0;
    let mut lo = a;
    let mut len = initial_len;
    let mut small_streak = 0;
    for _ in 0..MAX_SEGMENTS {
        let (v, e) = integrate(f, lo, lo + len, atol, rtol)?;
        total += v;
        err += e;
        if v.abs() < atol {
            small_streak += 1;
            if small_streak >= 2 {
                return Ok((total, err));
            }
        } else {
            small_streak = 0;
        }
        lo += len;
        len *= 1.5;
    }
    Err(Error::QuadratureNonConvergence {
        context: format!("semi-infinite integral from {a} did not decay within segment budget"),
        estimate: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        // GK15 is exact for low-degree polynomials: ∫₀¹ x³ dx = 1/4.
        let (v, _) = integrate(&|x: f64| x * x * x, 0.0, 1.0, 1e-12, 1e-12).unwrap();
        assert_relative_eq!(v, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn oscillatory_integral() {
        // ∫₀^{10π} sin x dx = 0; ∫₀^π sin x dx = 2.
        let (v, _) = integrate(&f64::sin, 0.0, 10.0 * std::f64::consts::PI, 1e-12, 1e-12).unwrap();
        assert!(v.abs() < 1e-10);
        let (v, _) = integrate(&f64::sin, 0.0, std::f64::consts::PI, 1e-12, 1e-12).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        // ∫_{-1}^{1} 1/(x² + 1e-4) dx = 2·atan(100)/0.01.
        let (v, _) = integrate(&|x: f64| 1.0 / (x * x + 1e-4), -1.0, 1.0, 1e-10, 1e-10).unwrap();
        assert_relative_eq!(v, 2.0 * (100.0f64).atan() / 0.01, max_relative = 1e-9);
    }

    #[test]
    fn semi_infinite_gaussian() {
        // ∫₀^∞ e^{-x²/2} dx = √(π/2).
        let (v, _) =
            integrate_to_infinity(&|x: f64| (-0.5 * x * x).exp(), 0.0, 1.0, 1e-12, 1e-10).unwrap();
        assert_relative_eq!(v, (std::f64::consts::PI / 2.0).sqrt(), max_relative = 1e-10);
    }
}
