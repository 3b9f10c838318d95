//! Univariate marginals of convolution-t variables: characteristic function,
//! Gil-Pelaez pdf/cdf inversion, closed-form special cases, and (fractional)
//! moments.

use nalgebra::DVector;
use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::distribution::CTSpec;
use crate::error::{Error, Result};
use crate::quad;
use crate::special::ln_bessel_k;

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Tolerances and truncation controls for Gil-Pelaez quadrature.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    /// Absolute tolerance.
    pub atol: f64,
    /// Relative tolerance.
    pub rtol: f64,
    /// Hard cap on the integration abscissa.
    pub s_max: f64,
    /// Split the oscillatory integral at the half-periods of cos(s(y−μ)).
    pub per_oscillation: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-8, s_max: 1e4, per_oscillation: true }
    }
}

impl QuadratureConfig {
    /// Validate tolerances.
    pub fn validated(self) -> Result<Self> {
        if !(self.atol > 0.0) || !(self.rtol > 0.0) || !(self.s_max > 0.0) {
            return Err(Error::InvalidArgument("quadrature tolerances must be > 0".into()));
        }
        Ok(self)
    }
}

/// The univariate convolution `Y₁ = μ + Σ_k ω_k T_k`, where each `T_k` is a
/// univariate t variable with ν_k degrees of freedom (standard normal for
/// ν_k = ∞). When `standardized` is set, the factors are standardized-t
/// (`T_k^std = √((ν_k−2)/ν_k) T_k`, unit variance) and `var(Y₁) = ω'ω`.
#[derive(Debug, Clone)]
pub struct MarginalSpec {
    location: f64,
    scales: Vec<f64>,
    dof: Vec<f64>,
    standardized: bool,
}

impl MarginalSpec {
    /// Validate and construct.
    pub fn new(location: f64, scales: &[f64], dof: &[f64], standardized: bool) -> Result<Self> {
        if scales.len() != dof.len() || scales.is_empty() {
            return Err(Error::InvalidSpec("scales and dof must have equal nonzero length".into()));
        }
        if scales.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidSpec("scales must be finite and nonnegative".into()));
        }
        if !scales.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidSpec("at least one scale must be positive".into()));
        }
        if dof.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidSpec("degrees of freedom must be > 0".into()));
        }
        if dof.iter().filter(|v| v.is_infinite()).count() > 1 {
            return Err(Error::InvalidSpec("at most one Gaussian component".into()));
        }
        if standardized {
            if let Some(bad) = dof.iter().find(|v| v.is_finite() && **v <= 2.0) {
                return Err(Error::InvalidSpec(format!(
                    "standardized marginal requires ν_k > 2, got {bad}"
                )));
            }
        }
        Ok(Self { location, scales: scales.to_vec(), dof: dof.to_vec(), standardized })
    }

    /// Location μ.
    pub fn location(&self) -> f64 {
        self.location
    }

    /// Per-cluster scales ω as stored.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Per-cluster degrees of freedom.
    pub fn dof(&self) -> &[f64] {
        &self.dof
    }

    /// Whether the factors are standardized-t.
    pub fn standardized(&self) -> bool {
        self.standardized
    }

    /// Coefficients on the *raw* t factors (what the characteristic function
    /// sees): equals `scales` for a raw spec, deflated by `√((ν−2)/ν)` for a
    /// standardized one.
    pub fn raw_scales(&self) -> Vec<f64> {
        self.scales
            .iter()
            .zip(&self.dof)
            .map(|(&w, &nu)| {
                if self.standardized && nu.is_finite() {
                    w * ((nu - 2.0) / nu).sqrt()
                } else {
                    w
                }
            })
            .collect()
    }

    /// Coefficients on unit-variance (standardized) factors, so that
    /// `var(Y₁) = Σ ω_k²`: equals `scales` for a standardized spec, inflated
    /// by `√(ν/(ν−2))` for a raw one. Errors when some finite ν_k ≤ 2.
    pub fn standardized_scales(&self) -> Result<Vec<f64>> {
        self.scales
            .iter()
            .zip(&self.dof)
            .map(|(&w, &nu)| {
                if self.standardized || nu.is_infinite() {
                    Ok(w)
                } else if nu > 2.0 {
                    Ok(w * (nu / (nu - 2.0)).sqrt())
                } else {
                    Err(Error::MomentUndefined(format!(
                        "standardized scale requires ν > 2, got {nu}"
                    )))
                }
            })
            .collect()
    }
}

/// Marginal of `β'Y` for a convolution-t vector `Y ~ CT(μ, Ξ)`: splits
/// `b = Ξ'β` by cluster and takes per-cluster norms `ω_k = ‖b_k‖`; the
/// location is `β'μ`.
pub fn marginal_of(spec: &CTSpec, beta: &DVector<f64>) -> Result<MarginalSpec> {
    if beta.len() != spec.n() {
        return Err(Error::InvalidArgument(format!(
            "beta has dimension {}, spec dimension {}",
            beta.len(),
            spec.n()
        )));
    }
    if beta.iter().all(|&b| b == 0.0) {
        return Err(Error::InvalidArgument("beta must be nonzero".into()));
    }
    let b = spec.xi().transpose() * beta;
    let scales: Vec<f64> = (0..spec.k())
        .map(|k| spec.index().range(k).map(|i| b[i] * b[i]).sum::<f64>().sqrt())
        .collect();
    let location = beta.dot(spec.location());
    MarginalSpec::new(location, &scales, spec.dof(), spec.standardized())
}

/// ln φ_ν(s): log characteristic function of the univariate t distribution
/// with ν degrees of freedom (Gaussian for ν = ∞).
///
/// `φ_ν(s) = K_{ν/2}(√ν|s|) (√ν|s|)^{ν/2} / (Γ(ν/2) 2^{ν/2−1})`; odd integer
/// ν routes through the finite half-integer-order closed form of K, which
/// reproduces the classical `e^{-√ν|s|}·polynomial` expressions exactly.
pub fn t_char_ln(nu: f64, s: f64) -> f64 {
    debug_assert!(nu > 0.0);
    if s == 0.0 {
        return 0.0;
    }
    if nu.is_infinite() {
        return -0.5 * s * s;
    }
    let a = 0.5 * nu;
    let u = nu.sqrt() * s.abs();
    let half_order = a - 0.5;
    let ln_k = if half_order >= 0.0 && half_order.fract() == 0.0 && half_order < 64.0 {
        // Half-integer order: K_{m+1/2}(u) = √(π/2u) e^{-u} Σ_j (m+j)!/(j!(m-j)!) (2u)^{-j}.
        let m = half_order as usize;
        let mut poly = 0.0f64;
        for j in 0..=m {
            let ln_coef = ln_gamma((m + j) as f64 + 1.0)
                - ln_gamma(j as f64 + 1.0)
                - ln_gamma((m - j) as f64 + 1.0);
            poly += (ln_coef - j as f64 * (2.0 * u).ln()).exp();
        }
        0.5 * ((std::f64::consts::PI / (2.0 * u)).ln()) - u + poly.ln()
    } else {
        ln_bessel_k(a, u)
    };
    ln_k + a * u.ln() - ln_gamma(a) - (a - 1.0) * std::f64::consts::LN_2
}

/// φ_ν(s), the characteristic function of the univariate t distribution
/// (real, positive, φ_ν(0) = 1).
pub fn t_char_fn(nu: f64, s: f64) -> f64 {
    t_char_ln(nu, s).exp()
}

impl MarginalSpec {
    /// ln Π_k φ_{ν_k}(w_k s), the modulus of the characteristic function.
    fn envelope_ln(&self, s: f64) -> f64 {
        let raw = self.raw_scales();
        raw.iter()
            .zip(&self.dof)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &nu)| t_char_ln(nu, w * s))
            .sum()
    }

    /// Π_k φ_{ν_k}(w_k s).
    fn envelope(&self, s: f64) -> f64 {
        self.envelope_ln(s).exp()
    }

    /// Characteristic function `φ_{Y₁}(s) = e^{isμ} Π_k φ_{ν_k}(ω_k s)`.
    pub fn cf(&self, s: f64) -> Complex64 {
        Complex64::from_polar(self.envelope(s), self.location * s)
    }

    /// Truncation point: smallest power-of-two multiple of 1 where the cf
    /// envelope drops below `atol·10⁻²`, capped at `s_max`.
    fn truncation(&self, q: &QuadratureConfig) -> f64 {
        let threshold = (q.atol * 1e-2).ln();
        let mut s = 1.0;
        while self.envelope_ln(s) > threshold && s < q.s_max {
            s *= 2.0;
        }
        // Tighten with a short bisection so we do not integrate dead tail.
        let mut lo = s / 2.0;
        let mut hi = s.min(q.s_max);
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            if self.envelope_ln(mid) > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Number of positive-scale components, and the index of the single one
    /// if there is exactly one.
    fn single_component(&self) -> Option<usize> {
        let pos: Vec<usize> =
            (0..self.scales.len()).filter(|&k| self.scales[k] > 0.0).collect();
        if pos.len() == 1 {
            Some(pos[0])
        } else {
            None
        }
    }

    /// Integrate `f(s)` over `[0, S]`, optionally split at the half-periods of
    /// the oscillation frequency `freq = |y − μ|`.
    fn oscillatory_integral<F: Fn(f64) -> f64>(
        &self,
        f: &F,
        q: &QuadratureConfig,
        freq: f64,
    ) -> Result<f64> {
        let s_end = self.truncation(q);
        let seg = if q.per_oscillation && freq * s_end > 2.0 * std::f64::consts::PI {
            std::f64::consts::PI / freq
        } else {
            s_end / 8.0
        };
        let nseg = (s_end / seg).ceil().max(1.0);
        let atol_seg = q.atol / nseg;
        let mut total = 0.0;
        let mut a = 0.0;
        while a < s_end {
            let b = (a + seg).min(s_end);
            let (v, _) = quad::integrate(f, a, b, atol_seg, q.rtol)?;
            total += v;
            a = b;
        }
        Ok(total)
    }

    /// Marginal density at `y` via Gil-Pelaez inversion,
    /// `f(y) = (1/π) ∫₀^∞ cos(s(y−μ)) Π_k φ_{ν_k}(ω_k s) ds`;
    /// single-component specs route to the closed-form t / normal density.
    pub fn pdf(&self, y: f64, q: &QuadratureConfig) -> Result<f64> {
        let q = q.validated()?;
        if let Some(k) = self.single_component() {
            let w = self.raw_scales()[k];
            let nu = self.dof[k];
            let x = (y - self.location) / w;
            let ld = if nu.is_finite() {
                ln_gamma(0.5 * (nu + 1.0))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * (nu.ln() + LN_PI)
                    - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
            } else {
                -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x * x
            };
            return Ok((ld - w.ln()).exp());
        }
        let d = y - self.location;
        let f = |s: f64| (s * d).cos() * self.envelope(s);
        Ok(self.oscillatory_integral(&f, &q, d.abs())? / std::f64::consts::PI)
    }

    /// Marginal cdf at `y` via Gil-Pelaez,
    /// `F(y) = ½ + (1/π) ∫₀^∞ sin(s(y−μ))/s · Π_k φ_{ν_k}(ω_k s) ds`,
    /// with the removable singularity at s → 0 replaced by its limit `y − μ`.
    pub fn cdf(&self, y: f64, q: &QuadratureConfig) -> Result<f64> {
        let q = q.validated()?;
        if let Some(k) = self.single_component() {
            let w = self.raw_scales()[k];
            let nu = self.dof[k];
            let x = (y - self.location) / w;
            let p = if nu.is_finite() {
                StudentsT::new(0.0, 1.0, nu)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .cdf(x)
            } else {
                Normal::standard().cdf(x)
            };
            return Ok(p);
        }
        let d = y - self.location;
        let f = |s: f64| if s == 0.0 { d } else { (s * d).sin() / s * self.envelope(s) };
        let v = 0.5 + self.oscillatory_integral(&f, &q, d.abs())? / std::f64::consts::PI;
        Ok(v.clamp(0.0, 1.0))
    }

    /// Variance and excess kurtosis of Y₁:
    /// `σ² = Σ ω_k²` (standardized scales) and
    /// `κ = Σ_k ω_k⁴/(ω'ω)² · 6/(ν_k−4)`.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let std = self.standardized_scales()?;
        let var: f64 = std.iter().map(|w| w * w).sum();
        if let Some(bad) = self
            .dof
            .iter()
            .zip(&std)
            .find(|(v, &w)| v.is_finite() && **v <= 4.0 && w > 0.0)
        {
            return Err(Error::MomentUndefined(format!(
                "excess kurtosis requires ν_k > 4, got {}",
                bad.0
            )));
        }
        let kurt: f64 = std
            .iter()
            .zip(&self.dof)
            .map(|(&w, &nu)| if nu.is_finite() { w.powi(4) * 6.0 / (nu - 4.0) } else { 0.0 })
            .sum::<f64>()
            / (var * var);
        Ok((var, kurt))
    }

    /// Variance only (requires finite ν_k > 2).
    pub fn variance(&self) -> Result<f64> {
        let std = self.standardized_scales()?;
        Ok(std.iter().map(|w| w * w).sum())
    }

    /// Absolute central moment E|Y₁|^r for real r ∈ (0, min ν_k), μ = 0.
    ///
    /// Characteristic-function route: with `T_p(s) = Σ_{k≤p} (−1)^k m_{2k}
    /// s^{2k}/(2k)!` and `p = ⌊r/2⌋`,
    /// `E|Y|^r = (1/C_r) ∫₀^∞ s^{−1−r} [T_p(s) − Re φ(s)] ds` with
    /// `C_r = π / (2 sin(πr/2) Γ(1+r))` (the p = 0 case reduces to the
    /// familiar `E|Y| = (2/π) ∫ s^{-2}(1 − Re φ)` at r = 1). Even integer r is
    /// routed to the exact closed-form moments.
    pub fn fractional_moment(&self, r: f64, q: &QuadratureConfig) -> Result<f64> {
        let q = q.validated()?;
        if self.location.abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "fractional_moment is the central absolute moment; requires μ = 0".into(),
            ));
        }
        if !(r > 0.0) {
            return Err(Error::InvalidArgument("moment order r must be > 0".into()));
        }
        let nu_min = self
            .dof
            .iter()
            .zip(&self.scales)
            .filter(|(v, &w)| v.is_finite() && w > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        if r >= nu_min {
            return Err(Error::MomentUndefined(format!(
                "E|Y|^{r} diverges: r must be < min ν_k = {nu_min}"
            )));
        }
        // Even integer orders: exact moments (the inversion constant is
        // singular there).
        let half = r / 2.0;
        if (half - half.round()).abs() < 1e-9 && half.round() >= 1.0 {
            let k = half.round() as u32;
            return match k {
                1 => self.variance(),
                2 => {
                    let (var, kurt) = self.moments()?;
                    Ok((kurt + 3.0) * var * var)
                }
                _ => Err(Error::InvalidArgument(format!(
                    "even moment order {r} beyond 4 is not supported"
                ))),
            };
        }
        let p = (r / 2.0).floor() as usize;
        if p > 1 {
            return Err(Error::InvalidArgument(format!(
                "fractional moment order {r} ≥ 4 is not supported"
            )));
        }
        let m2 = if nu_min > 2.0 { Some(self.variance()?) } else { None };
        if p >= 1 && m2.is_none() {
            return Err(Error::MomentUndefined(format!(
                "moment order {r} > 2 requires ν_k > 2"
            )));
        }
        let m4 = if nu_min > 4.0 {
            let (var, kurt) = self.moments()?;
            Some((kurt + 3.0) * var * var)
        } else {
            None
        };
        // bracket(s) = T_p(s) − Re φ(s), with the k = 0 cancellation removed
        // via expm1 of the log-envelope.
        let m2v = m2.unwrap_or(0.0);
        let bracket = |s: f64| -> f64 {
            let one_minus_env = -self.envelope_ln(s).exp_m1();
            if p == 0 {
                one_minus_env
            } else {
                one_minus_env - 0.5 * m2v * s * s
            }
        };
        // Subtract a damped version of the bracket's leading small-s term,
        // g·s^{2p+2}·e^{-s²/2}, whose transform integrates in closed form; the
        // remainder then vanishes fast enough at 0 that the numeric integral
        // can start at a small cutoff below which log-cf rounding noise would
        // otherwise be amplified by s^{−1−r}.
        let (g_coef, analytic) = if p == 0 {
            match m2 {
                Some(m2) => {
                    let a = 0.5 * m2 * 2.0f64.powf(-0.5 * r) * ln_gamma(1.0 - 0.5 * r).exp();
                    (0.5 * m2, a)
                }
                None => (0.0, 0.0),
            }
        } else {
            match m4 {
                Some(m4) => {
                    let a =
                        -m4 / 24.0 * 2.0f64.powf(1.0 - 0.5 * r) * ln_gamma(2.0 - 0.5 * r).exp();
                    (-m4 / 24.0, a)
                }
                None => (0.0, 0.0),
            }
        };
        let pow = 2 * (p as i32) + 2;
        let remainder = |s: f64| -> f64 {
            s.powf(-1.0 - r) * (bracket(s) - g_coef * s.powi(pow) * (-0.5 * s * s).exp())
        };
        let s_lo = 1e-4;
        let s_end = self.truncation(&q).max(12.0);
        let (head, _) = quad::integrate(&remainder, s_lo, 1.0, q.atol, q.rtol)?;
        let (mid, _) = quad::integrate(&remainder, 1.0, s_end, q.atol, q.rtol)?;
        // [S, ∞): φ and the damped term are both ≈ 0; T_p integrates exactly.
        let mut tail = s_end.powf(-r) / r;
        if p >= 1 {
            tail -= 0.5 * m2v * s_end.powf(2.0 - r) / (r - 2.0);
        }
        let c_r = std::f64::consts::PI
            / (2.0 * (std::f64::consts::FRAC_PI_2 * r).sin() * ln_gamma(1.0 + r).exp());
        Ok((analytic + head + mid + tail) / c_r)
    }
}

/// Density of the convolution of a standard normal and a standard Cauchy (the
/// Voigt profile): `f(y) = Re[erfcx((1 + iy)/√2)] / √(2π)`.
pub fn voigt_pdf(y: f64) -> f64 {
    let z = Complex64::new(1.0, y) / std::f64::consts::SQRT_2;
    crate::special::erfcx_complex(z).re / (2.0 * std::f64::consts::PI).sqrt()
}

/// Supported closed-form odd-degrees-of-freedom convolution pairs
/// (unit scales).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddDfPair {
    /// t₁ + t₃.
    T1T3,
    /// t₁ + t₅.
    T1T5,
}

/// Closed-form density of `t_1 + t_3` or `t_1 + t_5` with unit scales.
///
/// `f_{t₁+t₃}(y) = (1/π) (y² + 16 + 10√3) / (y² + 4 + 2√3)²` and
/// `f_{t₁+t₅}(y) = (1/π) (y⁴ + 2(11+3√5)y² + (8/3)(131+61√5)) / (y² + 2(3+√5))³`.
pub fn odd_df_pdf(pair: OddDfPair, y: f64) -> f64 {
    let y2 = y * y;
    match pair {
        OddDfPair::T1T3 => {
            let s3 = 3.0f64.sqrt();
            (y2 + 16.0 + 10.0 * s3) / (y2 + 4.0 + 2.0 * s3).powi(2) / std::f64::consts::PI
        }
        OddDfPair::T1T5 => {
            let s5 = 5.0f64.sqrt();
            let num = y2 * y2 + 2.0 * (11.0 + 3.0 * s5) * y2 + 8.0 / 3.0 * (131.0 + 61.0 * s5);
            num / (y2 + 2.0 * (3.0 + s5)).powi(3) / std::f64::consts::PI
        }
    }
}
