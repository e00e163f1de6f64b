//! Coupling spectral densities and reservoir pair correlation functions.
//!
//! A spectral density `|g(ω)|²` lives on `ω ≥ 0`. The zero-temperature
//! scalar kernel is
//!
//! ```text
//! c(τ) = ∫₀^∞ dω |g(ω)|² e^{-iωτ},      ĉ(y) = ∫₀^∞ dω |g(ω)|² / (y - ω),  Im y > 0,
//! ```
//!
//! and at finite temperature the standard bosonic form
//! `c(τ) = ∫ dω |g|² [(n̄+1) e^{-iωτ} + n̄ e^{iωτ}]`, `n̄ = 1/(e^{βω} - 1)`, is used.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{C64, I, ZERO};
use crate::quad::{integrate, integrate_real, QuadConfig};
use crate::special::exp_integral_e1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// `|g(ω)|² = (γΛ/π) / ((ω - ω_c)² + Λ²)` restricted to `ω ≥ 0`.
    Lorentzian {
        strength: f64,
        center: f64,
        width: f64,
    },
    /// `|g(ω)|² = h` on `[lo, hi]`, zero elsewhere.
    FlatWindow { height: f64, lo: f64, hi: f64 },
    /// Piecewise-linear interpolation of sampled `(ω, |g(ω)|²)` pairs.
    Tabulated { omega: Vec<f64>, g2: Vec<f64> },
}

impl SpectralDensity {
    pub fn lorentzian(strength: f64, center: f64, width: f64) -> Result<Self> {
        let sd = Self::Lorentzian {
            strength,
            center,
            width,
        };
        sd.validate()?;
        Ok(sd)
    }

    pub fn flat(height: f64, lo: f64, hi: f64) -> Result<Self> {
        let sd = Self::FlatWindow { height, lo, hi };
        sd.validate()?;
        Ok(sd)
    }

    pub fn tabulated(omega: Vec<f64>, g2: Vec<f64>) -> Result<Self> {
        let sd = Self::Tabulated { omega, g2 };
        sd.validate()?;
        Ok(sd)
    }

    pub fn zero() -> Self {
        Self::FlatWindow {
            height: 0.0,
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => {
                if !(strength.is_finite() && *strength >= 0.0) {
                    return Err(invalid("spectral.strength", "must be finite and >= 0"));
                }
                if !center.is_finite() {
                    return Err(invalid("spectral.center", "must be finite"));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(invalid("spectral.width", "must be > 0"));
                }
            }
            Self::FlatWindow { height, lo, hi } => {
                if !(height.is_finite() && *height >= 0.0) {
                    return Err(invalid("spectral.height", "must be finite and >= 0"));
                }
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi > lo) {
                    return Err(invalid("spectral.window", "need 0 <= lo < hi"));
                }
            }
            Self::Tabulated { omega, g2 } => {
                if omega.len() < 2 || omega.len() != g2.len() {
                    return Err(invalid(
                        "spectral.table",
                        "need at least two (omega, g2) rows of equal length",
                    ));
                }
                if omega[0] < 0.0 || omega.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid(
                        "spectral.table.omega",
                        "must be non-negative and strictly increasing",
                    ));
                }
                if g2.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid("spectral.table.g2", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// `|g(ω)|²`, zero for `ω < 0`.
    pub fn g2(&self, omega: f64) -> f64 {
        if omega < 0.0 {
            return 0.0;
        }
        match self {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => strength * width / PI / ((omega - center).powi(2) + width * width),
            Self::FlatWindow { height, lo, hi } => {
                if omega >= *lo && omega <= *hi {
                    *height
                } else {
                    0.0
                }
            }
            Self::Tabulated { omega: xs, g2 } => {
                if omega < xs[0] || omega > xs[xs.len() - 1] {
                    return 0.0;
                }
                let j = match xs.binary_search_by(|x| x.partial_cmp(&omega).unwrap()) {
                    Ok(j) => return g2[j],
                    Err(j) => j,
                };
                let (x0, x1) = (xs[j - 1], xs[j]);
                let f = (omega - x0) / (x1 - x0);
                g2[j - 1] * (1.0 - f) + g2[j] * f
            }
        }
    }

    /// `|g|² → factor·|g|²`, e.g. `factor = λ²` for `g → λg`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self.clone() {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => Self::Lorentzian {
                strength: strength * factor,
                center,
                width,
            },
            Self::FlatWindow { height, lo, hi } => Self::FlatWindow {
                height: height * factor,
                lo,
                hi,
            },
            Self::Tabulated { omega, g2 } => Self::Tabulated {
                omega,
                g2: g2.into_iter().map(|v| v * factor).collect(),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Lorentzian { strength, .. } => *strength == 0.0,
            Self::FlatWindow { height, .. } => *height == 0.0,
            Self::Tabulated { g2, .. } => g2.iter().all(|v| *v == 0.0),
        }
    }

    /// `∫₀^∞ |g(ω)|² dω`.
    pub fn total_weight(&self) -> f64 {
        match self {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => strength / PI * (0.5 * PI + (center / width).atan()),
            Self::FlatWindow { height, lo, hi } => height * (hi - lo),
            Self::Tabulated { omega, g2 } => omega
                .windows(2)
                .zip(g2.windows(2))
                .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
                .sum(),
        }
    }

    /// Characteristic frequency used for default tolerances and contour heights.
    pub fn spectral_scale(&self) -> f64 {
        match self {
            Self::Lorentzian { center, width, .. } => center.abs() + width,
            Self::FlatWindow { hi, .. } => *hi,
            Self::Tabulated { omega, .. } => omega[omega.len() - 1],
        }
    }

    /// Upper edge of the support (infinite for the Lorentzian).
    pub fn support_max(&self) -> f64 {
        match self {
            Self::Lorentzian { .. } => f64::INFINITY,
            Self::FlatWindow { hi, .. } => *hi,
            Self::Tabulated { omega, .. } => omega[omega.len() - 1],
        }
    }

    /// Frequency above which the remaining spectral weight is below `rel_tail`
    /// of the total.
    pub fn effective_cutoff(&self, rel_tail: f64) -> f64 {
        match self {
            Self::Lorentzian { center, width, .. } => {
                // tail mass fraction ≈ Λ / (π (ω - ω_c))
                center.max(0.0) + width / (PI * rel_tail.max(1e-300))
            }
            _ => self.support_max(),
        }
    }

    pub(crate) fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Lorentzian { center, width, .. } => {
                let mut b = vec![];
                for k in [-10.0, -3.0, -1.0, 0.0, 1.0, 3.0, 10.0] {
                    let x = center + k * width;
                    if x > 0.0 {
                        b.push(x);
                    }
                }
                // Geometric ladder so the algebraic tail is not sampled too sparsely.
                let mut step = 30.0 * width;
                while step < 1e13 * width {
                    b.push(center.max(0.0) + step);
                    step *= 3.0;
                }
                b
            }
            Self::FlatWindow { lo, hi, .. } => vec![*lo, *hi],
            Self::Tabulated { omega, .. } => omega.clone(),
        }
    }

    /// Zero-temperature correlation `c(t, s) = ∫₀^∞ dω |g(ω)|² e^{-iω(t-s)}`.
    pub fn correlation_time(&self, t: f64, s: f64) -> Result<C64> {
        let tau = t - s;
        if !tau.is_finite() {
            return Err(Error::Domain(format!("non-finite time difference {tau}")));
        }
        if self.is_zero() {
            return Ok(ZERO);
        }
        if tau < 0.0 {
            return Ok(self.correlation_time(0.0, -tau)?.conj());
        }
        if tau == 0.0 {
            return Ok(C64::new(self.total_weight(), 0.0));
        }
        Ok(match self {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => {
                let a = C64::new(*center, *width);
                let b = a.conj();
                let g = |p: C64| -> C64 {
                    let w = -I * p * tau;
                    let mut e1 = exp_integral_e1(w);
                    // The path from w towards +i∞ crosses the cut when it starts
                    // in the open third quadrant.
                    if w.re < 0.0 && w.im < 0.0 {
                        e1 -= 2.0 * PI * I;
                    }
                    (-I * p * tau).exp() * e1
                };
                strength / (2.0 * PI * I) * (g(a) - g(b))
            }
            Self::FlatWindow { height, lo, hi } => {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                let shape = if (half * tau).abs() < 1e-8 {
                    2.0 * half
                } else {
                    2.0 * (half * tau).sin() / tau
                };
                height * shape * (-I * mid * tau).exp()
            }
            Self::Tabulated { omega, g2 } => {
                let mut acc = ZERO;
                for j in 0..omega.len() - 1 {
                    acc += filon_linear_segment(omega[j], omega[j + 1], g2[j], g2[j + 1], -tau);
                }
                acc
            }
        })
    }

    /// Zero-temperature Laplace image `ĉ(y) = ∫₀^∞ dω |g(ω)|² / (y - ω)`, `Im y > 0`.
    pub fn correlation_laplace(&self, y: C64) -> Result<C64> {
        if !(y.im > 0.0) {
            return Err(Error::Domain(format!(
                "Laplace variable must satisfy Im y > 0, got {y}"
            )));
        }
        Ok(self.cauchy_transform(y))
    }

    /// `∫ |g|²/(y - ω)` for any `y` off the support; used with tiny `Im y` for
    /// boundary values.
    fn cauchy_transform(&self, y: C64) -> C64 {
        if self.is_zero() {
            return ZERO;
        }
        match self {
            Self::Lorentzian {
                strength,
                center,
                width,
            } => {
                let a = C64::new(*center, *width);
                let b = a.conj();
                let scale = center.abs() + width;
                if (y - a).norm() < 1e-7 * scale || (y - b).norm() < 1e-7 * scale {
                    return self.cauchy_quadrature(y);
                }
                let poles = [a, b, y];
                let mut acc = ZERO;
                for i in 0..3 {
                    let mut denom = C64::new(1.0, 0.0);
                    for j in 0..3 {
                        if i != j {
                            denom *= poles[i] - poles[j];
                        }
                    }
                    acc += (-poles[i]).ln() / denom;
                }
                strength * width / PI * acc
            }
            Self::FlatWindow { height, lo, hi } => height * ((y - lo).ln() - (y - hi).ln()),
            Self::Tabulated { omega, g2 } => {
                let mut acc = ZERO;
                for j in 0..omega.len() - 1 {
                    acc += cauchy_linear_segment(omega[j], omega[j + 1], g2[j], g2[j + 1], y);
                }
                acc
            }
        }
    }

    fn cauchy_quadrature(&self, y: C64) -> C64 {
        let cut = self.effective_cutoff(1e-12).min(self.support_max());
        let cfg = QuadConfig::default();
        
        integrate(
            |w| self.g2(w) / (y - w),
            0.0,
            cut,
            &self.breakpoints(),
            &cfg,
        )
        .map(|r| r.value)
        .unwrap_or(ZERO)
    }

    /// Principal value `P∫₀^∞ dω |g(ω)|² / (ω - x)`.
    pub fn level_shift(&self, x: f64) -> f64 {
        let eps = 1e-13 * self.spectral_scale().max(1.0);
        -self.cauchy_transform(C64::new(x, eps)).re
    }

    /// `π |g(x)|²`: the golden-rule amplitude damping constant at frequency `x`.
    pub fn damping(&self, x: f64) -> f64 {
        PI * self.g2(x)
    }
}

/// `∫_{x0}^{x1} (f0 + (f1-f0)(ω-x0)/h) e^{i k ω} dω` in closed form.
fn filon_linear_segment(x0: f64, x1: f64, f0: f64, f1: f64, k: f64) -> C64 {
    let h = x1 - x0;
    let theta = k * h;
    if theta.abs() < 1e-4 {
        // Taylor in theta; error O(theta^4).
        let e0 = (I * k * x0).exp();
        let m0 = h * (1.0 + I * theta / 2.0 - theta * theta / 6.0 - I * theta.powi(3) / 24.0);
        let m1 = h * (0.5 + I * theta / 3.0 - theta * theta / 8.0 - I * theta.powi(3) / 30.0);
        return e0 * (f0 * m0 + (f1 - f0) * m1);
    }
    let e0 = (I * k * x0).exp();
    let e1 = (I * k * x1).exp();
    // ∫ e^{ikω} = (e1 - e0)/(ik); ∫ (ω-x0)/h e^{ikω} = e1/(ik) - (e1 - e0)/(ik)^2/h
    let ik = I * k;
    let m0 = (e1 - e0) / ik;
    let m1 = e1 / ik - (e1 - e0) / (ik * ik * h);
    f0 * m0 + (f1 - f0) * m1
}

/// `∫_{x0}^{x1} (linear) / (y - ω) dω` in closed form.
fn cauchy_linear_segment(x0: f64, x1: f64, f0: f64, f1: f64, y: C64) -> C64 {
    let h = x1 - x0;
    let slope = (f1 - f0) / h;
    // f(ω) = f(y) - slope (y - ω) with f(y) = f0 + slope (y - x0)
    let fy = f0 + slope * (y - x0);
    let log_term = (y - x0).ln() - (y - x1).ln();
    fy * log_term - slope * h
}

/// Bose occupation `1/(e^{βω} - 1)` at temperature `1/β`.
pub fn bose_occupation(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    1.0 / (omega / temperature).exp_m1()
}

/// The scalar reservoir kernel at a given temperature (energy units, `1/β`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarKernel {
    pub density: SpectralDensity,
    #[serde(default)]
    pub temperature: f64,
}

impl ScalarKernel {
    pub fn zero_temperature(density: SpectralDensity) -> Self {
        Self {
            density,
            temperature: 0.0,
        }
    }

    pub fn thermal(density: SpectralDensity, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(invalid("reservoir.temperature", "must be >= 0"));
        }
        let k = Self {
            density,
            temperature,
        };
        if temperature > 0.0 {
            k.check_thermal_integrable()?;
        }
        Ok(k)
    }

    fn check_thermal_integrable(&self) -> Result<()> {
        // n̄(ω) ~ T/ω near zero, so |g|² must vanish at the origin.
        let probe = 1e-9 * self.density.spectral_scale().max(1e-12);
        if self.density.g2(probe) > 1e-12 * self.density.total_weight().max(1e-300) {
            return Err(Error::DivergentIntegral(
                "thermal kernel requires |g(ω)|² → 0 as ω → 0".into(),
            ));
        }
        Ok(())
    }

    fn thermal_cutoff(&self) -> f64 {
        (60.0 * self.temperature).min(self.density.effective_cutoff(1e-12))
    }

    pub fn is_zero(&self) -> bool {
        self.density.is_zero()
    }

    /// `c(t, s)`; depends only on `t - s`.
    pub fn time(&self, t: f64, s: f64) -> Result<C64> {
        let zero_t = self.density.correlation_time(t, s)?;
        if self.temperature <= 0.0 || self.is_zero() {
            return Ok(zero_t);
        }
        let tau = t - s;
        let temp = self.temperature;
        let extra = integrate_real(
            |w| {
                if w <= 0.0 {
                    0.0
                } else {
                    2.0 * self.density.g2(w) * bose_occupation(w, temp) * (w * tau).cos()
                }
            },
            0.0,
            self.thermal_cutoff(),
            &self.density.breakpoints(),
            &QuadConfig::default(),
        )?;
        Ok(zero_t + extra)
    }

    /// `ĉ(y)` for `Im y > 0`.
    pub fn laplace(&self, y: C64) -> Result<C64> {
        let zero_t = self.density.correlation_laplace(y)?;
        if self.temperature <= 0.0 || self.is_zero() {
            return Ok(zero_t);
        }
        let temp = self.temperature;
        let extra = integrate(
            |w| {
                if w <= 0.0 {
                    ZERO
                } else {
                    self.density.g2(w) * bose_occupation(w, temp) * (1.0 / (y - w) + 1.0 / (y + w))
                }
            },
            0.0,
            self.thermal_cutoff(),
            &self.density.breakpoints(),
            &QuadConfig::default(),
        )?;
        Ok(zero_t + extra.value)
    }

    /// Boundary value `ĉ(x + i0)` approximated at height `eps`, optionally
    /// Richardson-extrapolated to `eps → 0`.
    pub fn boundary_value(&self, x: f64, eps: f64, richardson: bool) -> Result<C64> {
        let f1 = self.laplace(C64::new(x, eps))?;
        if !richardson {
            return Ok(f1);
        }
        let f2 = self.laplace(C64::new(x, 0.5 * eps))?;
        Ok(2.0 * f2 - f1)
    }

    /// Spectral measure `J(ω)` on the full real line such that
    /// `ĉ(y) = ∫ J(ω)/(y - ω) dω` and `c(τ) = ∫ J(ω) e^{-iωτ} dω`.
    pub fn measure(&self, omega: f64) -> f64 {
        if omega > 0.0 {
            self.density.g2(omega) * (1.0 + bose_occupation(omega, self.temperature))
        } else if omega < 0.0 && self.temperature > 0.0 {
            self.density.g2(-omega) * bose_occupation(-omega, self.temperature)
        } else if omega == 0.0 && self.temperature <= 0.0 {
            self.density.g2(0.0)
        } else {
            0.0
        }
    }

    /// Points where `J` has kinks or peaks, on both sides of the origin when thermal.
    pub fn density_breakpoints(&self) -> Vec<f64> {
        let mut b = self.density.breakpoints();
        if self.temperature > 0.0 {
            let neg: Vec<f64> = b.iter().map(|x| -x).collect();
            b.extend(neg);
        }
        b
    }

    /// Range `[lo, hi]` outside of which `J` is negligible.
    pub fn measure_range(&self) -> (f64, f64) {
        let hi = self.density.effective_cutoff(1e-9).min(self.density.support_max());
        let lo = if self.temperature > 0.0 {
            -self.thermal_cutoff()
        } else {
            0.0
        };
        (lo, hi)
    }
}

/// One nonzero slot `c_(kl)(mn) = weight · c(t - s)`; indices are zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub n: usize,
    pub weight: f64,
}

/// Which `(kl)(mn)` slots are nonzero, with their weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexRule {
    pub entries: Vec<Slot>,
}

impl IndexRule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, k: usize, l: usize, m: usize, n: usize, weight: f64) -> Self {
        self.entries.push(Slot { k, l, m, n, weight });
        self
    }

    /// Rotating-wave two-level atom: only `c_(21)(12)` survives (zero-based `(1,0)(0,1)`).
    pub fn two_level() -> Self {
        Self::new().with(1, 0, 0, 1, 1.0)
    }
}

/// Indexed pair correlators sharing one scalar kernel.
#[derive(Clone, Debug)]
pub struct CorrelationKernel {
    pub scalar: ScalarKernel,
    pub slots: Vec<Slot>,
}

impl CorrelationKernel {
    pub fn empty(scalar: ScalarKernel) -> Self {
        Self {
            scalar,
            slots: vec![],
        }
    }

    pub fn weight(&self, k: usize, l: usize, m: usize, n: usize) -> f64 {
        self.slots
            .iter()
            .find(|s| s.k == k && s.l == l && s.m == m && s.n == n)
            .map(|s| s.weight)
            .unwrap_or(0.0)
    }

    pub fn time(&self, k: usize, l: usize, m: usize, n: usize, t: f64, s: f64) -> Result<C64> {
        let w = self.weight(k, l, m, n);
        if w == 0.0 {
            return Ok(ZERO);
        }
        Ok(w * self.scalar.time(t, s)?)
    }

    pub fn laplace(&self, k: usize, l: usize, m: usize, n: usize, y: C64) -> Result<C64> {
        let w = self.weight(k, l, m, n);
        if w == 0.0 {
            if !(y.im > 0.0) {
                return Err(Error::Domain(format!("Im y must be > 0, got {y}")));
            }
            return Ok(ZERO);
        }
        Ok(w * self.scalar.laplace(y)?)
    }

    pub fn is_zero(&self) -> bool {
        self.slots.is_empty() || self.scalar.is_zero() || self.slots.iter().all(|s| s.weight == 0.0)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.slots
            .iter()
            .map(|s| s.k.max(s.l).max(s.m).max(s.n))
            .max()
    }
}

/// Packages the scalar kernel under an index rule.
pub fn kernel_table(scalar: ScalarKernel, rule: &IndexRule) -> Result<CorrelationKernel> {
    let mut slots: Vec<Slot> = Vec::with_capacity(rule.entries.len());
    for e in &rule.entries {
        if slots
            .iter()
            .any(|s| s.k == e.k && s.l == e.l && s.m == e.m && s.n == e.n)
        {
            return Err(Error::IndexCollision(e.k, e.l, e.m, e.n));
        }
        if e.weight != 0.0 {
            slots.push(*e);
        }
    }
    Ok(CorrelationKernel { scalar, slots })
}
