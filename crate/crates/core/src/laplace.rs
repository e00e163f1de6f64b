//! Shifted Laplace transform and its inversion along `Im z = ε`.
//!
//! Conventions: `F(z) = -i ∫₀^∞ dt e^{izt} f(t)` for `Im z > 0`, with inverse
//! `f(t) = (i/2π) ∫ dω e^{-i(ω+iε)t} F(ω+iε)`. A matrix row `k` is shifted by
//! `-ω_k` so that interaction-picture quantities transform to resolvents
//! centred on the bare energies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{C64, I, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedTransformSpec {
    pub shift: f64,
    pub im_offset: f64,
}

impl ShiftedTransformSpec {
    pub fn new(shift: f64, im_offset: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(invalid("laplace.shift", "must be finite"));
        }
        if !(im_offset.is_finite() && im_offset > 0.0) {
            return Err(invalid("laplace.epsilon", "must be > 0"));
        }
        Ok(Self { shift, im_offset })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourRule {
    /// Uniform nodes; Filon-linear weights (exact for piecewise-linear
    /// amplitudes at any `t`).
    Trapezoid,
    ClenshawCurtis,
}

/// Discretisation of the line `z = ω + iε`, `ω ∈ [omega_min, omega_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_points: usize,
    pub epsilon: f64,
    pub rule: ContourRule,
    /// Largest admissible ratio of the edge integrand to its peak.
    #[serde(default = "default_window_tolerance")]
    pub window_tolerance: f64,
}

fn default_window_tolerance() -> f64 {
    1e-6
}

impl ContourGrid {
    pub fn new(omega_min: f64, omega_max: f64, n_points: usize, epsilon: f64) -> Result<Self> {
        let g = Self {
            omega_min,
            omega_max,
            n_points,
            epsilon,
            rule: ContourRule::Trapezoid,
            window_tolerance: default_window_tolerance(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_rule(mut self, rule: ContourRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_window_tolerance(mut self, tol: f64) -> Self {
        self.window_tolerance = tol;
        self
    }

    /// Window `center ± half_width` with at least 20 nodes per period of
    /// `e^{-iω t_max}` and per feature of width `epsilon`.
    pub fn auto(center: f64, half_width: f64, epsilon: f64, t_max: f64) -> Result<Self> {
        let width = 2.0 * half_width;
        let h_phase = 2.0 * PI / (20.0 * t_max.max(1e-300));
        let h_feature = epsilon / 2.0;
        let h = h_phase.min(h_feature);
        let n = ((width / h).ceil() as usize + 1).max(16);
        Self::new(center - half_width, center + half_width, n, epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min.is_finite() && self.omega_max.is_finite())
            || self.omega_min >= self.omega_max
        {
            return Err(invalid("laplace.window", "need omega_min < omega_max"));
        }
        if self.n_points < 16 {
            return Err(invalid("laplace.points", "need at least 16 points"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid("laplace.epsilon", "must be > 0"));
        }
        if !(self.window_tolerance > 0.0) {
            return Err(invalid("laplace.window_tolerance", "must be > 0"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n_points;
        match self.rule {
            ContourRule::Trapezoid => {
                let h = (self.omega_max - self.omega_min) / (n - 1) as f64;
                (0..n).map(|j| self.omega_min + j as f64 * h).collect()
            }
            ContourRule::ClenshawCurtis => {
                let mid = 0.5 * (self.omega_min + self.omega_max);
                let half = 0.5 * (self.omega_max - self.omega_min);
                (0..n)
                    .map(|j| mid - half * (PI * j as f64 / (n - 1) as f64).cos())
                    .collect()
            }
        }
    }
}

fn clenshaw_curtis_weights(n_points: usize, half: f64) -> Vec<f64> {
    let n = n_points - 1;
    let mut w = vec![0.0; n_points];
    for (j, wj) in w.iter_mut().enumerate() {
        let theta = PI * j as f64 / n as f64;
        let mut s = 0.0;
        for k in 1..=n / 2 {
            let b = if 2 * k == n { 1.0 } else { 2.0 };
            s += b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * theta).cos();
        }
        let c = if j == 0 || j == n { 1.0 } else { 2.0 };
        *wj = c / n as f64 * (1.0 - s) * half;
    }
    w
}

/// `(∫₀¹ (1-s) e^{iθs} ds, ∫₀¹ s e^{iθs} ds)` for complex `θ`.
fn filon_moments(theta: C64) -> (C64, C64) {
    if theta.norm() < 1e-3 {
        let t = I * theta;
        let t2 = t * t;
        let t3 = t2 * t;
        let m1 = 0.5 + t / 3.0 + t2 / 8.0 + t3 / 30.0;
        let m = ONE + t / 2.0 + t2 / 6.0 + t3 / 24.0;
        return (m - m1, m1);
    }
    let e = (I * theta).exp();
    let it = I * theta;
    let m = (e - 1.0) / it;
    let m1 = e / it - (e - 1.0) / (it * it);
    (m - m1, m1)
}

/// Result of a truncated forward transform.
#[derive(Clone, Copy, Debug)]
pub struct TransformValue {
    pub value: C64,
    /// Bound on the omitted `∫_T^∞` contribution.
    pub tail_estimate: f64,
}

/// `-i ∫₀^T dt e^{i(z - shift)t} f(t)` for `f` sampled at `t_j = j·dt`,
/// using Filon weights for the exponential.
pub fn forward_transform(
    samples: &[C64],
    dt: f64,
    shift: f64,
    z: C64,
    tail_tolerance: f64,
) -> Result<TransformValue> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("forward transform needs Im z > 0, got {z}")));
    }
    if samples.len() < 2 || !(dt > 0.0) {
        return Err(invalid("forward_transform.samples", "need >= 2 samples and dt > 0"));
    }
    let k = z - shift;
    let (w0, w1) = filon_moments(k * dt);
    let step = (I * k * dt).exp();
    let mut phase = ONE;
    let mut acc = ZERO;
    for j in 0..samples.len() - 1 {
        acc += phase * (samples[j] * w0 + samples[j + 1] * w1);
        phase *= step;
        if j % 256 == 255 {
            // refresh to stop drift from the running product
            phase = (I * k * dt * (j + 1) as f64).exp();
        }
    }
    let t_end = dt * (samples.len() - 1) as f64;
    let last = samples[samples.len() - 1].norm();
    let tail = last * (-z.im * t_end).exp() / z.im;
    if tail > tail_tolerance {
        return Err(Error::Truncation {
            estimate: tail,
            tolerance: tail_tolerance,
        });
    }
    Ok(TransformValue {
        value: -I * acc * dt,
        tail_estimate: tail,
    })
}

/// `A/(z - p)`, subtracted from `F` before quadrature and restored exactly.
#[derive(Clone, Copy, Debug)]
struct PoleTail {
    amplitude: C64,
    pole: C64,
}

impl PoleTail {
    fn eval(&self, z: C64) -> C64 {
        self.amplitude / (z - self.pole)
    }

    /// Exact inverse along `Im z = ε`: the pole contributes only when it lies
    /// below the contour.
    fn inverse(&self, t: f64, epsilon: f64) -> C64 {
        if self.pole.im < epsilon {
            self.amplitude * (-I * self.pole * t).exp()
        } else {
            ZERO
        }
    }

    fn fit(z1: C64, f1: C64, z2: C64, f2: C64, fallback_center: f64, fallback_width: f64) -> Self {
        let denom = f1 - f2;
        if denom.norm() > 0.0 {
            let pole = (f1 * z1 - f2 * z2) / denom;
            let eps = z1.im;
            // Poles hugging the contour would make the residual spiky.
            if pole.is_finite() && (pole.im - eps).abs() > 0.5 * eps {
                return Self {
                    amplitude: f1 * (z1 - pole),
                    pole,
                };
            }
        }
        let pole = C64::new(fallback_center, -fallback_width);
        Self {
            amplitude: f2 * (z2 - pole),
            pole,
        }
    }
}

/// Numerical inverse at each `t` in `times`, sampling `F` once on the grid.
pub fn invert_series<F: FnMut(C64) -> C64>(
    mut f: F,
    grid: &ContourGrid,
    times: &[f64],
) -> Result<Vec<C64>> {
    grid.validate()?;
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(invalid("laplace.t", "times must be >= 0"));
    }
    let eps = grid.epsilon;
    let nodes = grid.nodes();
    let n = nodes.len();
    let values: Vec<C64> = nodes.iter().map(|&w| f(C64::new(w, eps))).collect();

    let width = grid.omega_max - grid.omega_min;
    let j1 = n / 10;
    let j2 = n - 1 - n / 10;
    let tail = PoleTail::fit(
        C64::new(nodes[j1], eps),
        values[j1],
        C64::new(nodes[j2], eps),
        values[j2],
        0.5 * (grid.omega_min + grid.omega_max),
        0.25 * width,
    );
    let resid: Vec<C64> = nodes
        .iter()
        .zip(&values)
        .map(|(&w, v)| v - tail.eval(C64::new(w, eps)))
        .collect();

    // Residual left at the window edges, measured against the transform itself.
    let peak_f = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let edge = resid[0].norm().max(resid[n - 1].norm());
    let ratio = edge / peak_f.max(f64::MIN_POSITIVE);
    if ratio > grid.window_tolerance {
        return Err(Error::WindowTooNarrow { ratio });
    }

    let mut out = Vec::with_capacity(times.len());
    match grid.rule {
        ContourRule::Trapezoid => {
            let h = width / (n - 1) as f64;
            for &t in times {
                let (w0, w1) = filon_moments(C64::new(-t * h, 0.0));
                let mut acc = ZERO;
                for j in 0..n - 1 {
                    let phase = C64::new(0.0, -nodes[j] * t).exp();
                    acc += phase * (resid[j] * w0 + resid[j + 1] * w1);
                }
                let body = I / (2.0 * PI) * (eps * t).exp() * acc * h;
                out.push(body + tail.inverse(t, eps));
            }
        }
        ContourRule::ClenshawCurtis => {
            let weights = clenshaw_curtis_weights(n, 0.5 * width);
            for &t in times {
                let mut acc = ZERO;
                for j in 0..n {
                    acc += weights[j] * C64::new(0.0, -nodes[j] * t).exp() * resid[j];
                }
                let body = I / (2.0 * PI) * (eps * t).exp() * acc;
                out.push(body + tail.inverse(t, eps));
            }
        }
    }
    Ok(out)
}

pub fn invert<F: FnMut(C64) -> C64>(f: F, grid: &ContourGrid, t: f64) -> Result<C64> {
    Ok(invert_series(f, grid, &[t])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_constant_function() {
        let w0 = 1.5;
        let z = C64::new(0.7, 0.5);
        let dt = 0.01;
        let t_end = 80.0;
        let n = (t_end / dt) as usize + 1;
        let s = vec![ONE; n];
        let got = forward_transform(&s, dt, w0, z, 1e-12).unwrap();
        let k = z - w0;
        let exact = -I * ((I * k * t_end).exp() - 1.0) / (I * k);
        assert!((got.value - exact).norm() < 1e-12);
        assert!((got.value - 1.0 / (z - w0)).norm() < 1e-12);
    }

    #[test]
    fn forward_pure_phase_and_decay() {
        let (w0, g) = (2.0, 0.3);
        let dt = 0.01;
        let n = 2001;
        let z = C64::new(w0, 2.0);
        // Interaction-picture amplitude e^{-γt} under shift ω₀.
        let s: Vec<C64> = (0..n).map(|j| C64::new((-g * j as f64 * dt).exp(), 0.0)).collect();
        let got = forward_transform(&s, dt, w0, z, 1e-10).unwrap();
        let exact = 1.0 / (z - w0 + I * g);
        assert!((got.value - exact).norm() < 1e-5 * exact.norm());
        // The same amplitude carrying its own phase, unshifted.
        let p: Vec<C64> = (0..n)
            .map(|j| (C64::new(-g, -w0) * (j as f64 * dt)).exp())
            .collect();
        let got = forward_transform(&p, dt, 0.0, z, 1e-10).unwrap();
        assert!((got.value - exact).norm() < 1e-4 * exact.norm());
        let p: Vec<C64> = (0..n).map(|j| C64::new(0.0, -w0 * j as f64 * dt).exp()).collect();
        let got = forward_transform(&p, dt, 0.0, z, 1e-10).unwrap();
        assert!((got.value - 1.0 / (z - w0)).norm() < 1e-4);
    }

    #[test]
    fn forward_reports_truncation() {
        let s = vec![ONE; 11];
        assert!(matches!(
            forward_transform(&s, 0.1, 0.0, C64::new(0.0, 0.1), 1e-6),
            Err(Error::Truncation { .. })
        ));
        assert!(matches!(
            forward_transform(&s, 0.1, 0.0, C64::new(0.0, 0.0), 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn invert_simple_pole_spec_grid() {
        let w0 = 0.8;
        let grid = ContourGrid::new(w0 - 50.0, w0 + 50.0, 20_000, 1e-4).unwrap();
        for t in [0.5, 3.0, 10.0] {
            let got = invert(|z| 1.0 / (z - w0), &grid, t).unwrap();
            let exact = C64::new(0.0, -w0 * t).exp();
            assert!((got - exact).norm() <= 1e-3, "t={t}: {got}");
        }
    }

    #[test]
    fn invert_two_pole_function() {
        // Not a single pole, so the quadrature carries real weight.
        let (a, b) = (C64::new(0.5, -0.2), C64::new(-0.4, -0.35));
        let f = |z: C64| 0.6 / (z - a) + 0.4 / (z - b);
        let grid = ContourGrid::new(-60.0, 60.0, 60_000, 0.05).unwrap();
        for t in [0.0, 1.0, 4.0, 9.0] {
            let got = invert(f, &grid, t).unwrap();
            let exact = 0.6 * (-I * a * t).exp() + 0.4 * (-I * b * t).exp();
            let scale = if t == 0.0 { 1.0 } else { exact.norm() };
            assert!((got - exact).norm() <= 1e-3 * scale.max(1e-2), "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn invert_decaying_pole_and_initial_value() {
        let (w0, g) = (1.0, 0.2);
        let grid = ContourGrid::new(w0 - 50.0, w0 + 50.0, 20_000, 0.05).unwrap();
        let f = |z: C64| 1.0 / (z - w0 + I * g);
        let got = invert(f, &grid, 3.0).unwrap();
        let exact = (C64::new(-g, -w0) * 3.0).exp();
        assert!((got - exact).norm() < 1e-3);
        let at0 = invert(|z| 1.0 / (z - w0), &grid, 0.0).unwrap();
        assert!((at0 - 1.0).norm() < 1e-3);
    }

    #[test]
    fn clenshaw_curtis_rule() {
        let a = C64::new(0.5, -0.3);
        let b = C64::new(0.1, -0.6);
        let f = |z: C64| 1.0 / ((z - a) * (z - b)) * (a - b);
        let grid = ContourGrid::new(-40.0, 40.0, 4001, 0.2)
            .unwrap()
            .with_rule(ContourRule::ClenshawCurtis)
            .with_window_tolerance(1e-3);
        let t = 2.0;
        let got = invert(f, &grid, t).unwrap();
        let exact = (-I * a * t).exp() - (-I * b * t).exp();
        assert!((got - exact).norm() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn window_too_narrow_is_reported() {
        // Residual of a broad double pole is not negligible at the edges of a tiny window.
        let f = |z: C64| 1.0 / ((z - 0.2 + 3.0 * I) * (z + 0.4 + 0.5 * I)) + 0.3 / (z - 5.0 + I);
        let grid = ContourGrid::new(-1.0, 1.0, 200, 0.05).unwrap();
        assert!(matches!(invert(f, &grid, 1.0), Err(Error::WindowTooNarrow { .. })));
    }

    #[test]
    fn round_trip_decaying_exponential() {
        let (w0, g) = (0.5, 0.4);
        let dt = 0.01;
        let n = (80.0 / g / dt) as usize;
        let s: Vec<C64> = (0..n)
            .map(|j| (C64::new(-g, -w0) * (j as f64 * dt)).exp())
            .collect();
        let grid = ContourGrid::new(w0 - 40.0, w0 + 40.0, 16_001, 0.1)
            .unwrap();
        let f = |z: C64| {
            forward_transform(&s, dt, 0.0, z, 1e-8).unwrap().value
        };
        let times: Vec<f64> = (0..=10).map(|j| j as f64 * 0.5 / g).collect();
        let back = invert_series(f, &grid, &times).unwrap();
        for (t, v) in times.iter().zip(back) {
            let exact = (C64::new(-g, -w0) * *t).exp();
            assert!((v - exact).norm() <= 1e-3, "t={t}: {v} vs {exact}");
        }
    }

    #[test]
    fn conjugation_relation() {
        let a = C64::new(0.7, -0.25);
        let b = C64::new(-0.3, -0.1);
        let f = |z: C64| 0.5 / (z - a) + 0.5 / ((z - b) * (z - b) + 1.0);
        let g = |z: C64| -f(-z.conj()).conj();
        let grid = ContourGrid::new(-50.0, 50.0, 40_001, 0.05)
            .unwrap()
            .with_window_tolerance(1e-3);
        for t in [0.5, 2.5] {
            let x = invert(f, &grid, t).unwrap();
            let y = invert(g, &grid, t).unwrap();
            assert!((x.conj() - y).norm() < 1e-3, "{x} {y}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn forward_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, w in -1.0f64..1.0) {
            let dt = 0.05;
            let n = 1200;
            let f1: Vec<C64> = (0..n).map(|j| C64::new(0.0, -w * j as f64 * dt).exp()).collect();
            let f2: Vec<C64> = (0..n).map(|j| C64::new(-0.1 * j as f64 * dt, 0.0).exp()).collect();
            let comb: Vec<C64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let z = C64::new(0.3, 1.0);
            let l = forward_transform(&comb, dt, 0.0, z, 1e-6).unwrap().value;
            let r = a * forward_transform(&f1, dt, 0.0, z, 1e-6).unwrap().value
                + b * forward_transform(&f2, dt, 0.0, z, 1e-6).unwrap().value;
            prop_assert!((l - r).norm() < 1e-12);
        }

        #[test]
        fn invert_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let p = C64::new(0.4, -0.3);
            let q = C64::new(-0.2, -0.5);
            let grid = ContourGrid::new(-30.0, 30.0, 6001, 0.1)
                .unwrap()
                .with_window_tolerance(1e-3);
            let t = 1.7;
            let l = invert(|z| a / (z - p) + b / ((z - q) * (z - p)), &grid, t).unwrap();
            let r = a * invert(|z| 1.0 / (z - p), &grid, t).unwrap()
                + b * invert(|z| 1.0 / ((z - q) * (z - p)), &grid, t).unwrap();
            prop_assert!((l - r).norm() < 1e-3);
        }
    }
}
