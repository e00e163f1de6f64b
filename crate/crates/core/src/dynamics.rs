//! Bitemporal evolution, density-matrix extraction, conservation audits and
//! the closed-form reference channels.
//!
//! With `S(τ) = D(τ)W′₀(τ)`, `D(τ) = diag(e^{−iω_k τ})` and
//! `ζ(t,t′) = D(t) ξ(t,t′) D(t′)†`, the bitemporal equation becomes
//!
//! ```text
//! ζ(t,t′) = S(t) ρ₀ S(t′)† + ∫₀ᵗds ∫₀^{t′}ds′ S(t−s) X(s,s′) S(t′−s′)†,
//! X(s,s′)_{ll′} = Σ_{mm′} c_(m′l′)(lm)(s′,s) ζ(s,s′)_{mm′},
//! ```
//!
//! which only needs dense matrix products. The density matrix is
//! `ρ(t) = ξ(t,t) = D(t)† ζ(t,t) D(t)`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kraus::{KrausZero, SystemSpec};
use crate::laplace::{invert_series, ContourGrid};
use crate::matrix::{gemm_acc, gemm_adj_acc, CMatrix, C64, I, ONE, ZERO};
use crate::reservoir::{ScalarKernel, SpectralDensity};

#[derive(Clone, Copy, Debug)]
pub struct BitemporalOptions {
    /// Memory band in steps: `X(s,s′)` is dropped for `|s−s′| > band·dt`.
    /// `None` keeps the full history.
    pub band: Option<usize>,
    /// Per-node fixed-point tolerance for the implicit self term.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BitemporalOptions {
    fn default() -> Self {
        Self {
            band: None,
            tol: 1e-12,
            max_iters: 100,
        }
    }
}

/// `ζ(t_i, t_j)` on the band `0 ≤ j − i ≤ band`; the rest follows from
/// Hermitian symmetry or vanishes with the memory cut.
#[derive(Clone, Debug)]
pub struct BitemporalState {
    pub dt: f64,
    pub n_steps: usize,
    pub band: usize,
    pub dim: usize,
    energies: Vec<f64>,
    zeta: Vec<C64>,
    /// Largest final change of the per-node fixed point.
    pub max_node_change: f64,
    /// `|c(band·dt)| / |c(0)|`: size of the kernel where memory is cut.
    pub band_kernel_tail: f64,
}

impl BitemporalState {
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    fn offset(&self, i: usize, dd: usize) -> usize {
        (i * (self.band + 1) + dd) * self.dim * self.dim
    }

    /// `ζ(t_i, t_j)`, or `None` outside the stored band.
    pub fn zeta(&self, i: usize, j: usize) -> Option<CMatrix> {
        let d2 = self.dim * self.dim;
        let (a, b, adj) = if j >= i { (i, j, false) } else { (j, i, true) };
        if b - a > self.band || b > self.n_steps {
            return None;
        }
        let o = self.offset(a, b - a);
        let mut m = CMatrix::zeros(self.dim);
        m.as_mut_slice().copy_from_slice(&self.zeta[o..o + d2]);
        Some(if adj { m.adjoint() } else { m })
    }

    /// `ξ(t_i, t_j) = D(t_i)† ζ D(t_j)`.
    pub fn xi(&self, i: usize, j: usize) -> Option<CMatrix> {
        let z = self.zeta(i, j)?;
        let (ti, tj) = (self.time(i), self.time(j));
        let mut out = z;
        for k in 0..self.dim {
            for kp in 0..self.dim {
                let ph = C64::new(0.0, self.energies[k] * ti - self.energies[kp] * tj).exp();
                out[(k, kp)] *= ph;
            }
        }
        Some(out)
    }
}

fn check_density(rho: &CMatrix, field: &str) -> Result<()> {
    let ah = rho.anti_hermitian_norm();
    if ah > 1e-10 {
        return Err(Error::NonHermitian(ah));
    }
    if (rho.trace() - 1.0).norm() > 1e-10 {
        return Err(invalid(field, "trace must equal 1"));
    }
    if rho.hermitian_eigenvalues()[0] < -1e-12 {
        return Err(invalid(field, "must be positive semidefinite"));
    }
    Ok(())
}

/// Every slot `c_(kl)(mn)` must have the partner `c_(nm)(lk)` with equal weight,
/// which is what makes `ζ(t′,t) = ζ(t,t′)†`.
fn check_pairing(sys: &SystemSpec) -> Result<()> {
    for s in &sys.kernel.slots {
        let partner = sys.kernel.weight(s.n, s.m, s.l, s.k);
        if (partner - s.weight).abs() > 1e-14 * s.weight.abs().max(1.0) {
            return Err(Error::Constraint(format!(
                "slot ({},{})({},{}) lacks its Hermitian partner ({},{})({},{})",
                s.k + 1,
                s.l + 1,
                s.m + 1,
                s.n + 1,
                s.n + 1,
                s.m + 1,
                s.l + 1,
                s.k + 1
            )));
        }
    }
    Ok(())
}

pub fn solve_bitemporal(
    sys: &SystemSpec,
    w: &KrausZero,
    rho0: &CMatrix,
    t_max: f64,
    dt: f64,
) -> Result<BitemporalState> {
    solve_bitemporal_with(sys, w, rho0, t_max, dt, &BitemporalOptions::default())
}

/// Discretization shared by the implicit solver and the Neumann series.
struct Prepared {
    n: usize,
    band: usize,
    d: usize,
    /// `S_k = D(t_k) W_k`, row-major, one block per step.
    s_tab: Vec<C64>,
    ctab: Vec<C64>,
    /// `(dst, src, weight)`: X_{l l'} += w c ζ_{m m'} for slot c_(m'l')(lm).
    maps: Vec<(usize, usize, f64)>,
    band_kernel_tail: f64,
}

impl Prepared {
    fn new(
        sys: &SystemSpec,
        w: &KrausZero,
        rho0: &CMatrix,
        t_max: f64,
        dt: f64,
        band: Option<usize>,
    ) -> Result<Self> {
        if !(dt > 0.0 && t_max >= 0.0) {
            return Err(invalid("numerics.dt", "must be > 0"));
        }
        let n = (t_max / dt).round() as usize;
        if (w.dt - dt).abs() > 1e-12 * dt || w.len() < n + 1 {
            return Err(Error::GridMismatch(format!(
                "Kraus matrix has dt = {} and {} points, need dt = {dt} and {} points",
                w.dt,
                w.len(),
                n + 1
            )));
        }
        let d = sys.dim();
        if rho0.dim() != d || w.dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "system dimension {d}, initial state {}, Kraus matrix {}",
                rho0.dim(),
                w.dim()
            )));
        }
        check_density(rho0, "initial_state.rho")?;
        check_pairing(sys)?;

        let band = band.unwrap_or(n).min(n);
        let d2 = d * d;
        let e = &sys.energies;
        let mut s_tab = vec![ZERO; (n + 1) * d2];
        for k in 0..=n {
            let t = k as f64 * dt;
            let wk = w.values[k].as_slice();
            for r in 0..d {
                let ph = C64::new(0.0, -e[r] * t).exp();
                for c in 0..d {
                    s_tab[k * d2 + r * d + c] = ph * wk[r * d + c];
                }
            }
        }
        let ctab: Vec<C64> = if sys.kernel.is_zero() {
            vec![ZERO; band + 1]
        } else {
            (0..=band)
                .map(|k| sys.kernel.scalar.time(k as f64 * dt, 0.0))
                .collect::<Result<_>>()?
        };
        let band_kernel_tail = if ctab[0].norm() > 0.0 && band < n {
            sys.kernel.scalar.time(band as f64 * dt, 0.0)?.norm() / ctab[0].norm()
        } else {
            0.0
        };
        let maps = sys
            .kernel
            .slots
            .iter()
            .map(|s| (s.m * d + s.l, s.n * d + s.k, s.weight))
            .collect();
        Ok(Self {
            n,
            band,
            d,
            s_tab,
            ctab,
            maps,
            band_kernel_tail,
        })
    }

    fn s_at(&self, k: usize) -> &[C64] {
        let d2 = self.d * self.d;
        &self.s_tab[k * d2..(k + 1) * d2]
    }

    fn x_of(&self, z: &[C64], lag: usize) -> Vec<C64> {
        let mut x = vec![ZERO; self.d * self.d];
        let c = self.ctab[lag];
        for &(dst, src, wgt) in &self.maps {
            x[dst] += wgt * c * z[src];
        }
        x
    }
}

/// Product-trapezoid weight of node `a` in `∫₀^{t_i}`.
fn trap(dt: f64, i: usize, a: usize) -> f64 {
    if i == 0 {
        0.0
    } else if a == 0 || a == i {
        0.5 * dt
    } else {
        dt
    }
}

pub fn solve_bitemporal_with(
    sys: &SystemSpec,
    w: &KrausZero,
    rho0: &CMatrix,
    t_max: f64,
    dt: f64,
    opts: &BitemporalOptions,
) -> Result<BitemporalState> {
    let pr = Prepared::new(sys, w, rho0, t_max, dt, opts.band)?;
    let (n, band, d) = (pr.n, pr.band, pr.d);
    let wd = band + 1;
    let d2 = d * d;
    let s_at = |k: usize| pr.s_at(k);
    let band_kernel_tail = pr.band_kernel_tail;

    let mut zeta = vec![ZERO; (n + 1) * wd * d2];
    let mut xb = vec![ZERO; (n + 1) * wd * d2];
    let mut xh = vec![ZERO; (n + 1) * wd * d2];
    let off = |i: usize, dd: usize| (i * wd + dd) * d2;
    let q = |i: usize, a: usize| trap(dt, i, a);
    let mut max_change: f64 = 0.0;
    let rho = rho0.as_slice();

    for i in 0..=n {
        let jmax = (i + band).min(n);
        // P[b] = Σ_{a<i} q(i,a) S_{i−a} X(a,b)
        let p: Vec<Option<Vec<C64>>> = (0..=jmax)
            .into_par_iter()
            .map(|b| {
                if i == 0 {
                    return None;
                }
                let lo = b.saturating_sub(band);
                let hi = (b + band).min(i - 1);
                if lo > hi {
                    return None;
                }
                let mut out = vec![ZERO; d2];
                for a in lo..=hi {
                    // X(a,b) for b ≥ a is stored directly, X(a,b) = X(b,a)† otherwise.
                    let x = if b >= a {
                        &xb[off(a, b - a)..off(a, b - a) + d2]
                    } else {
                        &xh[off(b, a - b)..off(b, a - b) + d2]
                    };
                    gemm_acc(&mut out, s_at(i - a), x, d, C64::new(q(i, a), 0.0));
                }
                Some(out)
            })
            .collect();

        let mut sr = vec![ZERO; d2];
        gemm_acc(&mut sr, s_at(i), rho, d, ONE);
        let qii = q(i, i);

        // Everything in ζ(i, j) that does not involve the current row.
        let heavy: Vec<Vec<C64>> = (i..=jmax)
            .into_par_iter()
            .map(|j| {
                let mut out = vec![ZERO; d2];
                gemm_adj_acc(&mut out, &sr, s_at(j), d, ONE);
                for (b, pb) in p.iter().enumerate().take(j + 1) {
                    if let Some(pb) = pb {
                        let qb = q(j, b);
                        if qb != 0.0 {
                            gemm_adj_acc(&mut out, pb, s_at(j - b), d, C64::new(qb, 0.0));
                        }
                    }
                }
                if i > 0 {
                    for b in i.saturating_sub(band)..i {
                        let r = off(b, i - b)..off(b, i - b) + d2;
                        let qb = q(j, b) * qii;
                        if qb != 0.0 {
                            gemm_adj_acc(&mut out, &xh[r], s_at(j - b), d, C64::new(qb, 0.0));
                        }
                    }
                }
                out
            })
            .collect();

        for j in i..=jmax {
            let mut base = heavy[j - i].clone();
            if i > 0 {
                for b in i..j {
                    let r = off(i, b - i)..off(i, b - i) + d2;
                    let qb = q(j, b) * qii;
                    gemm_adj_acc(&mut base, &xb[r], s_at(j - b), d, C64::new(qb, 0.0));
                }
            }
            let alpha = qii * q(j, j);
            let x_of = |z: &[C64]| pr.x_of(z, j - i);
            let mut cur = base.clone();
            let mut iters = 0;
            if alpha != 0.0 && !pr.maps.is_empty() {
                loop {
                    iters += 1;
                    let x = x_of(&cur);
                    let mut change: f64 = 0.0;
                    for k in 0..d2 {
                        let next = base[k] + alpha * x[k];
                        change = change.max((next - cur[k]).norm());
                        cur[k] = next;
                    }
                    if change <= opts.tol {
                        max_change = max_change.max(change);
                        break;
                    }
                    if iters >= opts.max_iters {
                        return Err(Error::NonConvergence {
                            step: i * (n + 1) + j,
                            iters,
                            change,
                        });
                    }
                }
            }
            let o = off(i, j - i);
            zeta[o..o + d2].copy_from_slice(&cur);
            let x = x_of(&cur);
            xb[o..o + d2].copy_from_slice(&x);
            for r in 0..d {
                for c in 0..d {
                    xh[o + c * d + r] = x[r * d + c].conj();
                }
            }
        }
    }

    Ok(BitemporalState {
        dt,
        n_steps: n,
        band,
        dim: d,
        energies: sys.energies.clone(),
        zeta,
        max_node_change: max_change,
        band_kernel_tail,
    })
}

/// Terms `ζ⁽⁰⁾, …, ζ⁽ʳᵐᵃˣ⁾` of the iterated solution `ζ = Σ_r Kʳ ζ⁽⁰⁾`, where
/// `ζ⁽⁰⁾(t,t′) = S(t)ρ₀S(t′)†` and `K` is the discretized double memory
/// integral. Their sum converges to the implicit solution; when the kernel
/// only lowers an excitation number the series terminates.
pub fn neumann_terms(
    sys: &SystemSpec,
    w: &KrausZero,
    rho0: &CMatrix,
    t_max: f64,
    dt: f64,
    r_max: usize,
    band: Option<usize>,
) -> Result<Vec<BitemporalState>> {
    let pr = Prepared::new(sys, w, rho0, t_max, dt, band)?;
    let (n, band, d) = (pr.n, pr.band, pr.d);
    let wd = band + 1;
    let d2 = d * d;
    let off = |i: usize, dd: usize| (i * wd + dd) * d2;
    let q = |i: usize, a: usize| trap(dt, i, a);
    let wrap = |zeta: Vec<C64>| BitemporalState {
        dt,
        n_steps: n,
        band,
        dim: d,
        energies: sys.energies.clone(),
        zeta,
        max_node_change: 0.0,
        band_kernel_tail: pr.band_kernel_tail,
    };

    let rows = |f: &(dyn Fn(usize) -> Vec<C64> + Sync)| -> Vec<C64> {
        (0..=n).into_par_iter().map(f).collect::<Vec<_>>().concat()
    };
    let first = rows(&|i| {
        let mut row = vec![ZERO; wd * d2];
        let mut sr = vec![ZERO; d2];
        gemm_acc(&mut sr, pr.s_at(i), rho0.as_slice(), d, ONE);
        for j in i..=(i + band).min(n) {
            let o = (j - i) * d2;
            gemm_adj_acc(&mut row[o..o + d2], &sr, pr.s_at(j), d, ONE);
        }
        row
    });
    let mut terms = vec![wrap(first)];
    for _ in 0..r_max {
        let prev = &terms.last().expect("non-empty").zeta;
        let mut xb = vec![ZERO; prev.len()];
        let mut xh = vec![ZERO; prev.len()];
        for i in 0..=n {
            for dd in 0..wd.min(n - i + 1) {
                let o = off(i, dd);
                let x = pr.x_of(&prev[o..o + d2], dd);
                for r in 0..d {
                    for c in 0..d {
                        xb[o + r * d + c] = x[r * d + c];
                        xh[o + c * d + r] = x[r * d + c].conj();
                    }
                }
            }
        }
        let x_at = |a: usize, b: usize| -> &[C64] {
            if b >= a {
                &xb[off(a, b - a)..off(a, b - a) + d2]
            } else {
                &xh[off(b, a - b)..off(b, a - b) + d2]
            }
        };
        let next = rows(&|i| {
            let mut row = vec![ZERO; wd * d2];
            if i == 0 {
                return row;
            }
            let jmax = (i + band).min(n);
            let mut p = vec![ZERO; (jmax + 1) * d2];
            for b in 0..=jmax {
                let lo = b.saturating_sub(band);
                let hi = (b + band).min(i);
                for a in lo..=hi {
                    gemm_acc(
                        &mut p[b * d2..(b + 1) * d2],
                        pr.s_at(i - a),
                        x_at(a, b),
                        d,
                        C64::new(q(i, a), 0.0),
                    );
                }
            }
            for j in i..=jmax {
                let o = (j - i) * d2;
                for b in 0..=j {
                    gemm_adj_acc(
                        &mut row[o..o + d2],
                        &p[b * d2..(b + 1) * d2],
                        pr.s_at(j - b),
                        d,
                        C64::new(q(j, b), 0.0),
                    );
                }
            }
            row
        });
        terms.push(wrap(next));
    }
    Ok(terms)
}

/// Node-wise sum of Neumann terms.
pub fn sum_terms(terms: &[BitemporalState]) -> Option<BitemporalState> {
    let mut out = terms.first()?.clone();
    for t in &terms[1..] {
        for (a, b) in out.zeta.iter_mut().zip(&t.zeta) {
            *a += b;
        }
    }
    Some(out)
}

#[derive(Clone, Debug)]
pub struct DensityTrajectory {
    pub times: Vec<f64>,
    /// Hermitized `ρ(t)`.
    pub matrices: Vec<CMatrix>,
    /// `‖(ρ−ρ†)/2‖` before Hermitization, per time.
    pub anti_hermitian: Vec<f64>,
}

impl DensityTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, CMatrix::dim)
    }

    pub fn max_anti_hermitian(&self) -> f64 {
        self.anti_hermitian.iter().copied().fold(0.0, f64::max)
    }

    pub fn population(&self, k: usize) -> Vec<f64> {
        self.matrices.iter().map(|m| m[(k, k)].re).collect()
    }

    /// Columns `t, re_k_l, im_k_l, ..., trace_error, min_eig` (1-based labels).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dim();
        let mut head = String::from("t");
        for k in 1..=d {
            for l in 1..=d {
                head.push_str(&format!(",re_{k}_{l},im_{k}_{l}"));
            }
        }
        head.push_str(",trace_error,min_eig");
        writeln!(out, "{head}")?;
        for (t, m) in self.times.iter().zip(&self.matrices) {
            let mut line = format!("{t:.17e}");
            for z in m.as_slice() {
                line.push_str(&format!(",{:.17e},{:.17e}", z.re, z.im));
            }
            let tr = (m.trace() - 1.0).norm();
            line.push_str(&format!(",{tr:.17e},{:.17e}", m.hermitian_eigenvalues()[0]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// `ρ(t_i) = ξ(t_i, t_i)`.
pub fn extract_density(state: &BitemporalState) -> DensityTrajectory {
    let mut times = Vec::with_capacity(state.len());
    let mut matrices = Vec::with_capacity(state.len());
    let mut anti = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let rho = state.xi(i, i).expect("diagonal is always stored");
        times.push(state.time(i));
        anti.push(rho.anti_hermitian_norm());
        matrices.push(rho.hermitize());
    }
    DensityTrajectory {
        times,
        matrices,
        anti_hermitian: anti,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AuditTolerances {
    pub trace: f64,
    pub positivity: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            trace: 1e-6,
            positivity: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AuditReport {
    pub max_trace_error: f64,
    pub trace_error_time: f64,
    pub min_eigenvalue: f64,
    pub min_eigenvalue_time: f64,
    /// Time of the larger violation relative to its tolerance.
    pub worst_time: f64,
    /// Spectra were checked every `eigen_stride` steps.
    pub eigen_stride: usize,
    pub pass: bool,
}

/// Spectra are computed every step for `dim ≤ 64` and every tenth step beyond.
pub fn audit_conservation(traj: &DensityTrajectory, tol: &AuditTolerances) -> AuditReport {
    let stride = if traj.dim() <= 64 { 1 } else { 10 };
    let mut rep = AuditReport {
        max_trace_error: 0.0,
        trace_error_time: traj.times.first().copied().unwrap_or(0.0),
        min_eigenvalue: f64::INFINITY,
        min_eigenvalue_time: traj.times.first().copied().unwrap_or(0.0),
        worst_time: 0.0,
        eigen_stride: stride,
        pass: true,
    };
    for (i, (t, m)) in traj.times.iter().zip(&traj.matrices).enumerate() {
        let tr = (m.trace() - 1.0).norm();
        if tr > rep.max_trace_error {
            rep.max_trace_error = tr;
            rep.trace_error_time = *t;
        }
        if i % stride == 0 || i + 1 == traj.len() {
            let lo = m.hermitian_eigenvalues()[0];
            if lo < rep.min_eigenvalue {
                rep.min_eigenvalue = lo;
                rep.min_eigenvalue_time = *t;
            }
        }
    }
    if traj.is_empty() {
        rep.min_eigenvalue = 0.0;
    }
    let trace_excess = rep.max_trace_error / tol.trace;
    let pos_excess = (-rep.min_eigenvalue).max(0.0) / tol.positivity;
    rep.worst_time = if trace_excess >= pos_excess {
        rep.trace_error_time
    } else {
        rep.min_eigenvalue_time
    };
    rep.pass = rep.max_trace_error <= tol.trace && rep.min_eigenvalue >= -tol.positivity;
    rep
}

/// Upper-level amplitude `W′₀(t)_(2)(2)` of a rotating-wave two-level atom
/// (levels `ω₁ < ω₂`) at zero temperature.
///
/// A Lorentzian is treated as untruncated, which turns the resolvent into a
/// quadratic; other densities go through the contour inverter.
pub fn wigner_weisskopf_amplitude(
    sd: &SpectralDensity,
    omega1: f64,
    omega2: f64,
    times: &[f64],
) -> Result<Vec<C64>> {
    sd.validate()?;
    if !(omega1 < omega2) {
        return Err(invalid("system.energies", "need omega1 < omega2"));
    }
    if sd.is_zero() {
        return Ok(vec![ONE; times.len()]);
    }
    if let SpectralDensity::Lorentzian {
        strength,
        center,
        width,
    } = *sd
    {
        // ĉ(y) = γ/(y − ω_c + iΛ) on the upper half plane.
        let a = C64::new(omega1 + center, -width);
        let b = -(a + omega2);
        let c = a * omega2 - strength;
        let disc = (b * b - 4.0 * c).sqrt();
        let zp = (-b + disc) / 2.0;
        let zm = (-b - disc) / 2.0;
        return Ok(times
            .iter()
            .map(|&t| {
                let amp = (zp - a) / (zp - zm) * (-I * zp * t).exp()
                    + (zm - a) / (zm - zp) * (-I * zm * t).exp();
                amp * C64::new(0.0, omega2 * t).exp()
            })
            .collect());
    }
    let t_max = times.iter().copied().fold(0.0, f64::max).max(1.0);
    let eps = 1.0 / t_max;
    let reach = sd.effective_cutoff(1e-8) + (omega2 - omega1).abs();
    let half_width = (reach + 50.0 * sd.spectral_scale()).max(40.0 / t_max) + 1.0;
    // Band edges of the density give logarithmic features of width ~ε.
    let h = (2.0 * PI / (20.0 * t_max)).min(eps / 10.0);
    let n = ((2.0 * half_width / h).ceil() as usize + 1).max(16);
    let grid = ContourGrid::new(omega2 - half_width, omega2 + half_width, n, eps)?;
    let kernel = ScalarKernel::zero_temperature(sd.clone());
    let mut first_err = None;
    let vals = invert_series(
        |z| match kernel.laplace(z - omega1) {
            Ok(c) => 1.0 / (z - omega2 - c),
            Err(e) => {
                first_err.get_or_insert(e);
                ZERO
            }
        },
        &grid,
        times,
    )?;
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(vals
        .into_iter()
        .zip(times)
        .map(|(v, &t)| v * C64::new(0.0, omega2 * t).exp())
        .collect())
}

/// Excited population `|W′₀(t)_(2)(2)|²`.
pub fn wigner_weisskopf(
    sd: &SpectralDensity,
    omega1: f64,
    omega2: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    Ok(wigner_weisskopf_amplitude(sd, omega1, omega2, times)?
        .into_iter()
        .map(|a| a.norm_sqr())
        .collect())
}

/// Amplitude-damping Kraus pair `(M, N)` at time `t`.
pub fn markovian_kraus(gamma: f64, omega_bar: f64, t: f64) -> Result<(CMatrix, CMatrix)> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("markov.gamma", "must be finite and >= 0"));
    }
    let decay = (-gamma * t).exp();
    let mut m = CMatrix::identity(2);
    m[(1, 1)] = decay * C64::new(0.0, omega_bar * t).exp();
    let mut nn = CMatrix::zeros(2);
    nn[(0, 1)] = C64::new((1.0 - decay * decay).max(0.0).sqrt(), 0.0);
    Ok((m, nn))
}

pub fn markovian_channel(gamma: f64, omega_bar: f64, rho0: &CMatrix, t: f64) -> Result<CMatrix> {
    if rho0.dim() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "amplitude damping acts on 2x2 states, got {}",
            rho0.dim()
        )));
    }
    let (m, nn) = markovian_kraus(gamma, omega_bar, t)?;
    Ok(&(&(&m * rho0) * &m.adjoint()) + &(&(&nn * rho0) * &nn.adjoint()))
}

/// `‖M†M + N†N − I‖_max`.
pub fn channel_completeness(gamma: f64, omega_bar: f64, t: f64) -> Result<f64> {
    let (m, nn) = markovian_kraus(gamma, omega_bar, t)?;
    let sum = &(&m.adjoint() * &m) + &(&nn.adjoint() * &nn);
    Ok(sum.max_abs_diff(&CMatrix::identity(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kraus::solve_time_domain;
    use crate::reservoir::{kernel_table, IndexRule};
    use proptest::prelude::*;

    fn two_level(sd: SpectralDensity, w1: f64, w2: f64) -> SystemSpec {
        let k = kernel_table(ScalarKernel::zero_temperature(sd), &IndexRule::two_level()).unwrap();
        SystemSpec::new(vec![w1, w2], k).unwrap()
    }

    fn excited() -> CMatrix {
        CMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]])
    }

    fn mixed() -> CMatrix {
        CMatrix::from_rows(&[
            vec![C64::new(0.4, 0.0), C64::new(0.2, 0.3)],
            vec![C64::new(0.2, -0.3), C64::new(0.6, 0.0)],
        ])
    }

    #[test]
    fn zero_kernel_keeps_initial_state() {
        let sys = two_level(SpectralDensity::zero(), 0.0, 1.3);
        let w = solve_time_domain(&sys, 2.0, 0.1).unwrap();
        let st = solve_bitemporal(&sys, &w, &mixed(), 2.0, 0.1).unwrap();
        for i in 0..st.len() {
            for j in 0..st.len() {
                assert!(st.xi(i, j).unwrap().max_abs_diff(&mixed()) < 1e-14);
            }
        }
        let traj = extract_density(&st);
        assert!(traj.matrices.iter().all(|m| m.max_abs_diff(&mixed()) < 1e-14));
        let rep = audit_conservation(&traj, &AuditTolerances::default());
        assert!(rep.pass && rep.max_trace_error < 1e-14);
    }

    #[test]
    fn excited_population_is_squared_amplitude() {
        let sd = SpectralDensity::flat(0.03, 0.0, 8.0).unwrap();
        let sys = two_level(sd, 0.0, 4.0);
        let (t, dt) = (6.0, 0.02);
        let w = solve_time_domain(&sys, t, dt).unwrap();
        let st = solve_bitemporal(&sys, &w, &excited(), t, dt).unwrap();
        assert!(st.max_node_change <= 1e-10);
        let traj = extract_density(&st);
        assert_eq!(traj.matrices[0], excited());
        for (j, m) in traj.matrices.iter().enumerate() {
            let w22 = w.values[j][(1, 1)].norm_sqr();
            assert!((m[(1, 1)].re - w22).abs() < 1e-13);
            assert!((m[(0, 0)].re - (1.0 - w22)).abs() < 1e-4, "t={} {}", traj.times[j], m[(0, 0)].re - 1.0 + w22);
        }
        assert!(traj.max_anti_hermitian() <= 1e-9);
    }

    #[test]
    fn trace_error_is_second_order() {
        let sd = SpectralDensity::flat(0.05, 0.0, 6.0).unwrap();
        let sys = two_level(sd, 0.0, 3.0);
        let err = |dt: f64| {
            let w = solve_time_domain(&sys, 4.0, dt).unwrap();
            let st = solve_bitemporal(&sys, &w, &mixed(), 4.0, dt).unwrap();
            audit_conservation(&extract_density(&st), &AuditTolerances::default()).max_trace_error
        };
        let (e1, e2) = (err(0.04), err(0.02));
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "{e1} {e2} {ratio}");
    }

    #[test]
    fn weak_flat_spectrum_matches_amplitude_damping() {
        let gamma: f64 = 0.1;
        let sd = SpectralDensity::flat(gamma / PI, 0.0, 20.0).unwrap();
        let sys = two_level(sd, 0.0, 10.0);
        let (t, dt) = (1.5 / gamma, 0.05);
        let w = solve_time_domain(&sys, t, dt).unwrap();
        let st = solve_bitemporal(&sys, &w, &mixed(), t, dt).unwrap();
        let traj = extract_density(&st);
        let mut worst: f64 = 0.0;
        for (tt, m) in traj.times.iter().zip(&traj.matrices) {
            let oracle = markovian_channel(gamma, 0.0, &mixed(), *tt).unwrap();
            worst = worst.max(m.max_abs_diff(&oracle));
        }
        assert!(worst <= 0.05 * 0.6, "{worst}");
        let rep = audit_conservation(&traj, &AuditTolerances { trace: 1e-3, positivity: 1e-10 });
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn cascade_stays_positive() {
        let sd = SpectralDensity::lorentzian(0.4, 2.0, 0.8).unwrap();
        let rule = IndexRule::new().with(1, 0, 0, 1, 1.0).with(2, 1, 1, 2, 0.7);
        let k = kernel_table(ScalarKernel::zero_temperature(sd), &rule).unwrap();
        let sys = SystemSpec::new(vec![0.0, 2.0, 4.0], k).unwrap();
        let rho0 = CMatrix::from_rows(&[
            vec![C64::new(0.1, 0.0), ZERO, C64::new(0.05, 0.05)],
            vec![ZERO, C64::new(0.3, 0.0), C64::new(0.1, 0.0)],
            vec![C64::new(0.05, -0.05), C64::new(0.1, 0.0), C64::new(0.6, 0.0)],
        ]);
        let (t, dt) = (8.0, 0.02);
        let w = solve_time_domain(&sys, t, dt).unwrap();
        let st = solve_bitemporal(&sys, &w, &rho0, t, dt).unwrap();
        let traj = extract_density(&st);
        let rep = audit_conservation(&traj, &AuditTolerances { trace: 1e-3, positivity: 1e-10 });
        assert!(rep.pass, "{rep:?}");
        // the ground state only fills up
        let p0 = traj.population(0);
        assert!(p0.last().unwrap() > &0.5);
    }

    #[test]
    fn band_does_not_touch_excited_population() {
        let sd = SpectralDensity::lorentzian(0.5, 400.0, 0.2).unwrap();
        let sys = two_level(sd.clone(), 0.0, 400.0);
        let (t, dt) = (20.0, 0.01);
        let w = solve_time_domain(&sys, t, dt).unwrap();
        let opts = BitemporalOptions { band: Some(20), ..Default::default() };
        let st = solve_bitemporal_with(&sys, &w, &excited(), t, dt, &opts).unwrap();
        let traj = extract_density(&st);
        let ww = wigner_weisskopf(&sd, 0.0, 400.0, &traj.times).unwrap();
        let worst = traj
            .population(1)
            .iter()
            .zip(&ww)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
        assert!(st.band_kernel_tail > 0.9);
        assert!(st.zeta(0, 21).is_none() && st.zeta(21, 0).is_none());
    }

    #[test]
    fn contour_wigner_weisskopf_matches_time_domain() {
        let sd = SpectralDensity::flat(0.04, 0.0, 6.0).unwrap();
        let sys = two_level(sd.clone(), 0.0, 3.0);
        let w = solve_time_domain(&sys, 10.0, 0.01).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
        let amp = wigner_weisskopf_amplitude(&sd, 0.0, 3.0, &times).unwrap();
        for (k, a) in amp.iter().enumerate() {
            let tw = w.values[50 * k][(1, 1)];
            assert!((a - tw).norm() < 1e-3, "t={} {a} {tw}", times[k]);
        }
        assert_eq!(wigner_weisskopf(&SpectralDensity::zero(), 0.0, 1.0, &times).unwrap(), vec![1.0; 21]);
    }

    #[test]
    fn broad_lorentzian_decays_at_golden_rule_rate() {
        let (gamma, lam) = (0.02, 5.0);
        let sd = SpectralDensity::lorentzian(gamma, 10.0, lam).unwrap();
        let rate = 2.0 * gamma / lam;
        let times = [5.0, 10.0, 20.0];
        let p = wigner_weisskopf(&sd, 0.0, 10.0, &times).unwrap();
        for (t, v) in times.iter().zip(p) {
            let fit = -v.ln() / t;
            assert!((fit - rate).abs() <= 0.05 * rate, "{fit} {rate}");
        }
    }

    #[test]
    fn markovian_reference_values() {
        let g: f64 = 0.3;
        assert!(markovian_channel(g, 0.7, &mixed(), 0.0).unwrap().max_abs_diff(&mixed()) < 1e-15);
        let half = markovian_channel(g, 0.7, &excited(), 2f64.ln() / (2.0 * g)).unwrap();
        assert!((half[(1, 1)].re - 0.5).abs() < 1e-15);
        assert!(markovian_kraus(-1.0, 0.0, 1.0).is_err());
        assert!(markovian_channel(g, 0.0, &CMatrix::identity(3), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn channel_is_complete(g in 0.0f64..5.0, w in -3.0f64..3.0, t in 0.0f64..50.0) {
            prop_assert!(channel_completeness(g, w, t).unwrap() < 1e-15);
            let out = markovian_channel(g, w, &mixed(), t).unwrap();
            prop_assert!((out.trace() - 1.0).norm() < 1e-15);
            prop_assert!(out.hermitian_eigenvalues()[0] > -1e-15);
        }
    }

    #[test]
    fn corrupted_trajectory_is_flagged() {
        let mut traj = DensityTrajectory {
            times: (0..10).map(|k| k as f64 * 0.1).collect(),
            matrices: vec![mixed(); 10],
            anti_hermitian: vec![0.0; 10],
        };
        assert!(audit_conservation(&traj, &AuditTolerances::default()).pass);
        traj.matrices[6][(1, 1)] += 0.1;
        let rep = audit_conservation(&traj, &AuditTolerances::default());
        assert!(!rep.pass);
        assert!((rep.trace_error_time - 0.6).abs() < 1e-12 && (rep.worst_time - 0.6).abs() < 1e-12);
        assert!((rep.max_trace_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let traj = DensityTrajectory { times: vec![0.0], matrices: vec![mixed()], anti_hermitian: vec![0.0] };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,re_1_1,im_1_1,re_1_2,im_1_2,re_2_1,im_2_1,re_2_2,im_2_2,trace_error,min_eig"
        );
        assert_eq!(lines.next().unwrap().split(',').count(), 11);
    }

    #[test]
    fn neumann_series_sums_to_implicit_solution() {
        let sd = SpectralDensity::flat(0.08, 0.0, 6.0).unwrap();
        let sys = two_level(sd, 0.0, 3.0);
        let (t, dt) = (5.0, 0.05);
        let w = solve_time_domain(&sys, t, dt).unwrap();
        let opts = BitemporalOptions { band: Some(40), ..Default::default() };
        let full = extract_density(&solve_bitemporal_with(&sys, &w, &mixed(), t, dt, &opts).unwrap());
        let terms = neumann_terms(&sys, &w, &mixed(), t, dt, 1, Some(40)).unwrap();
        assert_eq!(terms.len(), 2);
        let zeroth = extract_density(&terms[0]);
        let summed = extract_density(&sum_terms(&terms).unwrap());
        let e0 = full.matrices.iter().zip(&zeroth.matrices).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        let e1 = full.matrices.iter().zip(&summed.matrices).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        // the two-level kernel only feeds the ground state, so one order is exact
        assert!(e0 > 1e-2 && e1 < 1e-12, "{e0} {e1}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = two_level(SpectralDensity::flat(0.05, 0.0, 6.0).unwrap(), 0.0, 3.0);
        let w = solve_time_domain(&sys, 1.0, 0.1).unwrap();
        assert!(matches!(solve_bitemporal(&sys, &w, &mixed(), 1.0, 0.05), Err(Error::GridMismatch(_))));
        assert!(matches!(solve_bitemporal(&sys, &w, &mixed(), 2.0, 0.1), Err(Error::GridMismatch(_))));
        let mut bad = mixed();
        bad[(0, 1)] = C64::new(0.2, -0.3);
        assert!(matches!(solve_bitemporal(&sys, &w, &bad, 1.0, 0.1), Err(Error::NonHermitian(_))));
        let scaled = mixed().scale(C64::new(2.0, 0.0));
        assert!(matches!(solve_bitemporal(&sys, &w, &scaled, 1.0, 0.1), Err(Error::InvalidParameter { .. })));
        let neg = CMatrix::from_real_rows(&[vec![1.5, 0.0], vec![0.0, -0.5]]);
        assert!(matches!(solve_bitemporal(&sys, &w, &neg, 1.0, 0.1), Err(Error::InvalidParameter { .. })));
        assert!(matches!(
            solve_bitemporal(&sys, &w, &CMatrix::identity(3).scale(C64::new(1.0 / 3.0, 0.0)), 1.0, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
        let rule = IndexRule::new().with(1, 0, 0, 0, 1.0);
        let k = kernel_table(ScalarKernel::zero_temperature(SpectralDensity::flat(0.05, 0.0, 6.0).unwrap()), &rule).unwrap();
        let lopsided = SystemSpec::new(vec![0.0, 3.0], k).unwrap();
        let w2 = solve_time_domain(&lopsided, 1.0, 0.1).unwrap();
        assert!(matches!(solve_bitemporal(&lopsided, &w2, &mixed(), 1.0, 0.1), Err(Error::Constraint(_))));
    }
}
