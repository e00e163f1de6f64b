//! Resonant Jaynes-Cummings atom with radiative damping, in the dressed basis
//! `|ε,n⟩ = ν_n (|1⟩⊗|n+1⟩ + ε|2⟩⊗|n⟩)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;

use rustfft::FftPlanner;
use serde::Serialize;

use crate::dynamics::{
    extract_density, neumann_terms, solve_bitemporal_with, BitemporalOptions, DensityTrajectory,
};
use crate::error::{invalid, Error, Result};
use crate::kraus::{solve_time_domain, SystemSpec};
use crate::matrix::{CMatrix, C64, ZERO};
use crate::quad::{integrate_real, QuadConfig};
use crate::reservoir::{kernel_table, IndexRule, ScalarKernel, SpectralDensity};

/// Dressed state `(ε, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Dressed {
    pub eps: i8,
    pub n: i64,
}

pub fn theta(n: i64) -> f64 {
    if n >= 0 {
        1.0
    } else {
        0.0
    }
}

/// `ν_n = δ_{n,−1} + θ_n/√2`.
pub fn nu(n: i64) -> f64 {
    if n == -1 {
        1.0
    } else if n >= 0 {
        FRAC_1_SQRT_2
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct DressedBasis {
    pub omega_a1: f64,
    pub omega_a2: f64,
    pub coupling: f64,
    pub n_max: usize,
    states: Vec<Dressed>,
}

impl DressedBasis {
    /// Field frequency is the atomic splitting (resonance).
    pub fn new(omega_a1: f64, omega_a2: f64, coupling: f64, n_max: usize) -> Result<Self> {
        if !(omega_a1.is_finite() && omega_a2.is_finite()) {
            return Err(invalid("jc.omega_a", "must be finite"));
        }
        let wf = omega_a2 - omega_a1;
        if !(wf > 0.0) {
            return Err(invalid("jc.omega_a2", "need omega_a2 > omega_a1"));
        }
        if !(coupling > 0.0 && coupling < wf) {
            return Err(invalid("jc.coupling", "need 0 < f < omega_f"));
        }
        let mut b = Self {
            omega_a1,
            omega_a2,
            coupling,
            n_max,
            states: vec![],
        };
        let mut states = vec![Dressed { eps: 1, n: -1 }];
        for n in 0..=n_max as i64 {
            states.push(Dressed { eps: -1, n });
            states.push(Dressed { eps: 1, n });
        }
        states.sort_by(|x, y| {
            b.energy(*x)
                .partial_cmp(&b.energy(*y))
                .unwrap()
                .then(x.n.cmp(&y.n))
                .then(x.eps.cmp(&y.eps))
        });
        b.states = states;
        Ok(b)
    }

    pub fn omega_f(&self) -> f64 {
        self.omega_a2 - self.omega_a1
    }

    /// `Ω_{ε,n} = ω_a2(n+1) − ω_a1 n + ε f √(n+1)`.
    pub fn energy(&self, s: Dressed) -> f64 {
        let n = s.n as f64;
        self.omega_a2 * (n + 1.0) - self.omega_a1 * n + s.eps as f64 * self.coupling * (n + 1.0).sqrt()
    }

    /// States in ascending energy order; this is the index order of the system.
    pub fn states(&self) -> &[Dressed] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index(&self, eps: i8, n: i64) -> Option<usize> {
        self.states.iter().position(|s| s.eps == eps && s.n == n)
    }

    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| self.energy(*s)).collect()
    }
}

/// Correlation structure of the damped model: slot `c_(k l)(m n)` with
/// `k=(ε₁,n₁), l=(ε₂,n₂), m=(ε₃,n₃), n=(ε₄,n₄)` has weight
/// `½ε₁ε₄θ_{n₁}θ_{n₄}ν_{n₂}ν_{n₃}` when `n₁ = n₂+1` and `n₄ = n₃+1`.
pub fn build_dressed_system(basis: &DressedBasis, sd: &SpectralDensity) -> Result<SystemSpec> {
    sd.validate()?;
    let st = basis.states();
    let mut rule = IndexRule::new();
    for (k, a) in st.iter().enumerate() {
        for (l, b) in st.iter().enumerate() {
            if a.n != b.n + 1 {
                continue;
            }
            for (m, c) in st.iter().enumerate() {
                for (nn, e) in st.iter().enumerate() {
                    if e.n != c.n + 1 {
                        continue;
                    }
                    let w = 0.5
                        * a.eps as f64
                        * e.eps as f64
                        * theta(a.n)
                        * theta(e.n)
                        * nu(b.n)
                        * nu(c.n);
                    if w != 0.0 {
                        rule = rule.with(k, l, m, nn, w);
                    }
                }
            }
        }
    }
    let kernel = kernel_table(ScalarKernel::zero_temperature(sd.clone()), &rule)?;
    SystemSpec::new(basis.energies(), kernel)
}

#[derive(Clone, Debug)]
pub struct JCInitialState {
    /// Atomic density matrix, index 0 = ground `|1⟩`, index 1 = excited `|2⟩`.
    pub rho_a: CMatrix,
    pub photons: usize,
}

impl JCInitialState {
    pub fn new(rho_a: CMatrix, photons: usize) -> Result<Self> {
        if rho_a.dim() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "atomic state must be 2x2, got {}",
                rho_a.dim()
            )));
        }
        let ah = rho_a.anti_hermitian_norm();
        if ah > 1e-10 {
            return Err(Error::NonHermitian(ah));
        }
        if (rho_a.trace() - 1.0).norm() > 1e-10 {
            return Err(invalid("initial_state.rho_a", "trace must equal 1"));
        }
        if rho_a.hermitian_eigenvalues()[0] < -1e-12 {
            return Err(invalid("initial_state.rho_a", "must be positive semidefinite"));
        }
        Ok(Self { rho_a, photons })
    }

    pub fn excited(photons: usize) -> Self {
        Self {
            rho_a: CMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]),
            photons,
        }
    }

    /// `ρ_a ⊗ |p⟩⟨p|` in the dressed basis. Dissipation only lowers the
    /// excitation number, so levels above `p` are never populated and
    /// `n_max ≥ p` is enough.
    pub fn dressed_density(&self, basis: &DressedBasis) -> Result<CMatrix> {
        let p = self.photons as i64;
        if self.photons > basis.n_max {
            return Err(Error::Cutoff {
                n_max: basis.n_max,
                p: self.photons,
            });
        }
        let r = &self.rho_a;
        let (r11, r12, r21, r22) = (r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]);
        let st = basis.states();
        let d = st.len();
        let mut out = CMatrix::zeros(d);
        for (i, a) in st.iter().enumerate() {
            for (j, b) in st.iter().enumerate() {
                let (e1, e2) = (a.eps as f64, b.eps as f64);
                let mut v = ZERO;
                if a.n == b.n && a.n + 1 == p {
                    v += r11;
                }
                if a.n == b.n + 1 && a.n == p {
                    v += e1 * r21;
                }
                if a.n + 1 == b.n && b.n == p {
                    v += e2 * r12;
                }
                if a.n == b.n && a.n == p {
                    v += e1 * e2 * r22;
                }
                out[(i, j)] = v * nu(a.n) * nu(b.n);
            }
        }
        Ok(out)
    }
}

/// Partial trace over the field mode: `⟨k|ρ_a|l⟩ = Σ_n ⟨k,n|ρ|l,n⟩`.
pub fn atomic_reduction(basis: &DressedBasis, rho: &CMatrix) -> CMatrix {
    // bare amplitudes ⟨atom, photons | ε, n⟩
    let st = basis.states();
    let amp = |atom: usize, photons: i64, s: &Dressed| -> f64 {
        match atom {
            0 if photons == s.n + 1 => nu(s.n),
            1 if photons == s.n && s.n >= 0 => s.eps as f64 * nu(s.n),
            _ => 0.0,
        }
    };
    let mut out = CMatrix::zeros(2);
    for k in 0..2 {
        for l in 0..2 {
            let mut acc = ZERO;
            for photons in 0..=(basis.n_max as i64 + 1) {
                for (i, a) in st.iter().enumerate() {
                    let ca = amp(k, photons, a);
                    if ca == 0.0 {
                        continue;
                    }
                    for (j, b) in st.iter().enumerate() {
                        let cb = amp(l, photons, b);
                        if cb != 0.0 {
                            acc += ca * cb * rho[(i, j)];
                        }
                    }
                }
            }
            out[(k, l)] = acc;
        }
    }
    out
}

/// `Ŵ′₀` of every photon level on the line `Im z = η`, built bottom-up.
///
/// Level `m ≥ 0` is the 2×2 block over `ε = (+1, −1)`:
/// `[(z − Ω_m) − ½ν²_{m−1} s_m(z) εεᵀ]⁻¹` with
/// `s_m(z) = ∫dω |g(ω)|² Σ_{ε₃ε₄} Ŵ′₀(z−ω)_{level m−1}`. The convolution is a
/// discrete one on a uniform grid, which keeps `Im z` fixed from level to level.
#[derive(Clone, Debug)]
pub struct ResolventLine {
    pub eta: f64,
    pub h: f64,
    /// Real part of node 0.
    pub x0: f64,
    pub len: usize,
    /// First node at which the top level is free of grid-edge effects.
    pub first_valid: usize,
    /// `|g|²` mass dropped beyond the effective cutoff.
    pub neglected_weight: f64,
    omega_f: f64,
    energies: Vec<[f64; 2]>,
    omega_ground: f64,
    /// `s_m` per level `m = 0..=top`.
    self_energy: Vec<Vec<C64>>,
}

fn support(sd: &SpectralDensity) -> (f64, f64) {
    match sd {
        SpectralDensity::Lorentzian { .. } => (0.0, sd.effective_cutoff(1e-6)),
        SpectralDensity::FlatWindow { lo, hi, .. } => (*lo, *hi),
        SpectralDensity::Tabulated { omega, .. } => (omega[0], omega[omega.len() - 1]),
    }
}

fn inverse2(a: [C64; 4], level: i64, z: C64) -> Result<[C64; 4]> {
    let det = a[0] * a[3] - a[1] * a[2];
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if det.norm() <= 1e-14 * scale * scale {
        return Err(Error::Singular {
            context: format!("photon level {level} at z = {z}"),
            condition: f64::INFINITY,
        });
    }
    Ok([a[3] / det, -a[1] / det, -a[2] / det, a[0] / det])
}

impl ResolventLine {
    /// Covers `Re z ∈ [x_lo, x_hi]` for levels up to `top` with node spacing `h`.
    pub fn new(
        basis: &DressedBasis,
        sd: &SpectralDensity,
        eta: f64,
        x_lo: f64,
        x_hi: f64,
        h: f64,
        top: usize,
    ) -> Result<Self> {
        sd.validate()?;
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("need Im z > 0, got {eta}")));
        }
        if !(h > 0.0 && x_hi >= x_lo) {
            return Err(invalid("jc.line", "need h > 0 and x_lo <= x_hi"));
        }
        if top > basis.n_max {
            return Err(Error::Cutoff {
                n_max: basis.n_max,
                p: top,
            });
        }
        let (w_lo, w_hi) = support(sd);
        let k_lo = (w_lo / h).floor().max(0.0) as usize;
        let k_hi = (w_hi / h).ceil() as usize + 1;
        let cfg = QuadConfig::default();
        let breaks = sd.breakpoints();
        let mut weights = Vec::with_capacity(k_hi - k_lo + 1);
        let mut kept = 0.0;
        for k in k_lo..=k_hi {
            let a = ((k as f64 - 0.5) * h).max(0.0);
            let b = (k as f64 + 0.5) * h;
            let br: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
            let v = integrate_real(|w| sd.g2(w), a, b, &br, &cfg)?;
            kept += v;
            weights.push(v);
        }
        let neglected_weight = (sd.total_weight() - kept).max(0.0);

        let span = (x_hi - x_lo) / h;
        let first_valid = (top + 1) * k_hi;
        let len = first_valid + span.ceil() as usize + 1;
        let x0 = x_hi - (len - 1) as f64 * h;
        let z_at = |j: usize| C64::new(x0 + j as f64 * h, eta);

        let nk = weights.len();
        let size = (len + nk).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut kern = vec![ZERO; size];
        for (i, w) in weights.iter().enumerate() {
            kern[i] = C64::new(*w, 0.0);
        }
        fwd.process(&mut kern);

        let omega_ground = basis.energy(Dressed { eps: 1, n: -1 });
        let energies: Vec<[f64; 2]> = (0..=top as i64)
            .map(|m| {
                [
                    basis.energy(Dressed { eps: 1, n: m }),
                    basis.energy(Dressed { eps: -1, n: m }),
                ]
            })
            .collect();

        // u = Σ of all entries of the level below, starting from the free ground state
        let mut u: Vec<C64> = (0..len).map(|j| 1.0 / (z_at(j) - omega_ground)).collect();
        let mut self_energy = Vec::with_capacity(top + 1);
        for m in 0..=top {
            let mut buf = vec![ZERO; size];
            buf[..len].copy_from_slice(&u);
            fwd.process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&kern) {
                *b *= k;
            }
            inv.process(&mut buf);
            let norm = 1.0 / size as f64;
            // s(x_j) = Σ_i w_i u(x_j − (k_lo + i)h)
            let s: Vec<C64> = (0..len)
                .map(|j| {
                    if j >= k_lo {
                        buf[j - k_lo] * norm
                    } else {
                        ZERO
                    }
                })
                .collect();
            let c = 0.5 * nu(m as i64 - 1).powi(2);
            let e = energies[m];
            let mut next = vec![ZERO; len];
            for j in 0..len {
                let z = z_at(j);
                let g = c * s[j];
                let blk = inverse2([z - e[0] - g, g, g, z - e[1] - g], m as i64, z)?;
                next[j] = blk.iter().sum();
            }
            self_energy.push(s);
            u = next;
        }
        Ok(Self {
            eta,
            h,
            x0,
            len,
            first_valid,
            neglected_weight,
            omega_f: basis.omega_f(),
            energies,
            omega_ground,
            self_energy,
        })
    }

    pub fn top(&self) -> usize {
        self.self_energy.len() - 1
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.h
    }

    /// Nearest node to `x`, if it is in the valid range.
    pub fn node(&self, x: f64) -> Option<usize> {
        let j = ((x - self.x0) / self.h).round();
        (j >= self.first_valid as f64 && j < self.len as f64).then_some(j as usize)
    }

    /// Block of `level` at node `j`: 1×1 for level −1, 2×2 over `ε = (+1,−1)` otherwise.
    pub fn block(&self, level: i64, j: usize) -> Result<CMatrix> {
        let z = C64::new(self.x(j), self.eta);
        if level < 0 {
            return Ok(CMatrix::from_diag(&[1.0 / (z - self.omega_ground)]));
        }
        let m = level as usize;
        if m > self.top() || j >= self.len {
            return Err(invalid("jc.level", "outside the computed range"));
        }
        let g = 0.5 * nu(level - 1).powi(2) * self.self_energy[m][j];
        let e = self.energies[m];
        let b = inverse2([z - e[0] - g, g, g, z - e[1] - g], level, z)?;
        Ok(CMatrix::from_rows(&[vec![b[0], b[1]], vec![b[2], b[3]]]))
    }

    pub fn field_frequency(&self) -> f64 {
        self.omega_f
    }
}

/// Blocks of `Ŵ′₀(z)` for photon levels `−1..=level`.
pub fn kraus_recursion(
    basis: &DressedBasis,
    sd: &SpectralDensity,
    z: C64,
    level: usize,
) -> Result<Vec<CMatrix>> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    let line = ResolventLine::new(basis, sd, z.im, z.re, z.re, z.im / 20.0, level)?;
    let j = line.len - 1;
    (-1..=level as i64).map(|m| line.block(m, j)).collect()
}

/// Weak-coupling limit of `λ²Ŵ′₀(λ²(ω̃+iη) + Ω_{ε,n})_{(ε,n)(ε,n)}` for `g = λg̃`:
/// `[ω̃ + iη − Σ′_{ε′} ½θ_n ν²_{n−1} ĉ(Ω_{ε,n} − Ω_{ε′,n−1} + i0)]⁻¹`.
pub fn resolvent_weak_limit(
    basis: &DressedBasis,
    sd_tilde: &SpectralDensity,
    eps: i8,
    n: i64,
    omega_tilde: f64,
    eta: f64,
) -> Result<C64> {
    let kernel = ScalarKernel::zero_temperature(sd_tilde.clone());
    let top = basis.energy(Dressed { eps, n });
    let mut sigma = ZERO;
    if n >= 0 {
        let lower: &[i8] = if n == 0 { &[1] } else { &[1, -1] };
        for &e2 in lower {
            let x = top - basis.energy(Dressed { eps: e2, n: n - 1 });
            let c = kernel.boundary_value(x, 1e-7 * (1.0 + x.abs()), true)?;
            sigma += 0.5 * nu(n - 1).powi(2) * c;
        }
    }
    Ok(1.0 / (C64::new(omega_tilde, eta) - sigma))
}

/// Large-photon-number rates `(Γ, ω̄_f) = (π|g̃(ω_f)|²/4, ¼P∫|g̃|²/(ω−ω_f))`.
pub fn large_n_rates(sd_tilde: &SpectralDensity, omega_f: f64) -> (f64, f64) {
    (0.25 * sd_tilde.damping(omega_f), 0.25 * sd_tilde.level_shift(omega_f))
}

/// Excited-state population of the damped JC atom from the bitemporal solver.
#[derive(Clone, Debug)]
pub struct DressedRun {
    pub trajectory: DensityTrajectory,
    /// Reduced atomic density matrices, ground state first.
    pub atomic: Vec<CMatrix>,
}

impl DressedRun {
    pub fn excited(&self) -> Vec<f64> {
        self.atomic.iter().map(|m| m[(1, 1)].re).collect()
    }

    pub fn ground(&self) -> Vec<f64> {
        self.atomic.iter().map(|m| m[(0, 0)].re).collect()
    }
}

pub fn dressed_bitemporal(
    basis: &DressedBasis,
    sd: &SpectralDensity,
    init: &JCInitialState,
    t_max: f64,
    dt: f64,
    band: Option<usize>,
) -> Result<DressedRun> {
    let sys = build_dressed_system(basis, sd)?;
    let rho0 = init.dressed_density(basis)?;
    let w = solve_time_domain(&sys, t_max, dt)?;
    let opts = BitemporalOptions {
        band,
        ..Default::default()
    };
    let st = solve_bitemporal_with(&sys, &w, &rho0, t_max, dt, &opts)?;
    let trajectory = extract_density(&st);
    let atomic = trajectory
        .matrices
        .iter()
        .map(|m| atomic_reduction(basis, m))
        .collect();
    Ok(DressedRun { trajectory, atomic })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesRun {
    pub times: Vec<f64>,
    pub rho22: Vec<f64>,
    /// `|⟨2|ρ_a|2⟩|` of the last retained order, per time.
    pub truncation_estimate: Vec<f64>,
    /// Largest `|⟨2|ρ_a|2⟩|` contribution of each order `r = 0..=r_max`.
    pub order_magnitudes: Vec<f64>,
    /// Set when the last order exceeds the tolerance: the order at which the
    /// series terminates.
    pub suggested_r_max: Option<usize>,
}

/// Excited population as the series over memory orders `r ≤ r_max`, each
/// order being one more application of the double memory integral to
/// `W′₀ρ₀W′₀†`. Each order moves one photon level down, so the series
/// terminates after `r = p + 1`.
#[allow(clippy::too_many_arguments)]
pub fn atomic_population_series(
    basis: &DressedBasis,
    sd: &SpectralDensity,
    init: &JCInitialState,
    t_max: f64,
    dt: f64,
    r_max: usize,
    band: Option<usize>,
    tolerance: f64,
) -> Result<SeriesRun> {
    if r_max > init.photons + 1 {
        return Err(invalid(
            "numerics.r_max",
            format!("orders beyond p + 1 = {} vanish", init.photons + 1),
        ));
    }
    let sys = build_dressed_system(basis, sd)?;
    let rho0 = init.dressed_density(basis)?;
    let w = solve_time_domain(&sys, t_max, dt)?;
    let terms = neumann_terms(&sys, &w, &rho0, t_max, dt, r_max, band)?;
    let per_order: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| {
            extract_density(t)
                .matrices
                .iter()
                .map(|m| atomic_reduction(basis, m)[(1, 1)].re)
                .collect()
        })
        .collect();
    let times: Vec<f64> = (0..terms[0].len()).map(|i| terms[0].time(i)).collect();
    let rho22 = (0..times.len())
        .map(|i| per_order.iter().map(|o| o[i]).sum())
        .collect();
    let last = per_order.last().expect("order 0 always present");
    let truncation_estimate: Vec<f64> = last.iter().map(|v| v.abs()).collect();
    let order_magnitudes = per_order
        .iter()
        .map(|o| o.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .collect();
    let worst = truncation_estimate.iter().copied().fold(0.0, f64::max);
    let suggested_r_max = (r_max > 0 && worst > tolerance && r_max < init.photons + 1)
        .then_some(init.photons + 1);
    Ok(SeriesRun {
        times,
        rho22,
        truncation_estimate,
        order_magnitudes,
        suggested_r_max,
    })
}

pub fn write_series_csv<W: Write>(
    out: &mut W,
    series: &SeriesRun,
    bitemporal: &[f64],
) -> Result<()> {
    if bitemporal.len() != series.times.len() {
        return Err(Error::ShapeMismatch(format!(
            "series has {} times, bitemporal run {}",
            series.times.len(),
            bitemporal.len()
        )));
    }
    writeln!(out, "t,rho22_series,rho22_bitemporal,truncation_estimate")?;
    for i in 0..series.times.len() {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            series.times[i], series.rho22[i], bitemporal[i], series.truncation_estimate[i]
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct PlateauParams {
    /// `τ = π|g(ω_f)|² t / 2`.
    pub tau: f64,
    pub photons: usize,
    pub rho11: f64,
    pub rho22: f64,
}

/// `F(τ) = ρ₂₂e^{−τ} + ½e^{−τ} Σ_{r=1}^{p} (1 − ρ₁₁δ_{rp}) τʳ/r!`, summed in logs.
pub fn plateau_oracle(pp: &PlateauParams) -> Result<f64> {
    if !(pp.tau >= 0.0 && pp.tau.is_finite()) {
        return Err(invalid("plateau.tau", "must be finite and >= 0"));
    }
    let tau = pp.tau;
    let mut sum = pp.rho22 * (-tau).exp();
    if tau == 0.0 {
        return Ok(sum);
    }
    let lt = tau.ln();
    let mut log_fact = 0.0;
    for r in 1..=pp.photons {
        log_fact += (r as f64).ln();
        let c = if r == pp.photons { 1.0 - pp.rho11 } else { 1.0 };
        sum += 0.5 * c * (r as f64 * lt - log_fact - tau).exp();
    }
    Ok(sum)
}

/// Columns `tau, F_p<p>...` for `ρ_{a,22} = 1`.
pub fn write_plateau_csv<W: Write>(out: &mut W, taus: &[f64], photons: &[usize]) -> Result<()> {
    let mut head = String::from("tau");
    for p in photons {
        head.push_str(&format!(",F_p{p}"));
    }
    writeln!(out, "{head}")?;
    for &tau in taus {
        let mut line = format!("{tau:.17e}");
        for &p in photons {
            let f = plateau_oracle(&PlateauParams {
                tau,
                photons: p,
                rho11: 0.0,
                rho22: 1.0,
            })?;
            line.push_str(&format!(",{f:.17e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyRow {
    pub lambda: f64,
    pub photons: usize,
    pub time: f64,
    pub tau: f64,
    pub rho22: f64,
    /// `|ρ_{a,21}(0)| e^{−τ}`: the initial coherence under the dissipative pole.
    pub coherence: f64,
    pub distance: f64,
}

/// Scan `g = λg̃, p = p̃/λ^β, t = t̃/λ^α` along decreasing `λ`.
#[allow(clippy::too_many_arguments)]
pub fn entropy_limit_scan(
    basis: &DressedBasis,
    sd_tilde: &SpectralDensity,
    init: &CMatrix,
    alpha: f64,
    beta: f64,
    p_tilde: f64,
    t_tilde: f64,
    lambdas: &[f64],
) -> Result<Vec<EntropyRow>> {
    if !(alpha > 2.0 && alpha < beta + 2.0) {
        return Err(Error::Constraint(format!(
            "2 < alpha < beta + 2 (alpha = {alpha}, beta = {beta})"
        )));
    }
    if !(beta > 0.0 && beta < 4.0 / 3.0) {
        return Err(Error::Constraint(format!("0 < beta < 4/3 (beta = {beta})")));
    }
    if !(p_tilde > 0.0 && t_tilde > 0.0) {
        return Err(invalid("entropy.p_tilde", "p_tilde and t_tilde must be > 0"));
    }
    if lambdas.is_empty()
        || lambdas.iter().any(|l| !(*l > 0.0))
        || lambdas.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(invalid("entropy.lambdas", "need positive, strictly decreasing values"));
    }
    let state = JCInitialState::new(init.clone(), 1)?;
    let g2 = sd_tilde.g2(basis.omega_f());
    lambdas
        .iter()
        .map(|&lambda| {
            let photons = (p_tilde / lambda.powf(beta)).round() as usize;
            if photons == 0 {
                return Err(invalid("entropy.p_tilde", "photon number rounds to 0"));
            }
            let time = t_tilde / lambda.powf(alpha);
            let tau = PI * lambda * lambda * g2 * time / 2.0;
            let rho22 = plateau_oracle(&PlateauParams {
                tau,
                photons,
                rho11: state.rho_a[(0, 0)].re,
                rho22: state.rho_a[(1, 1)].re,
            })?;
            Ok(EntropyRow {
                lambda,
                photons,
                time,
                tau,
                rho22,
                coherence: state.rho_a[(1, 0)].norm() * (-tau).exp(),
                distance: (rho22 - 0.5).abs(),
            })
        })
        .collect()
}
