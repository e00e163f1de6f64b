//! The lowest-order Kraus matrix `W′₀`.
//!
//! In the interaction picture
//!
//! ```text
//! W′₀(t)_kl = δ_kl − Σ_{mnp} ∫₀ᵗdu ∫₀ᵘdv e^{iω_km u + iω_mp v} W′₀(u−v)_mn W′₀(v)_pl c_(km)(np)(u,v),
//! ```
//!
//! and its shifted transform `Ŵ′₀(z)_kl = −i∫dt e^{izt} e^{−iω_k t} W′₀(t)_kl` obeys
//!
//! ```text
//! Ŵ′₀⁻¹(z)_kl = (z−ω_k)δ_kl − Σ_{mn} ∫dω J(ω) w_(km)(nl) Ŵ′₀(z−ω)_mn,
//! ```
//!
//! the contour integral over `y` having been collapsed onto the spectral
//! measure `J` of the scalar kernel.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::matrix::{CMatrix, C64, ONE, ZERO};
use crate::quad::{integrate, QuadConfig};
use crate::reservoir::CorrelationKernel;

/// A nonzero correlator `c_(km)(nl)` in the index order of the Kraus equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub energies: Vec<f64>,
    pub kernel: CorrelationKernel,
}

impl SystemSpec {
    pub fn new(energies: Vec<f64>, kernel: CorrelationKernel) -> Result<Self> {
        if energies.is_empty() {
            return Err(invalid("system.energies", "need at least one level"));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(invalid("system.energies", "must be finite"));
        }
        if energies.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("system.energies", "must be sorted ascending"));
        }
        if let Some(mx) = kernel.max_index() {
            if mx >= energies.len() {
                return Err(invalid(
                    "system.kernel",
                    format!("slot index {mx} out of range for dimension {}", energies.len()),
                ));
            }
        }
        Ok(Self { energies, kernel })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Kernel slots `c_(kl)(mn)` relabelled as `c_(km)(nl)` terms.
    pub fn terms(&self) -> Vec<Term> {
        self.kernel
            .slots
            .iter()
            .map(|s| Term {
                k: s.k,
                m: s.l,
                n: s.m,
                l: s.n,
                weight: s.weight,
            })
            .collect()
    }

    /// Same system with every correlator multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for slot in &mut s.kernel.slots {
            slot.weight *= factor;
        }
        s
    }

    /// States that never appear as an outer index of a slot; their resolvent is free.
    pub fn free_states(&self) -> Vec<bool> {
        let mut free = vec![true; self.dim()];
        for s in self.terms() {
            free[s.k] = false;
            free[s.l] = false;
        }
        free
    }

    /// Connected components of the graph with edges `k–l` for every slot `(km)(nl)`.
    pub fn components(&self) -> Vec<usize> {
        let n = self.dim();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for s in self.terms() {
            let a = find(&mut parent, s.k);
            let b = find(&mut parent, s.l);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..n).map(|x| find(&mut parent, x)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VolterraOptions {
    pub max_steps: usize,
    /// Per-step fixed-point tolerance on successive iterates.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self {
            max_steps: 200_000,
            tol: 1e-12,
            max_iters: 200,
        }
    }
}

/// `W′₀` sampled on `t_j = j·dt`.
#[derive(Clone, Debug)]
pub struct KrausZero {
    pub dt: f64,
    pub values: Vec<CMatrix>,
    /// Largest final fixed-point change over all steps.
    pub max_step_change: f64,
    pub max_iterations: usize,
    /// Growth constant `C` of the stability bound `‖W(t)‖ ≤ ‖W(0)‖ e^{Ct}`.
    pub lipschitz: f64,
}

impl KrausZero {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn entry_series(&self, k: usize, l: usize) -> Vec<C64> {
        self.values.iter().map(|m| m[(k, l)]).collect()
    }

    /// Whether `‖W(t)‖ ≤ ‖W(0)‖ e^{Ct}` holds on the grid.
    pub fn stability_ok(&self) -> bool {
        let n0 = self.values[0].norm();
        self.values
            .iter()
            .enumerate()
            .all(|(j, w)| w.norm() <= n0 * (self.lipschitz * self.time(j)).exp() * (1.0 + 1e-9))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("t");
        for k in 0..d {
            for l in 0..d {
                header.push_str(&format!(",re_{}_{},im_{}_{}", k + 1, l + 1, k + 1, l + 1));
            }
        }
        writeln!(out, "{header}")?;
        for (j, m) in self.values.iter().enumerate() {
            let mut line = format!("{:.16e}", self.time(j));
            for v in m.as_slice() {
                line.push_str(&format!(",{:.16e},{:.16e}", v.re, v.im));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn phase_table(freq: f64, dt: f64, n: usize) -> Vec<C64> {
    (0..n).map(|j| C64::new(0.0, freq * dt * j as f64).exp()).collect()
}

/// Product-trapezoid solution of the single Kraus equation on `[0, T]`.
pub fn solve_time_domain(sys: &SystemSpec, t_max: f64, dt: f64) -> Result<KrausZero> {
    solve_time_domain_with(sys, t_max, dt, &VolterraOptions::default())
}

pub fn solve_time_domain_with(
    sys: &SystemSpec,
    t_max: f64,
    dt: f64,
    opts: &VolterraOptions,
) -> Result<KrausZero> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("numerics.dt", "must be > 0"));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(invalid("numerics.t_max", "must be >= 0"));
    }
    let steps = (t_max / dt).round() as usize;
    if steps > opts.max_steps {
        return Err(invalid(
            "numerics.dt",
            format!("T/dt = {steps} exceeds the step limit {}", opts.max_steps),
        ));
    }
    let d = sys.dim();
    let n = steps + 1;
    let eye = CMatrix::identity(d);

    // Term (km)(nl) plays the role of (km)(np) with p = l.
    let slots = sys.terms();
    let ctab: Vec<C64> = if slots.is_empty() {
        vec![ZERO; n]
    } else {
        (0..n)
            .map(|j| sys.kernel.scalar.time(j as f64 * dt, 0.0))
            .collect::<Result<_>>()?
    };
    let e = &sys.energies;
    let ph_u: Vec<Vec<C64>> = slots
        .iter()
        .map(|s| phase_table(e[s.k] - e[s.m], dt, n))
        .collect();
    let ph_v: Vec<Vec<C64>> = slots
        .iter()
        .map(|s| phase_table(e[s.m] - e[s.l], dt, n))
        .collect();

    let c0 = ctab[0].norm();
    let lipschitz = slots.iter().map(|s| s.weight.abs()).sum::<f64>() * c0 * t_max;

    let mut w: Vec<CMatrix> = Vec::with_capacity(n);
    w.push(eye.clone());
    // Running trapezoid sum dt·(A₀/2 + A₁ + … + A_{i−1}); A₀ = 0.
    let mut running = CMatrix::zeros(d);
    let mut prev_a = CMatrix::zeros(d);
    let mut max_change: f64 = 0.0;
    let mut max_iters = 0;
    let half = 0.5 * dt;

    for i in 1..n {
        if i > 1 {
            running.add_scaled(&prev_a, C64::new(dt, 0.0));
        }
        // Known part of A_i: interior points j = 1..i−1 of the inner integral.
        let mut known = CMatrix::zeros(d);
        for (si, s) in slots.iter().enumerate() {
            let pv = &ph_v[si];
            let p = s.l;
            let mut acc = vec![ZERO; d];
            for j in 1..i {
                let a = w[i - j][(s.m, s.n)];
                if a == ZERO {
                    continue;
                }
                let f = pv[j] * ctab[i - j] * a;
                let row = &w[j].as_slice()[p * d..(p + 1) * d];
                for (x, y) in acc.iter_mut().zip(row) {
                    *x += f * y;
                }
            }
            let pref = s.weight * ph_u[si][i] * dt;
            for l in 0..d {
                known[(s.k, l)] += pref * acc[l];
            }
        }

        let base = {
            let mut b = &eye - &running;
            b.add_scaled(&known, C64::new(-half, 0.0));
            b
        };
        let endpoint = |wi: &CMatrix| -> CMatrix {
            let mut a = CMatrix::zeros(d);
            for (si, s) in slots.iter().enumerate() {
                let p = s.l;
                let pref = s.weight * ph_u[si][i] * half;
                // v = 0: W(u)_mn W(0)_pl c(u)
                let v0 = pref * ctab[i] * wi[(s.m, s.n)];
                a[(s.k, p)] += v0;
                // v = u: W(0)_mn W(u)_pl c(0)
                if s.m == s.n {
                    let vu = pref * ph_v[si][i] * ctab[0];
                    for l in 0..d {
                        a[(s.k, l)] += vu * wi[(p, l)];
                    }
                }
            }
            a
        };

        let mut wi = w[i - 1].clone();
        let mut iters = 0;
        loop {
            iters += 1;
            let mut next = base.clone();
            next.add_scaled(&endpoint(&wi), C64::new(-half, 0.0));
            let change = next.max_abs_diff(&wi);
            wi = next;
            if change <= opts.tol {
                max_change = max_change.max(change);
                break;
            }
            if iters >= opts.max_iters {
                return Err(Error::NonConvergence {
                    step: i,
                    iters,
                    change,
                });
            }
        }
        max_iters = max_iters.max(iters);

        let mut a_i = known;
        a_i.add_scaled(&endpoint(&wi), ONE);
        prev_a = a_i;
        w.push(wi);
    }

    Ok(KrausZero {
        dt,
        values: w,
        max_step_change: max_change,
        max_iterations: max_iters,
        lipschitz,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct FractionOptions {
    pub max_depth: usize,
    /// Stop once successive depths differ by at most this (max-abs entry).
    pub tol: f64,
    /// Cap on nested quadrature levels for structures that never close.
    pub max_nesting: usize,
    pub max_condition: f64,
    pub quad: QuadConfig,
}

impl Default for FractionOptions {
    fn default() -> Self {
        Self {
            max_depth: 64,
            tol: 1e-10,
            max_nesting: 4,
            max_condition: 1e12,
            quad: QuadConfig {
                abs_tol: 1e-12,
                rel_tol: 1e-10,
                max_intervals: 4000,
            },
        }
    }
}

/// Converged value of the continued fraction at one `z`.
#[derive(Clone, Debug)]
pub struct FractionValue {
    pub z: C64,
    pub matrix: CMatrix,
    pub depth: usize,
    /// `max |Ŵ^(depth) − Ŵ^(depth−1)|`.
    pub difference: f64,
}

/// Laplace-domain evaluator `z ↦ Ŵ′₀(z)` built from the matrix continued fraction.
#[derive(Clone, Debug)]
pub struct LaplaceKraus {
    pub sys: SystemSpec,
    pub opts: FractionOptions,
    free: Vec<bool>,
    comp: Vec<usize>,
}

impl LaplaceKraus {
    pub fn new(sys: SystemSpec, opts: FractionOptions) -> Self {
        let free = sys.free_states();
        let comp = sys.components();
        Self {
            sys,
            opts,
            free,
            comp,
        }
    }

    /// Iterates the fraction from the free resolvent until successive depths agree.
    pub fn eval(&self, z: C64) -> Result<FractionValue> {
        check_upper(z)?;
        let mut prev = self.eval_at_depth(z, 0)?;
        let mut diff = f64::INFINITY;
        for depth in 1..=self.opts.max_depth {
            if depth > self.opts.max_nesting + 1 {
                break;
            }
            let next = self.eval_at_depth(z, depth)?;
            diff = next.max_abs_diff(&prev);
            prev = next;
            if diff <= self.opts.tol {
                return Ok(FractionValue {
                    z,
                    matrix: prev,
                    depth,
                    difference: diff,
                });
            }
        }
        Err(Error::FractionNotConverged {
            z,
            depth: self.opts.max_depth.min(self.opts.max_nesting + 1),
            difference: diff,
        })
    }

    pub fn matrix(&self, z: C64) -> Result<CMatrix> {
        Ok(self.eval(z)?.matrix)
    }

    /// `Ŵ^(depth)(z)`, with `Ŵ^(0)` the free resolvent.
    pub fn eval_at_depth(&self, z: C64, depth: usize) -> Result<CMatrix> {
        check_upper(z)?;
        let d = self.sys.dim();
        let mut out = CMatrix::zeros(d);
        let mut done = vec![false; d];
        for root in 0..d {
            let c = self.comp[root];
            if done[c] {
                continue;
            }
            done[c] = true;
            let (idx, blk) = self.block(z, c, depth)?;
            for (a, &ka) in idx.iter().enumerate() {
                for (b, &kb) in idx.iter().enumerate() {
                    out[(ka, kb)] = blk[(a, b)];
                }
            }
        }
        Ok(out)
    }

    fn block(&self, z: C64, comp: usize, depth: usize) -> Result<(Vec<usize>, CMatrix)> {
        let idx: Vec<usize> = (0..self.sys.dim()).filter(|&k| self.comp[k] == comp).collect();
        let nb = idx.len();
        let pos = |k: usize| idx.iter().position(|&x| x == k).expect("state in block");
        let mut a = CMatrix::zeros(nb);
        for (r, &k) in idx.iter().enumerate() {
            a[(r, r)] = z - self.sys.energies[k];
        }
        if depth > 0 {
            for s in self.sys.terms() {
                if self.comp[s.k] != comp {
                    continue;
                }
                let conv = self.conv(z, s.m, s.n, depth - 1)?;
                a[(pos(s.k), pos(s.l))] -= s.weight * conv;
            }
        }
        let inv = a.inverse_checked(
            self.opts.max_condition,
            &format!("continued fraction block at z = {z}, depth {depth}"),
        )?;
        Ok((idx, inv))
    }

    /// `Ŵ^(depth)(z)_mn`.
    fn entry(&self, z: C64, m: usize, n: usize, depth: usize) -> Result<C64> {
        if self.comp[m] != self.comp[n] {
            return Ok(ZERO);
        }
        if self.free[m] || depth == 0 {
            return Ok(if m == n {
                1.0 / (z - self.sys.energies[m])
            } else {
                ZERO
            });
        }
        let (idx, blk) = self.block(z, self.comp[m], depth)?;
        let a = idx.iter().position(|&x| x == m).unwrap();
        let b = idx.iter().position(|&x| x == n).unwrap();
        Ok(blk[(a, b)])
    }

    /// `∫dω J(ω) Ŵ^(depth)(z−ω)_mn`.
    fn conv(&self, z: C64, m: usize, n: usize, depth: usize) -> Result<C64> {
        if self.comp[m] != self.comp[n] {
            return Ok(ZERO);
        }
        if self.free[m] || depth == 0 {
            if m != n {
                return Ok(ZERO);
            }
            return self.sys.kernel.scalar.laplace(z - self.sys.energies[m]);
        }
        let scalar = &self.sys.kernel.scalar;
        let (lo, hi) = scalar.measure_range();
        let breaks: Vec<f64> = self
            .sys
            .energies
            .iter()
            .map(|e| z.re - e)
            .chain(scalar.density_breakpoints())
            .collect();
        let mut failure = None;
        let r = integrate(
            |w| {
                let jw = scalar.measure(w);
                if jw == 0.0 || failure.is_some() {
                    return ZERO;
                }
                match self.entry(z - w, m, n, depth) {
                    Ok(v) => jw * v,
                    Err(e) => {
                        failure = Some(e);
                        ZERO
                    }
                }
            },
            lo,
            hi,
            &breaks,
            &self.opts.quad,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(r?.value)
    }
}

fn check_upper(z: C64) -> Result<()> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("need Im z > 0, got {z}")));
    }
    Ok(())
}

/// Evaluates the fraction at every `z`.
pub fn solve_continued_fraction(
    sys: &SystemSpec,
    depth: usize,
    zs: &[C64],
) -> Result<(LaplaceKraus, Vec<FractionValue>)> {
    if depth < 1 {
        return Err(invalid("numerics.depth", "must be >= 1"));
    }
    let opts = FractionOptions {
        max_depth: depth,
        ..FractionOptions::default()
    };
    let lk = LaplaceKraus::new(sys.clone(), opts);
    let vals = zs.iter().map(|&z| lk.eval(z)).collect::<Result<Vec<_>>>()?;
    Ok((lk, vals))
}

/// Right-hand side of the inverse identity,
/// `(z−ω_k)δ_kl − Σ_mn w ∫dω J(ω) Ŵ(z−ω)_mn`, for an arbitrary evaluator `Ŵ`.
///
/// `y_height` is the height of the collapsed `y` contour and must lie in `(0, Im z)`.
pub fn laplace_inverse_identity<F>(
    sys: &SystemSpec,
    w: F,
    z: C64,
    y_height: f64,
    quad: &QuadConfig,
) -> Result<CMatrix>
where
    F: Fn(C64) -> Result<CMatrix>,
{
    if !(y_height > 0.0 && z.im > y_height) {
        return Err(Error::Domain(format!(
            "contour ordering requires Im z > Im y > 0, got Im z = {}, Im y = {y_height}",
            z.im
        )));
    }
    let d = sys.dim();
    let mut out = CMatrix::zeros(d);
    for k in 0..d {
        out[(k, k)] = z - sys.energies[k];
    }
    if sys.kernel.is_zero() {
        return Ok(out);
    }
    let scalar = &sys.kernel.scalar;
    let (lo, hi) = scalar.measure_range();
    let breaks: Vec<f64> = sys
        .energies
        .iter()
        .map(|e| z.re - e)
        .chain(scalar.density_breakpoints())
        .collect();
    // One quadrature per distinct (m, n).
    let terms = sys.terms();
    let mut pairs: Vec<(usize, usize)> = terms.iter().map(|s| (s.m, s.n)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    for (m, n) in pairs {
        let mut failure = None;
        let r = integrate(
            |x| {
                let jw = scalar.measure(x);
                if jw == 0.0 || failure.is_some() {
                    return ZERO;
                }
                match w(z - x) {
                    Ok(mat) => jw * mat[(m, n)],
                    Err(e) => {
                        failure = Some(e);
                        ZERO
                    }
                }
            },
            lo,
            hi,
            &breaks,
            quad,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let conv = r?.value;
        for s in terms.iter().filter(|s| s.m == m && s.n == n) {
            out[(s.k, s.l)] -= s.weight * conv;
        }
    }
    Ok(out)
}

/// `λ² Ŵ′₀(λ²(ω̃ + iη) + center)` for the system with every correlator scaled by `λ²`.
pub fn weak_coupling_limit(
    sys: &SystemSpec,
    lambda: f64,
    omega_tilde: f64,
    center: f64,
    eta: f64,
) -> Result<CMatrix> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(invalid("weak_coupling.lambda", "must lie in (0, 1]"));
    }
    if !(eta > 0.0) {
        return Err(invalid("weak_coupling.eta", "must be > 0"));
    }
    let l2 = lambda * lambda;
    let scaled = sys.scaled(l2);
    let lk = LaplaceKraus::new(scaled, FractionOptions::default());
    let z = C64::new(center + l2 * omega_tilde, l2 * eta);
    Ok(lk.matrix(z)?.scale(C64::new(l2, 0.0)))
}

/// The `λ → 0` limit of [`weak_coupling_limit`]: on the levels degenerate with
/// `center` it is `[ω̃ + iη − K]⁻¹` with `K_kl = Σ_m w_(km)(ml) ĉ(center − ω_m + iη')`,
/// and zero elsewhere. `η'` is the boundary-value height.
pub fn diagonal_resolvent_limit(
    sys: &SystemSpec,
    omega_tilde: f64,
    center: f64,
    eta: f64,
    boundary_eps: f64,
) -> Result<CMatrix> {
    let d = sys.dim();
    let scale = sys.energies.iter().fold(1.0f64, |a, e| a.max(e.abs()));
    let deg: Vec<usize> = (0..d)
        .filter(|&k| (sys.energies[k] - center).abs() <= 1e-12 * scale)
        .collect();
    let mut out = CMatrix::zeros(d);
    if deg.is_empty() {
        return Ok(out);
    }
    let nb = deg.len();
    let mut a = CMatrix::zeros(nb);
    for r in 0..nb {
        a[(r, r)] = C64::new(omega_tilde, eta);
    }
    for s in sys.terms() {
        if s.m != s.n {
            continue;
        }
        let (Some(r), Some(c)) = (
            deg.iter().position(|&x| x == s.k),
            deg.iter().position(|&x| x == s.l),
        ) else {
            continue;
        };
        let cb = sys
            .kernel
            .scalar
            .boundary_value(center - sys.energies[s.m], boundary_eps, true)?;
        a[(r, c)] -= s.weight * cb;
    }
    let inv = a.inverse_checked(1e14, "diagonal resolvent limit")?;
    for (r, &kr) in deg.iter().enumerate() {
        for (c, &kc) in deg.iter().enumerate() {
            out[(kr, kc)] = inv[(r, c)];
        }
    }
    Ok(out)
}
