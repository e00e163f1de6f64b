//! One PASS/FAIL line per acceptance criterion. Criteria listed in
//! `UNATTAINABLE` are reported but do not fail the run.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kraus_core::dynamics::{
    audit_conservation, channel_completeness, extract_density, markovian_channel,
    solve_bitemporal, wigner_weisskopf, AuditTolerances, DensityTrajectory,
};
use kraus_core::jaynes_cummings::{
    atomic_population_series, dressed_bitemporal, entropy_limit_scan, kraus_recursion,
    large_n_rates, plateau_oracle, write_plateau_csv, Dressed, DressedBasis, JCInitialState,
    PlateauParams,
};
use kraus_core::kraus::{solve_time_domain, FractionOptions, LaplaceKraus, SystemSpec};
use kraus_core::laplace::forward_transform;
use kraus_core::reservoir::{kernel_table, IndexRule, ScalarKernel, SpectralDensity};
use kraus_core::scenario::{fit_decay_rate, plateau_shape};
use kraus_core::{CMatrix, C64};

/// Criterion 6's window starts at τ = 3, where F − 1/2 = e^{−3}/2 ≈ 0.025 for every p.
const UNATTAINABLE: &[usize] = &[6];

struct Outcome {
    id: usize,
    pass: bool,
    lines: Vec<String>,
}

struct Suite {
    outcomes: Vec<Outcome>,
    min_eigenvalues: Vec<(&'static str, f64)>,
}

impl Suite {
    fn report(&mut self, id: usize, title: &str, pass: bool, detail: String) {
        let line = format!("{} [{id}] {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id, pass, lines: vec![line] });
    }

    fn note(&mut self, text: String) {
        if let Some(o) = self.outcomes.last_mut() {
            o.lines.push(format!("      {text}"));
        }
    }

    fn track(&mut self, name: &'static str, traj: &DensityTrajectory) {
        let rep = audit_conservation(traj, &AuditTolerances::default());
        self.min_eigenvalues.push((name, rep.min_eigenvalue));
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn two_level(sd: SpectralDensity, w1: f64, w2: f64) -> SystemSpec {
    let k = kernel_table(ScalarKernel::zero_temperature(sd), &IndexRule::two_level()).unwrap();
    SystemSpec::new(vec![w1, w2], k).unwrap()
}

fn plus_state() -> CMatrix {
    CMatrix::from_real_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

/// Trapezoidal window around the field frequency 10 with plateau height `h`.
fn jc_window(h: f64) -> SpectralDensity {
    SpectralDensity::tabulated(vec![8.3, 8.7, 11.3, 11.7], vec![0.0, h, h, 0.0]).unwrap()
}

fn criterion_1(s: &mut Suite) {
    let start = Instant::now();
    // γ = π|g(ω₂₁)|² = γ_L/Λ = 0.25; ω_c/Λ = 2000 keeps the cut at ω = 0 negligible.
    let sd = SpectralDensity::lorentzian(0.05, 400.0, 0.2).unwrap();
    let gamma = sd.damping(400.0);
    let sys = two_level(sd.clone(), 0.0, 400.0);
    let t_max = 5.0 / gamma;
    let w = solve_time_domain(&sys, t_max, 0.01).unwrap();
    let times: Vec<f64> = (0..w.len()).map(|j| w.time(j)).collect();
    let volterra: Vec<f64> = w.entry_series(1, 1).iter().map(|a| a.norm_sqr()).collect();
    let two_pole = wigner_weisskopf(&sd, 0.0, 400.0, &times).unwrap();
    let err = max_abs_diff(&volterra, &two_pole);
    let el = start.elapsed();
    s.report(
        1,
        "Wigner-Weisskopf, Volterra vs two-pole",
        err <= 1e-3 && el.as_secs_f64() <= 10.0,
        format!("max |Δρ22| = {err:.2e} (≤ 1e-3) on [0, 5/γ], {} (≤ 10 s)", secs(el)),
    );
}

fn criterion_2(s: &mut Suite) {
    let start = Instant::now();
    let sd = SpectralDensity::flat(0.05, 0.0, 4.0).unwrap();
    let rule = IndexRule::new().with(1, 0, 0, 1, 1.0).with(2, 1, 1, 2, 0.7);
    let k = kernel_table(ScalarKernel::zero_temperature(sd), &rule).unwrap();
    let sys = SystemSpec::new(vec![0.0, 1.0, 2.2], k).unwrap();
    let w = solve_time_domain(&sys, 35.0, 0.01).unwrap();
    let lk = LaplaceKraus::new(sys.clone(), FractionOptions::default());
    let zs: Vec<C64> = (0..10)
        .map(|i| C64::new(-0.5 + 0.4 * i as f64, 1.0 + 0.1 * i as f64))
        .collect();
    let mut worst: f64 = 0.0;
    for z in &zs {
        let cf = lk.matrix(*z).unwrap();
        for kk in 0..3 {
            let ft = forward_transform(&w.entry_series(kk, kk), w.dt, sys.energies[kk], *z, 1e-9).unwrap();
            worst = worst.max((ft.value - cf[(kk, kk)]).norm() / cf[(kk, kk)].norm());
        }
    }
    let el = start.elapsed();
    s.report(
        2,
        "forward transform vs continued fraction",
        worst <= 1e-3 && el.as_secs_f64() <= 30.0,
        format!("max relative error {worst:.2e} (≤ 1e-3) over 10 z with Im z ≥ 1, {} (≤ 30 s)", secs(el)),
    );
}

fn criterion_3(s: &mut Suite) {
    let sd = SpectralDensity::lorentzian(0.02, 10.0, 0.5).unwrap();
    let gamma = sd.damping(10.0);
    let sys = two_level(sd, 0.0, 10.0);
    let t_max = 0.5 / gamma;
    let mut errs = Vec::new();
    for dt in [2e-3 / gamma, 1e-3 / gamma] {
        let w = solve_time_domain(&sys, t_max, dt).unwrap();
        let traj = extract_density(&solve_bitemporal(&sys, &w, &plus_state(), t_max, dt).unwrap());
        errs.push(audit_conservation(&traj, &AuditTolerances::default()).max_trace_error);
        s.track("trace study", &traj);
    }
    let ratio = errs[0] / errs[1];
    s.report(
        3,
        "trace conservation",
        errs[1] <= 1e-6 && (3.5..=4.5).contains(&ratio),
        format!("max |Tr ρ − 1| = {:.2e} at dt = 1e-3/γ (≤ 1e-6), ratio under halving {ratio:.2} (≈ 4)", errs[1]),
    );
}

fn criterion_5(s: &mut Suite) {
    let lambda = 0.1;
    let g_tilde2 = 10.0 / PI;
    let sd = SpectralDensity::flat(g_tilde2, 0.0, 20.0).unwrap().scaled(lambda * lambda);
    let rate = 2.0 * PI * lambda * lambda * g_tilde2;
    let gamma = rate / 2.0;
    let omega_bar = sd.level_shift(10.0);
    let sys = two_level(sd, 0.0, 10.0);
    let (t_max, dt) = (1.5 / gamma, 0.05);
    let w = solve_time_domain(&sys, t_max, dt).unwrap();
    let traj = extract_density(&solve_bitemporal(&sys, &w, &plus_state(), t_max, dt).unwrap());
    s.track("markov limit", &traj);
    let fitted = fit_decay_rate(&traj.times, &traj.population(1), 0.1 * t_max).unwrap();
    let rate_err = (fitted - rate).abs() / rate;
    let mut dev: f64 = 0.0;
    let mut complete: f64 = 0.0;
    for (t, m) in traj.times.iter().zip(&traj.matrices) {
        let ch = markovian_channel(gamma, omega_bar, &plus_state(), *t).unwrap();
        dev = dev.max(m.max_abs_diff(&ch));
        complete = complete.max(channel_completeness(gamma, omega_bar, *t).unwrap());
    }
    s.report(
        5,
        "Markovian limit",
        rate_err <= 0.05 && dev <= 0.05 && complete <= 1e-14,
        format!(
            "fitted rate {fitted:.4} vs 2γ = {rate:.4} ({:.2}% ≤ 5%), max |ρ − channel| {dev:.2e} (≤ 0.05), ‖M†M + N†N − I‖ {complete:.1e}",
            100.0 * rate_err
        ),
    );
}

fn criterion_4(s: &mut Suite) {
    let (name, worst) = s
        .min_eigenvalues
        .iter()
        .copied()
        .fold(("none", f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let n = s.min_eigenvalues.len();
    s.report(
        4,
        "positivity",
        worst >= -1e-10,
        format!("min λ_min = {worst:.2e} (≥ −1e-10) over {n} trajectories, worst in {name}"),
    );
}

fn criterion_6(s: &mut Suite) {
    let start = Instant::now();
    let photons = [20usize, 50, 100];
    let taus: Vec<f64> = (0..=16000).map(|i| i as f64 * 0.01).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut out = std::fs::File::create(dir.path().join("plateau.csv")).unwrap();
    write_plateau_csv(&mut out, &taus, &photons).unwrap();
    let mut plateau: f64 = 0.0;
    let mut tail: f64 = 0.0;
    let mut later: f64 = 0.0;
    for &p in &photons {
        let (a, b) = plateau_shape(&taus, p, 3.0).unwrap();
        plateau = plateau.max(a.unwrap());
        tail = tail.max(b.unwrap());
        later = later.max(plateau_shape(&taus, p, 4.0).unwrap().0.unwrap());
    }
    let el = start.elapsed();
    s.report(
        6,
        "plateau at 1/2",
        plateau <= 1e-2 && tail <= 1e-2 && el.as_secs_f64() <= 1.0,
        format!(
            "max |F − 1/2| on [3, p − 3√p] = {plateau:.4} (≤ 1e-2; F − 1/2 = e^-3/2 at τ = 3), tail max {tail:.1e} (≤ 1e-2), CSV in {}",
            secs(el)
        ),
    );
    s.note(format!("from τ = 4 the plateau bound holds: max |F − 1/2| = {later:.4}"));
}

fn criterion_7(s: &mut Suite) {
    let start = Instant::now();
    let h = 0.2;
    let sd = jc_window(h);
    let basis = DressedBasis::new(0.0, 10.0, 1.0, 1).unwrap();
    let init = JCInitialState::excited(1);
    let rate = PI * sd.g2(10.0) / 2.0;
    let (t_max, dt) = (3.0 / rate, 0.04);
    let run = dressed_bitemporal(&basis, &sd, &init, t_max, dt, None).unwrap();
    s.track("JC p = 1", &run.trajectory);
    let series = atomic_population_series(&basis, &sd, &init, t_max, dt, 2, None, 1e-3).unwrap();
    let ex = run.excited();
    let diff = max_abs_diff(&ex, &series.rho22);
    let el = start.elapsed();
    s.report(
        7,
        "JC series vs bitemporal, p = 1",
        diff <= 1e-2 && el.as_secs_f64() <= 300.0,
        format!("max |Δρ22| = {diff:.2e} (≤ 1e-2) on τ ∈ [0, 3], r_max = 2, {} (≤ 5 min)", secs(el)),
    );
    let f_dev = run
        .trajectory
        .times
        .iter()
        .zip(&ex)
        .map(|(t, e)| {
            let f = plateau_oracle(&PlateauParams { tau: rate * t, photons: 1, rho11: 0.0, rho22: 1.0 }).unwrap();
            (e - f).abs()
        })
        .fold(0.0, f64::max);
    s.note(format!("info: max |ρ22 − F(τ)| = {f_dev:.3} at p = 1 (F is a large-p form)"));
}

fn criterion_8(s: &mut Suite) {
    let h = 0.2;
    let sd = jc_window(h);
    let basis = DressedBasis::new(0.0, 10.0, 1.0, 0).unwrap();
    let init = JCInitialState::excited(0);
    let t_max = 12.0 / (PI * h);
    let dt = 0.04;
    let series = atomic_population_series(&basis, &sd, &init, t_max, dt, 1, None, 1e-3).unwrap();
    let run = dressed_bitemporal(&basis, &sd, &init, t_max, dt, None).unwrap();
    s.track("JC p = 0", &run.trajectory);
    let ground_series = 1.0 - series.rho22.last().unwrap();
    let ground_direct = *run.ground().last().unwrap();
    s.report(
        8,
        "ground-state attractor, p = 0",
        ground_series >= 0.95 && ground_direct >= 0.95,
        format!("⟨1|ρ_a|1⟩ at t = {t_max:.1}: series {ground_series:.4}, bitemporal {ground_direct:.4} (≥ 0.95)"),
    );
}

fn criterion_9(s: &mut Suite) {
    let sd_tilde = SpectralDensity::flat(4.0 / PI, 9.0, 11.0).unwrap();
    let (omega_tilde, eta, p_tilde) = (0.3, 0.5, 6.0);
    let mut dist = Vec::new();
    let mut off = Vec::new();
    for lambda in [0.4f64, 0.2, 0.1] {
        let n = (p_tilde / lambda).round() as usize;
        let basis = DressedBasis::new(0.0, 10.0, 1.0, n).unwrap();
        let (gamma, shift) = large_n_rates(&sd_tilde, basis.omega_f());
        let target = 1.0 / C64::new(omega_tilde + shift, eta + gamma);
        let l2 = lambda * lambda;
        let centre = basis.energy(Dressed { eps: 1, n: n as i64 });
        let z = C64::new(centre + l2 * omega_tilde, l2 * eta);
        let blocks = kraus_recursion(&basis, &sd_tilde.scaled(l2), z, n).unwrap();
        let b = &blocks[n + 1];
        dist.push((b[(0, 0)] * l2 - target).norm());
        off.push((b[(0, 1)] * l2).norm().max((b[(1, 0)] * l2).norm()).max((b[(1, 1)] * l2).norm()));
    }
    let converging = dist.windows(2).all(|w| w[1] < w[0]);
    let bound = 0.5f64.sqrt();
    let decaying = off.windows(2).all(|w| w[1] <= bound * w[0]);
    s.report(
        9,
        "weak-coupling resolvent limit",
        converging && decaying,
        format!(
            "|λ²Ŵ − (ω̃ + iΓ + ω̄_f)⁻¹| = {:.2e}, {:.2e}, {:.2e} (decreasing); off-diagonal {:.2e}, {:.2e}, {:.2e} (ratio ≤ 2^-1/2 per halving)",
            dist[0], dist[1], dist[2], off[0], off[1], off[2]
        ),
    );
}

fn criterion_10(s: &mut Suite) {
    let sd = SpectralDensity::flat(4.0 / PI, 9.0, 11.0).unwrap();
    let basis = DressedBasis::new(0.0, 10.0, 1.0, 1).unwrap();
    let init = JCInitialState::excited(1).rho_a;
    let lambdas = [0.4, 0.2, 0.1];
    let rows = entropy_limit_scan(&basis, &sd, &init, 2.5, 1.0, 20.0, 2.5, &lambdas).unwrap();
    let d: Vec<f64> = rows.iter().map(|r| r.distance).collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let alpha_err = entropy_limit_scan(&basis, &sd, &init, 2.0, 1.0, 20.0, 2.5, &lambdas)
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();
    let beta_err = entropy_limit_scan(&basis, &sd, &init, 2.5, 4.0 / 3.0, 20.0, 2.5, &lambdas)
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();
    let named = alpha_err.contains("alpha") && beta_err.contains("beta");
    s.report(
        10,
        "entropy-limit scan",
        decreasing && named,
        format!(
            "|ρ22 − 1/2| = {:.3e}, {:.3e}, {:.3e}; α = 2 → \"{alpha_err}\"; β = 4/3 → \"{beta_err}\"",
            d[0], d[1], d[2]
        ),
    );
}

fn main() -> ExitCode {
    let mut s = Suite {
        outcomes: Vec::new(),
        min_eigenvalues: Vec::new(),
    };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    criterion_5(&mut s);
    criterion_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    criterion_4(&mut s);
    criterion_9(&mut s);
    criterion_10(&mut s);
    s.outcomes.sort_by_key(|o| o.id);
    for o in &s.outcomes {
        for l in &o.lines {
            println!("{l}");
        }
    }
    let unexpected: Vec<usize> = s
        .outcomes
        .iter()
        .filter(|o| !o.pass && !UNATTAINABLE.contains(&o.id))
        .map(|o| o.id)
        .collect();
    let passed = s.outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass", s.outcomes.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
