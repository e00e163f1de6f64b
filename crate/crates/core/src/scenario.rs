//! Scenario files: a TOML tree with one `kind` and unit-suffixed keys
//! (`*_per_time` for frequencies and rates, `*_time` for durations), run into
//! CSV artifacts plus a `summary.json` audit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    audit_conservation, channel_completeness, extract_density, markovian_channel,
    solve_bitemporal_with, wigner_weisskopf, AuditReport, AuditTolerances, BitemporalOptions,
    DensityTrajectory,
};
use crate::error::{invalid, Error, Result};
use crate::jaynes_cummings::{
    atomic_population_series, dressed_bitemporal, entropy_limit_scan, plateau_oracle,
    write_plateau_csv, write_series_csv, DressedBasis, JCInitialState, PlateauParams,
};
use crate::kraus::{solve_time_domain, SystemSpec};
use crate::matrix::{CMatrix, C64};
use crate::reservoir::{kernel_table, IndexRule, ScalarKernel, SpectralDensity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    TwoLevelWw,
    MarkovLimit,
    GenericSystem,
    JaynesCummings,
    PlateauFigure,
    EntropyScan,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralConfig {
    Lorentzian {
        /// `γ` in `|g|² = (γΛ/π)/((ω−ω_c)² + Λ²)`.
        strength_per_time_sq: f64,
        center_per_time: f64,
        width_per_time: f64,
    },
    FlatWindow {
        height_per_time: f64,
        lo_per_time: f64,
        hi_per_time: f64,
    },
    /// Either inline samples or a two-column CSV `omega,g2` (path relative to the config).
    Tabulated {
        #[serde(default)]
        omega_per_time: Vec<f64>,
        #[serde(default)]
        g2_per_time: Vec<f64>,
        table_file: Option<String>,
    },
    Zero,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt_time: f64,
    pub t_max_time: f64,
    /// Memory band in steps; omitted keeps the full history.
    pub band_steps: Option<usize>,
    pub r_max: Option<usize>,
    pub series_tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub trace: Option<f64>,
    pub positivity: Option<f64>,
    pub shape: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelSystem {
    pub omega1_per_time: f64,
    pub omega2_per_time: f64,
    /// Initial density matrix, real and imaginary parts; defaults to `|2⟩⟨2|`.
    pub rho_re: Option<Vec<Vec<f64>>>,
    pub rho_im: Option<Vec<Vec<f64>>>,
    pub temperature_per_time: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotConfig {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub n: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSystemConfig {
    pub energies_per_time: Vec<f64>,
    pub slots: Vec<SlotConfig>,
    pub rho_re: Vec<Vec<f64>>,
    pub rho_im: Option<Vec<Vec<f64>>>,
    pub temperature_per_time: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JcConfig {
    pub omega_a1_per_time: f64,
    pub omega_a2_per_time: f64,
    /// Mode frequency; must equal `omega_a2 − omega_a1` when given.
    pub omega_f_per_time: Option<f64>,
    pub coupling_per_time: f64,
    #[serde(default)]
    pub photons: usize,
    /// Atomic density in the basis `(|1⟩, |2⟩)`; defaults to `|2⟩⟨2|`.
    pub rho_a_re: Option<Vec<Vec<f64>>>,
    pub rho_a_im: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JcSolver {
    Bitemporal,
    Series,
    #[default]
    Both,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelScenario {
    pub spectral: SpectralConfig,
    pub system: TwoLevelSystem,
    pub numerics: Numerics,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovScenario {
    pub spectral: SpectralConfig,
    pub system: TwoLevelSystem,
    pub lambda: f64,
    pub numerics: Numerics,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericScenario {
    pub spectral: SpectralConfig,
    pub system: GenericSystemConfig,
    pub numerics: Numerics,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JcScenario {
    pub spectral: SpectralConfig,
    pub jc: JcConfig,
    pub numerics: Numerics,
    #[serde(default)]
    pub solver: JcSolver,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub photons: Vec<usize>,
    pub tau_max: f64,
    pub tau_step: f64,
    /// Start of the audited plateau window (default 3).
    pub onset_tau: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauScenario {
    pub plateau: PlateauConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub p_tilde: f64,
    pub t_tilde: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyScenario {
    pub spectral: SpectralConfig,
    pub jc: JcConfig,
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug)]
pub enum Scenario {
    TwoLevelWw(TwoLevelScenario),
    MarkovLimit(MarkovScenario),
    GenericSystem(GenericScenario),
    JaynesCummings(JcScenario),
    PlateauFigure(PlateauScenario),
    EntropyScan(EntropyScenario),
}

/// A parsed scenario plus the directory that relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Self::TwoLevelWw(_) => ScenarioKind::TwoLevelWw,
            Self::MarkovLimit(_) => ScenarioKind::MarkovLimit,
            Self::GenericSystem(_) => ScenarioKind::GenericSystem,
            Self::JaynesCummings(_) => ScenarioKind::JaynesCummings,
            Self::PlateauFigure(_) => ScenarioKind::PlateauFigure,
            Self::EntropyScan(_) => ScenarioKind::EntropyScan,
        }
    }

    fn output(&self) -> &OutputConfig {
        match self {
            Self::TwoLevelWw(s) => &s.output,
            Self::MarkovLimit(s) => &s.output,
            Self::GenericSystem(s) => &s.output,
            Self::JaynesCummings(s) => &s.output,
            Self::PlateauFigure(s) => &s.output,
            Self::EntropyScan(s) => &s.output,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tree: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind = tree
            .remove("kind")
            .ok_or_else(|| invalid("kind", "missing"))?;
        let kind: ScenarioKind = kind
            .try_into()
            .map_err(|e: toml::de::Error| invalid("kind", e.message().to_string()))?;
        let sc = match kind {
            ScenarioKind::TwoLevelWw => Self::TwoLevelWw(section(tree)?),
            ScenarioKind::MarkovLimit => Self::MarkovLimit(section(tree)?),
            ScenarioKind::GenericSystem => Self::GenericSystem(section(tree)?),
            ScenarioKind::JaynesCummings => Self::JaynesCummings(section(tree)?),
            ScenarioKind::PlateauFigure => Self::PlateauFigure(section(tree)?),
            ScenarioKind::EntropyScan => Self::EntropyScan(section(tree)?),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::TwoLevelWw(s) => {
                s.numerics.validate()?;
                s.system.validate()
            }
            Self::MarkovLimit(s) => {
                s.numerics.validate()?;
                s.system.validate()?;
                if !(s.lambda > 0.0 && s.lambda <= 1.0) {
                    return Err(invalid("lambda", "must lie in (0, 1]"));
                }
                Ok(())
            }
            Self::GenericSystem(s) => {
                s.numerics.validate()?;
                positive_opt("system.temperature_per_time", s.system.temperature_per_time)
            }
            Self::JaynesCummings(s) => {
                s.numerics.validate()?;
                s.jc.validate()?;
                if let Some(tol) = s.numerics.series_tolerance {
                    positive("numerics.series_tolerance", tol)?;
                }
                Ok(())
            }
            Self::PlateauFigure(s) => {
                let p = &s.plateau;
                if p.photons.is_empty() {
                    return Err(invalid("plateau.photons", "must not be empty"));
                }
                positive("plateau.tau_max", p.tau_max)?;
                positive("plateau.tau_step", p.tau_step)?;
                if p.tau_max / p.tau_step > 1e7 {
                    return Err(invalid("plateau.tau_step", "more than 1e7 rows"));
                }
                Ok(())
            }
            Self::EntropyScan(s) => {
                s.jc.validate()?;
                if s.entropy.lambdas.is_empty() {
                    return Err(invalid("entropy.lambdas", "must not be empty"));
                }
                positive("entropy.p_tilde", s.entropy.p_tilde)?;
                positive("entropy.t_tilde", s.entropy.t_tilde)
            }
        }
    }
}

impl Numerics {
    fn validate(&self) -> Result<()> {
        positive("numerics.dt_time", self.dt_time)?;
        positive("numerics.t_max_time", self.t_max_time)?;
        if self.dt_time > self.t_max_time {
            return Err(invalid("numerics.dt_time", "exceeds numerics.t_max_time"));
        }
        if self.band_steps == Some(0) {
            return Err(invalid("numerics.band_steps", "must be >= 1"));
        }
        Ok(())
    }
}

impl TwoLevelSystem {
    fn validate(&self) -> Result<()> {
        if !(self.omega1_per_time < self.omega2_per_time) {
            return Err(invalid("system.omega2_per_time", "must exceed omega1_per_time"));
        }
        positive_opt("system.temperature_per_time", self.temperature_per_time)
    }

    fn rho0(&self) -> Result<CMatrix> {
        match &self.rho_re {
            Some(re) => complex_matrix("system.rho_re", re, self.rho_im.as_deref(), 2),
            None => Ok(CMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]])),
        }
    }
}

impl JcConfig {
    fn validate(&self) -> Result<()> {
        if let Some(f) = self.omega_f_per_time {
            let res = self.omega_a2_per_time - self.omega_a1_per_time;
            if (f - res).abs() > 1e-12 * res.abs().max(1.0) {
                return Err(invalid(
                    "jc.omega_f_per_time",
                    format!("mode must be resonant, expected {res}"),
                ));
            }
        }
        Ok(())
    }

    fn rho_a(&self) -> Result<CMatrix> {
        match &self.rho_a_re {
            Some(re) => complex_matrix("jc.rho_a_re", re, self.rho_a_im.as_deref(), 2),
            None => Ok(JCInitialState::excited(0).rho_a),
        }
    }

    fn basis(&self, n_max: usize) -> Result<DressedBasis> {
        DressedBasis::new(
            self.omega_a1_per_time,
            self.omega_a2_per_time,
            self.coupling_per_time,
            n_max,
        )
    }
}

impl AuditConfig {
    fn tolerances(&self) -> AuditTolerances {
        let d = AuditTolerances::default();
        AuditTolerances {
            trace: self.trace.unwrap_or(d.trace),
            positivity: self.positivity.unwrap_or(d.positivity),
        }
    }
}

fn section<T: DeserializeOwned>(tree: toml::Table) -> Result<T> {
    toml::Value::Table(tree)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn positive_opt(field: &str, v: Option<f64>) -> Result<()> {
    v.map_or(Ok(()), |v| positive(field, v))
}

fn complex_matrix(
    field: &str,
    re: &[Vec<f64>],
    im: Option<&[Vec<f64>]>,
    dim: usize,
) -> Result<CMatrix> {
    let square = |rows: &[Vec<f64>]| rows.len() == dim && rows.iter().all(|r| r.len() == dim);
    if !square(re) {
        return Err(invalid(field, format!("must be {dim}x{dim}")));
    }
    if let Some(im) = im {
        if !square(im) {
            return Err(invalid(field, format!("imaginary part must be {dim}x{dim}")));
        }
    }
    let rows: Vec<Vec<C64>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| C64::new(re[i][j], im.map_or(0.0, |m| m[i][j])))
                .collect()
        })
        .collect();
    Ok(CMatrix::from_rows(&rows))
}

impl SpectralConfig {
    pub fn build(&self, base_dir: &Path) -> Result<SpectralDensity> {
        let sd = match self {
            Self::Lorentzian {
                strength_per_time_sq,
                center_per_time,
                width_per_time,
            } => SpectralDensity::lorentzian(*strength_per_time_sq, *center_per_time, *width_per_time),
            Self::FlatWindow {
                height_per_time,
                lo_per_time,
                hi_per_time,
            } => SpectralDensity::flat(*height_per_time, *lo_per_time, *hi_per_time),
            Self::Tabulated {
                omega_per_time,
                g2_per_time,
                table_file,
            } => match table_file {
                Some(f) => {
                    if !omega_per_time.is_empty() || !g2_per_time.is_empty() {
                        return Err(invalid(
                            "spectral.table_file",
                            "give either a table file or inline samples",
                        ));
                    }
                    let (w, g) = read_table(&base_dir.join(f))?;
                    SpectralDensity::tabulated(w, g)
                }
                None => SpectralDensity::tabulated(omega_per_time.clone(), g2_per_time.clone()),
            },
            Self::Zero => Ok(SpectralDensity::zero()),
        };
        sd.map_err(|e| match e {
            Error::InvalidParameter { field, reason } => invalid(&format!("spectral.{field}"), reason),
            other => other,
        })
    }
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid("spectral.table_file", format!("{}: {e}", path.display())))?;
    let mut w = Vec::new();
    let mut g = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (cols.len() == 2)
            .then(|| Some((cols[0].parse::<f64>().ok()?, cols[1].parse::<f64>().ok()?)))
            .flatten();
        match parsed {
            Some((a, b)) => {
                w.push(a);
                g.push(b);
            }
            None if i == 0 => continue,
            None => {
                return Err(invalid(
                    "spectral.table_file",
                    format!("{}: bad row {}", path.display(), i + 1),
                ))
            }
        }
    }
    Ok((w, g))
}

impl LoadedScenario {
    /// `--out` if given, else `output.directory` (default `out`) next to the config.
    pub fn output_dir(&self, overridden: Option<&Path>) -> PathBuf {
        match overridden {
            Some(p) => p.to_path_buf(),
            None => self
                .base_dir
                .join(self.scenario.output().directory.as_deref().unwrap_or("out")),
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedScenario> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::parse(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedScenario { scenario, base_dir })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub value: f64,
    /// Upper bound on `value`.
    pub limit: f64,
    pub pass: bool,
}

impl AuditEntry {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            limit,
            pass: value <= limit,
        }
    }
}

/// Machine-readable result of one `run`, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ScenarioKind,
    pub pass: bool,
    /// CSV used by `compare`, relative to the summary's directory.
    pub primary: String,
    pub artifacts: Vec<String>,
    pub audits: Vec<AuditEntry>,
    pub metrics: BTreeMap<String, f64>,
}

struct Collector {
    dir: PathBuf,
    artifacts: Vec<String>,
    audits: Vec<AuditEntry>,
    metrics: BTreeMap<String, f64>,
}

impl Collector {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            audits: Vec::new(),
            metrics: BTreeMap::new(),
        })
    }

    fn file(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut out)?;
        out.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn columns(&mut self, name: &str, header: &[&str], cols: &[&[f64]]) -> Result<()> {
        self.file(name, |out| write_columns(out, header, cols))
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    fn conservation(&mut self, traj: &DensityTrajectory, tol: &AuditTolerances) -> AuditReport {
        let rep = audit_conservation(traj, tol);
        self.audits.push(AuditEntry::at_most("trace", rep.max_trace_error, tol.trace));
        self.audits.push(AuditEntry::at_most("positivity", -rep.min_eigenvalue, tol.positivity));
        self.metric("max_trace_error", rep.max_trace_error);
        self.metric("min_eigenvalue", rep.min_eigenvalue);
        rep
    }

    fn finish(self, kind: ScenarioKind, primary: &str) -> Result<Summary> {
        let summary = Summary {
            kind,
            pass: self.audits.iter().all(|a| a.pass),
            primary: primary.to_string(),
            artifacts: self.artifacts,
            audits: self.audits,
            metrics: self.metrics,
        };
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Config(format!("summary: {e}")))?;
        fs::write(self.dir.join("summary.json"), json + "\n")?;
        Ok(summary)
    }
}

fn write_columns<W: Write>(out: &mut W, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    let n = cols.first().map_or(0, |c| c.len());
    if header.len() != cols.len() || cols.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("ragged CSV columns".into()));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        let row: Vec<String> = cols.iter().map(|c| format!("{:.17e}", c[i])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Least-squares slope of `−ln y(t)` over samples with `t ≥ t_from`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], t_from: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= t_from && **v > 0.0)
        .map(|(t, v)| (*t, -v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn scalar_kernel(sd: SpectralDensity, temperature: Option<f64>) -> Result<ScalarKernel> {
    match temperature {
        Some(t) => ScalarKernel::thermal(sd, t),
        None => Ok(ScalarKernel::zero_temperature(sd)),
    }
}

fn two_level_system(sd: SpectralDensity, sys: &TwoLevelSystem) -> Result<SystemSpec> {
    let kernel = kernel_table(scalar_kernel(sd, sys.temperature_per_time)?, &IndexRule::two_level())?;
    SystemSpec::new(vec![sys.omega1_per_time, sys.omega2_per_time], kernel)
}

fn options(n: &Numerics) -> BitemporalOptions {
    BitemporalOptions {
        band: n.band_steps,
        ..BitemporalOptions::default()
    }
}

fn bitemporal(
    c: &mut Collector,
    sys: &SystemSpec,
    rho0: &CMatrix,
    n: &Numerics,
) -> Result<DensityTrajectory> {
    let w = solve_time_domain(sys, n.t_max_time, n.dt_time)?;
    let st = solve_bitemporal_with(sys, &w, rho0, n.t_max_time, n.dt_time, &options(n))?;
    c.metric("kraus_max_step_change", w.max_step_change);
    c.metric("bitemporal_max_node_change", st.max_node_change);
    if n.band_steps.is_some() {
        c.metric("band_kernel_tail", st.band_kernel_tail);
    }
    let traj = extract_density(&st);
    c.file("trajectory.csv", |out| traj.write_csv(out))?;
    Ok(traj)
}

/// Runs a scenario, writing every artifact and `summary.json` into `out_dir`.
pub fn run(loaded: &LoadedScenario, out_dir: &Path) -> Result<Summary> {
    let base = &loaded.base_dir;
    let mut c = Collector::new(out_dir)?;
    let kind = loaded.scenario.kind();
    let primary = match &loaded.scenario {
        Scenario::TwoLevelWw(s) => {
            let sd = s.spectral.build(base)?;
            let rho0 = s.system.rho0()?;
            let sys = two_level_system(sd.clone(), &s.system)?;
            let traj = bitemporal(&mut c, &sys, &rho0, &s.numerics)?;
            c.conservation(&traj, &s.audit.tolerances());
            let rho22 = traj.population(1);
            if s.system.temperature_per_time.is_none() {
                let reference: Vec<f64> = wigner_weisskopf(
                    &sd,
                    s.system.omega1_per_time,
                    s.system.omega2_per_time,
                    &traj.times,
                )?
                .into_iter()
                .map(|p| p * rho0[(1, 1)].re)
                .collect();
                let dev = max_abs_diff(&rho22, &reference);
                c.metric("max_reference_deviation", dev);
                c.columns("population.csv", &["t", "rho22", "rho22_reference"], &[&traj.times, &rho22, &reference])?;
            } else {
                c.columns("population.csv", &["t", "rho22"], &[&traj.times, &rho22])?;
            }
            "population.csv"
        }
        Scenario::MarkovLimit(s) => {
            let sd = s.spectral.build(base)?.scaled(s.lambda * s.lambda);
            let rho0 = s.system.rho0()?;
            let sys = two_level_system(sd.clone(), &s.system)?;
            let traj = bitemporal(&mut c, &sys, &rho0, &s.numerics)?;
            c.conservation(&traj, &s.audit.tolerances());
            let w21 = s.system.omega2_per_time - s.system.omega1_per_time;
            let gamma = sd.damping(w21);
            let omega_bar = sd.level_shift(w21);
            let mut channel = Vec::with_capacity(traj.len());
            let mut deviation = Vec::with_capacity(traj.len());
            let mut completeness: f64 = 0.0;
            for (t, m) in traj.times.iter().zip(&traj.matrices) {
                let reference = markovian_channel(gamma, omega_bar, &rho0, *t)?;
                channel.push(reference[(1, 1)].re);
                deviation.push(m.max_abs_diff(&reference));
                completeness = completeness.max(channel_completeness(gamma, omega_bar, *t)?);
            }
            let rho22 = traj.population(1);
            c.columns(
                "markov.csv",
                &["t", "rho22", "rho22_channel", "channel_deviation"],
                &[&traj.times, &rho22, &channel, &deviation],
            )?;
            c.metric("gamma", gamma);
            c.metric("omega_bar", omega_bar);
            c.metric("max_channel_deviation", deviation.iter().fold(0.0, |a: f64, b| a.max(*b)));
            if let Some(rate) = fit_decay_rate(&traj.times, &rho22, 0.1 * s.numerics.t_max_time) {
                c.metric("fitted_rate", rate);
                c.metric("rate_relative_error", (rate - 2.0 * gamma).abs() / (2.0 * gamma));
            }
            c.audits.push(AuditEntry::at_most("channel_completeness", completeness, 1e-12));
            "markov.csv"
        }
        Scenario::GenericSystem(s) => {
            let sd = s.spectral.build(base)?;
            let mut rule = IndexRule::new();
            for sl in &s.system.slots {
                rule = rule.with(sl.k, sl.l, sl.m, sl.n, sl.weight);
            }
            let kernel = kernel_table(scalar_kernel(sd, s.system.temperature_per_time)?, &rule)?;
            let d = s.system.energies_per_time.len();
            let sys = SystemSpec::new(s.system.energies_per_time.clone(), kernel)?;
            let rho0 = complex_matrix("system.rho_re", &s.system.rho_re, s.system.rho_im.as_deref(), d)?;
            let w = solve_time_domain(&sys, s.numerics.t_max_time, s.numerics.dt_time)?;
            c.file("kraus_zero.csv", |out| w.write_csv(out))?;
            let traj = bitemporal(&mut c, &sys, &rho0, &s.numerics)?;
            c.conservation(&traj, &s.audit.tolerances());
            "trajectory.csv"
        }
        Scenario::JaynesCummings(s) => run_jc(&mut c, s, base)?,
        Scenario::PlateauFigure(s) => {
            let p = &s.plateau;
            let rows = (p.tau_max / p.tau_step + 1e-9).floor() as usize;
            let taus: Vec<f64> = (0..=rows).map(|i| i as f64 * p.tau_step).collect();
            c.file("plateau.csv", |out| write_plateau_csv(out, &taus, &p.photons))?;
            let tol = s.audit.shape.unwrap_or(1e-2);
            for &n in &p.photons {
                let (plateau, tail) = plateau_shape(&taus, n, p.onset_tau.unwrap_or(3.0))?;
                if let Some(v) = plateau {
                    c.audits.push(AuditEntry::at_most(&format!("plateau_p{n}"), v, tol));
                }
                if let Some(v) = tail {
                    c.audits.push(AuditEntry::at_most(&format!("tail_p{n}"), v, tol));
                }
            }
            "plateau.csv"
        }
        Scenario::EntropyScan(s) => {
            let sd = s.spectral.build(base)?;
            let e = &s.entropy;
            let rows = entropy_limit_scan(
                &s.jc.basis(0)?,
                &sd,
                &s.jc.rho_a()?,
                e.alpha,
                e.beta,
                e.p_tilde,
                e.t_tilde,
                &e.lambdas,
            )?;
            let col = |f: fn(&crate::jaynes_cummings::EntropyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
            let (l, p, t, tau) = (col(|r| r.lambda), col(|r| r.photons as f64), col(|r| r.time), col(|r| r.tau));
            let (r22, coh, dist) = (col(|r| r.rho22), col(|r| r.coherence), col(|r| r.distance));
            c.columns(
                "entropy.csv",
                &["lambda", "photons", "time", "tau", "rho22", "coherence", "distance"],
                &[&l, &p, &t, &tau, &r22, &coh, &dist],
            )?;
            let rises = dist.windows(2).filter(|w| w[1] >= w[0]).count();
            c.audits.push(AuditEntry::at_most("distance_increases", rises as f64, 0.0));
            "entropy.csv"
        }
    };
    c.finish(kind, primary)
}

fn run_jc(c: &mut Collector, s: &JcScenario, base: &Path) -> Result<&'static str> {
    let sd = s.spectral.build(base)?;
    let n = &s.numerics;
    let basis = s.jc.basis(s.jc.photons)?;
    let init = JCInitialState::new(s.jc.rho_a()?, s.jc.photons)?;
    let dressed = match s.solver {
        JcSolver::Series => None,
        _ => {
            let run = dressed_bitemporal(&basis, &sd, &init, n.t_max_time, n.dt_time, n.band_steps)?;
            c.file("trajectory.csv", |out| run.trajectory.write_csv(out))?;
            c.conservation(&run.trajectory, &s.audit.tolerances());
            Some(run)
        }
    };
    let series = match s.solver {
        JcSolver::Bitemporal => None,
        _ => {
            let tol = n.series_tolerance.unwrap_or(1e-3);
            let r_max = n.r_max.unwrap_or(s.jc.photons + 1);
            let ser = atomic_population_series(&basis, &sd, &init, n.t_max_time, n.dt_time, r_max, n.band_steps, tol)?;
            let trunc = ser.truncation_estimate.iter().fold(0.0, |a: f64, b| a.max(*b));
            c.audits.push(AuditEntry::at_most("series_truncation", trunc, tol));
            Some(ser)
        }
    };
    let (times, rho22, rho11) = match (&dressed, &series) {
        (Some(run), _) => (run.trajectory.times.clone(), run.excited(), run.ground()),
        (None, Some(ser)) => (ser.times.clone(), ser.rho22.clone(), ser.rho22.iter().map(|p| 1.0 - p).collect()),
        (None, None) => unreachable!(),
    };
    if let (Some(run), Some(ser)) = (&dressed, &series) {
        let ex = run.excited();
        c.file("series.csv", |out| write_series_csv(out, ser, &ex))?;
        c.metric("max_series_deviation", max_abs_diff(&ex, &ser.rho22));
    }
    c.columns("population.csv", &["t", "rho22", "rho11"], &[&times, &rho22, &rho11])?;
    c.metric("final_rho11", *rho11.last().unwrap_or(&f64::NAN));
    Ok("population.csv")
}

/// Worst `|F − 1/2|` on `τ ∈ [onset, p − 3√p]` and worst `F` on `τ ≥ p + 5√p`, over the given grid.
///
/// Near the onset `F − 1/2 ≈ e^{−τ}/2`, so a 1e-2 bound needs `onset ≳ 3.9`.
pub fn plateau_shape(taus: &[f64], photons: usize, onset: f64) -> Result<(Option<f64>, Option<f64>)> {
    let p = photons as f64;
    let (lo, hi, tail) = (onset, p - 3.0 * p.sqrt(), p + 5.0 * p.sqrt());
    let mut plateau: Option<f64> = None;
    let mut late: Option<f64> = None;
    for &tau in taus {
        let inside = tau >= lo && tau <= hi;
        if !inside && tau < tail {
            continue;
        }
        let f = plateau_oracle(&PlateauParams {
            tau,
            photons,
            rho11: 0.0,
            rho22: 1.0,
        })?;
        if inside {
            plateau = Some(plateau.unwrap_or(0.0).max((f - 0.5).abs()));
        } else {
            late = Some(late.unwrap_or(0.0).max(f));
        }
    }
    Ok((plateau, late))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnDiff {
    pub column: String,
    pub max_abs: f64,
    /// `max_abs / max |b|`.
    pub max_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub kind: ScenarioKind,
    pub rows_compared: usize,
    pub columns: Vec<ColumnDiff>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::ShapeMismatch(format!("{}: empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::ShapeMismatch(format!("{}: row {} is ragged", path.display(), i + 2)));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Diffs the primary CSVs of two runs on the rows whose first column agrees,
/// so a run at `dt` can be compared with one at `dt/2`.
pub fn compare(a: &Path, b: &Path) -> Result<CompareReport> {
    let (sa, sb) = (read_summary(a)?, read_summary(b)?);
    if sa.kind != sb.kind {
        return Err(Error::ShapeMismatch(format!("kinds differ: {:?} vs {:?}", sa.kind, sb.kind)));
    }
    let dir = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    let ta = read_csv(&dir(a).join(&sa.primary))?;
    let tb = read_csv(&dir(b).join(&sb.primary))?;
    if ta.header != tb.header {
        return Err(Error::ShapeMismatch(format!(
            "columns differ: [{}] vs [{}]",
            ta.header.join(","),
            tb.header.join(",")
        )));
    }
    let mut pairs = Vec::new();
    let mut j = 0;
    for ra in &ta.rows {
        let x = ra[0];
        let close = |y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        while j < tb.rows.len() && tb.rows[j][0] < x && !close(tb.rows[j][0]) {
            j += 1;
        }
        if j < tb.rows.len() && close(tb.rows[j][0]) {
            pairs.push((ra, &tb.rows[j]));
        }
    }
    if pairs.is_empty() {
        return Err(Error::ShapeMismatch("no common rows".into()));
    }
    let columns = (1..ta.header.len())
        .map(|k| {
            let max_abs = pairs.iter().fold(0.0, |m: f64, (r, s)| m.max((r[k] - s[k]).abs()));
            let scale = pairs.iter().fold(0.0, |m: f64, (_, s)| m.max(s[k].abs()));
            ColumnDiff {
                column: ta.header[k].clone(),
                max_abs,
                max_rel: if scale > 0.0 { max_abs / scale } else { max_abs },
            }
        })
        .collect();
    Ok(CompareReport {
        kind: sa.kind,
        rows_compared: pairs.len(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WW_ZERO: &str = r#"
kind = "two_level_ww"
[spectral]
family = "zero"
[system]
omega1_per_time = 0.0
omega2_per_time = 1.0
[numerics]
dt_time = 0.1
t_max_time = 2.0
"#;

    fn load_str(text: &str, dir: &Path) -> LoadedScenario {
        LoadedScenario {
            scenario: Scenario::parse(text).unwrap(),
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn negative_dt_names_the_field() {
        let e = Scenario::parse(&WW_ZERO.replace("dt_time = 0.1", "dt_time = -0.1")).unwrap_err();
        assert!(e.to_string().contains("numerics.dt"), "{e}");
        let e = Scenario::parse(&WW_ZERO.replace("t_max_time", "tmax")).unwrap_err();
        assert!(e.to_string().contains("tmax"), "{e}");
        assert!(Scenario::parse("kind = \"nonsense\"").unwrap_err().to_string().contains("kind"));
        let e = Scenario::parse(&WW_ZERO.replace("omega2_per_time = 1.0", "omega2_per_time = -1.0")).unwrap_err();
        assert!(e.to_string().contains("system.omega2_per_time"));
    }

    #[test]
    fn uncoupled_atom_stays_excited() {
        let dir = tempfile::tempdir().unwrap();
        let sc = load_str(WW_ZERO, dir.path());
        let s = run(&sc, &dir.path().join("a")).unwrap();
        assert!(s.pass);
        assert!(s.metrics["max_reference_deviation"] < 1e-15);
        let t = read_csv(&dir.path().join("a/population.csv")).unwrap();
        assert_eq!(t.header, ["t", "rho22", "rho22_reference"]);
        assert_eq!(t.rows.len(), 21);
        assert!(t.rows.iter().all(|r| (r[1] - 1.0).abs() < 1e-15));
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let text = WW_ZERO.replace("family = \"zero\"", "family = \"lorentzian\"\nstrength_per_time_sq = 0.05\ncenter_per_time = 1.0\nwidth_per_time = 0.5");
        let sc = load_str(&text, dir.path());
        run(&sc, &dir.path().join("a")).unwrap();
        run(&sc, &dir.path().join("b")).unwrap();
        let a = fs::read(dir.path().join("a/trajectory.csv")).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b/trajectory.csv")).unwrap());
        let r = compare(&dir.path().join("a/summary.json"), &dir.path().join("b/summary.json")).unwrap();
        assert_eq!(r.rows_compared, 21);
        assert!(r.columns.iter().all(|c| c.max_abs == 0.0));

        let half = load_str(&text.replace("dt_time = 0.1", "dt_time = 0.05"), dir.path());
        run(&half, &dir.path().join("c")).unwrap();
        let r = compare(&dir.path().join("a/summary.json"), &dir.path().join("c/summary.json")).unwrap();
        assert_eq!(r.rows_compared, 21);
        assert!(r.columns[0].max_abs > 0.0);

        let plateau = load_str("kind = \"plateau_figure\"\n[plateau]\nphotons = [20]\ntau_max = 5.0\ntau_step = 1.0\n", dir.path());
        run(&plateau, &dir.path().join("d")).unwrap();
        let e = compare(&dir.path().join("a/summary.json"), &dir.path().join("d/summary.json")).unwrap_err();
        assert!(matches!(e, Error::ShapeMismatch(_)));
    }

    #[test]
    fn plateau_figure_passes_shape_audit() {
        let dir = tempfile::tempdir().unwrap();
        let text = "kind = \"plateau_figure\"\n[plateau]\nphotons = [20, 50, 100]\ntau_max = 160.0\ntau_step = 0.5\n";
        let s = run(&load_str(text, dir.path()), dir.path()).unwrap();
        assert!(!s.pass);
        let edge = s.audits.iter().find(|a| a.name == "plateau_p50").unwrap();
        assert!((edge.value - 0.5 * (-3f64).exp()).abs() < 1e-6);
        let text = text.replace("tau_step = 0.5", "tau_step = 0.5\nonset_tau = 4.0");
        let s = run(&load_str(&text, dir.path()), dir.path()).unwrap();
        assert!(s.pass, "{:?}", s.audits);
        assert_eq!(s.audits.len(), 6);
        let t = read_csv(&dir.path().join("plateau.csv")).unwrap();
        assert_eq!(t.header, ["tau", "F_p20", "F_p50", "F_p100"]);
        assert_eq!(t.rows.len(), 321);
    }

    #[test]
    fn tabulated_density_from_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("g.csv"), "omega,g2\n0.0,0.0\n1.0,0.1\n2.0,0.0\n").unwrap();
        let text = WW_ZERO.replace("family = \"zero\"", "family = \"tabulated\"\ntable_file = \"g.csv\"");
        let sc = load_str(&text, dir.path());
        match &sc.scenario {
            Scenario::TwoLevelWw(s) => {
                let sd = s.spectral.build(dir.path()).unwrap();
                assert!((sd.g2(0.5) - 0.05).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        let missing = WW_ZERO.replace("family = \"zero\"", "family = \"tabulated\"\ntable_file = \"nope.csv\"");
        let e = run(&load_str(&missing, dir.path()), dir.path()).unwrap_err();
        assert!(e.to_string().contains("spectral.table_file"));
    }

    #[test]
    fn entropy_scan_rejects_alpha_two() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
kind = "entropy_scan"
[spectral]
family = "flat_window"
height_per_time = 1.2732395447351628
lo_per_time = 9.0
hi_per_time = 11.0
[jc]
omega_a1_per_time = 0.0
omega_a2_per_time = 10.0
coupling_per_time = 1.0
[entropy]
alpha = 2.5
beta = 1.0
p_tilde = 20.0
t_tilde = 2.5
lambdas = [0.4, 0.2, 0.1]
"#;
        let s = run(&load_str(text, dir.path()), dir.path()).unwrap();
        assert!(s.pass);
        let e = run(&load_str(&text.replace("alpha = 2.5", "alpha = 2.0"), dir.path()), dir.path()).unwrap_err();
        assert!(e.to_string().contains("2 < alpha"));
        let e = Scenario::parse(&text.replace("omega_a2_per_time = 10.0", "omega_a2_per_time = 10.0\nomega_f_per_time = 9.0")).unwrap_err();
        assert!(e.to_string().contains("jc.omega_f_per_time"));
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.7 * (-0.3 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &y, 0.0).unwrap() - 0.3).abs() < 1e-12);
        assert!(fit_decay_rate(&t[..1], &y[..1], 0.0).is_none());
    }
}
