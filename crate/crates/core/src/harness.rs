//! Experiment configuration, the solve / sweep / norm-tracking / kernel
//! tabulation drivers, and deterministic report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::biot_savart::REALITY_TOL;
use crate::dump::{fmt_f64, write_atomic, write_dump, DumpMeta};
use crate::error::{Error, Result};
use crate::field::{make_grid, make_initial_data, Grid, InitialSpec, PhysParams, Preset, SpectralVectorField, GRADE_FACTOR};
use crate::kernels::{fit_residual_bound, heat_dirichlet, heat_neumann, robin_g1, robin_residual, FitGrid, KernelQuery, ResidualFit};
use crate::nonlinear::ProductPlan;
use crate::norms::{cumulative_norm, NormParams, NormReport, MU_ENDPOINT_OFFSET, WEIGHT_DECAY_C, WEIGHT_DECAY_C_PRIME, Z_ORDER};
use crate::stepper::{kato_dissipation, solve_euler, solve_navier_stokes, StepConfig, Trajectory, TAIL_MASS_BOUND};

/// Every config key, in manifest order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "amplitude",
    "seed",
    "K",
    "Nz",
    "Z_max",
    "T",
    "dt",
    "nu",
    "nu_list",
    "mu0",
    "gamma",
    "eps0",
    "a",
    "theta0",
    "kato_c",
    "mu_samples",
    "ratio_bound",
    "picard_tol",
    "picard_max",
    "s_substeps",
    "tol_div",
    "snapshot_every",
    "noslip_tol",
    "enforce_noslip",
    "kernel_t",
    "kernel_xi",
];

/// Multiplier in the default rule `gamma = GAMMA_FACTOR (1 + |||omega_0|||_0) / mu0`.
pub const GAMMA_FACTOR: f64 = 4.0;
/// Number of smallest viscosities used in the rate fit.
pub const RATE_FIT_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub amplitude: f64,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Nz")]
    pub nz: usize,
    #[serde(rename = "Z_max")]
    pub z_max: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub nu: f64,
    pub nu_list: Vec<f64>,
    pub mu0: f64,
    /// `None`: the default rule.
    pub gamma: Option<f64>,
    pub eps0: f64,
    pub a: f64,
    pub theta0: f64,
    pub kato_c: f64,
    pub mu_samples: usize,
    pub ratio_bound: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub s_substeps: usize,
    pub tol_div: f64,
    pub snapshot_every: usize,
    pub noslip_tol: f64,
    pub enforce_noslip: bool,
    pub kernel_t: f64,
    pub kernel_xi: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PhysParams::default();
        let s = StepConfig::default();
        Self {
            preset: "cross-roll".into(),
            amplitude: 1.0,
            seed: 0,
            k: 8,
            nz: 192,
            z_max: 4.0,
            t_end: 0.1,
            dt: s.dt,
            nu: p.nu,
            nu_list: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            mu0: p.mu0,
            gamma: None,
            eps0: p.eps0,
            a: p.a,
            theta0: p.theta0,
            kato_c: 5.0,
            mu_samples: 8,
            ratio_bound: 3.0,
            picard_tol: s.picard_tol,
            picard_max: s.picard_max,
            s_substeps: s.s_substeps,
            tol_div: s.tol_div,
            snapshot_every: s.snapshot_every,
            noslip_tol: s.noslip_tol,
            enforce_noslip: s.enforce_noslip,
            kernel_t: 0.1,
            kernel_xi: 1.0,
        }
    }
}

fn cfg_err(msg: String) -> Error {
    Error::Config(msg)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| cfg_err(format!("`{key}`: cannot parse `{v}`")))
}

impl ExperimentConfig {
    /// Flat `key = value` text; `#` starts a comment. Unknown or repeated
    /// keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", ln + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), ln + 1).is_some() {
                return Err(cfg_err(format!("line {}: `{key}` given twice", ln + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => self.preset = v.to_string(),
            "amplitude" => self.amplitude = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "K" => self.k = parse_num(key, v)?,
            "Nz" => self.nz = parse_num(key, v)?,
            "Z_max" => self.z_max = parse_num(key, v)?,
            "T" => self.t_end = parse_num(key, v)?,
            "dt" => self.dt = parse_num(key, v)?,
            "nu" => self.nu = parse_num(key, v)?,
            "nu_list" => {
                self.nu_list = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "mu0" => self.mu0 = parse_num(key, v)?,
            "gamma" => self.gamma = if v == "auto" { None } else { Some(parse_num(key, v)?) },
            "eps0" => self.eps0 = parse_num(key, v)?,
            "a" => self.a = parse_num(key, v)?,
            "theta0" => self.theta0 = parse_num(key, v)?,
            "kato_c" => self.kato_c = parse_num(key, v)?,
            "mu_samples" => self.mu_samples = parse_num(key, v)?,
            "ratio_bound" => self.ratio_bound = parse_num(key, v)?,
            "picard_tol" => self.picard_tol = parse_num(key, v)?,
            "picard_max" => self.picard_max = parse_num(key, v)?,
            "s_substeps" => self.s_substeps = parse_num(key, v)?,
            "tol_div" => self.tol_div = parse_num(key, v)?,
            "snapshot_every" => self.snapshot_every = parse_num(key, v)?,
            "noslip_tol" => self.noslip_tol = parse_num(key, v)?,
            "enforce_noslip" => self.enforce_noslip = parse_num(key, v)?,
            "kernel_t" => self.kernel_t = parse_num(key, v)?,
            "kernel_xi" => self.kernel_xi = parse_num(key, v)?,
            other => return Err(cfg_err(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let as_cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => cfg_err(other.to_string()),
        };
        Preset::parse(&self.preset, self.seed).map_err(as_cfg)?;
        self.phys(self.nu, self.gamma.unwrap_or(1.0)).validate().map_err(as_cfg)?;
        self.step_config().validate().map_err(as_cfg)?;
        if !(self.t_end > 0.0 && self.t_end <= 1.0) {
            return Err(cfg_err(format!("T = {} outside (0, 1]", self.t_end)));
        }
        if self.nu_list.iter().any(|&n| !(n > 0.0 && n <= 1.0)) {
            return Err(cfg_err("nu_list entries must lie in (0, 1]".into()));
        }
        if self.nu_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(cfg_err("nu_list must be strictly decreasing".into()));
        }
        if !(self.kato_c > 0.0) {
            return Err(cfg_err(format!("kato_c = {} must be positive", self.kato_c)));
        }
        if self.mu_samples < 8 {
            return Err(cfg_err(format!("mu_samples = {} < 8", self.mu_samples)));
        }
        if !(self.ratio_bound > 0.0) {
            return Err(cfg_err("ratio_bound must be positive".into()));
        }
        if !(self.kernel_t > 0.0 && self.kernel_xi >= 0.0) {
            return Err(cfg_err("kernel_t must be positive and kernel_xi non-negative".into()));
        }
        if !(self.amplitude.is_finite()) {
            return Err(cfg_err("amplitude must be finite".into()));
        }
        make_grid(self.k, self.nz, self.z_max, self.nu_min(), self.mu0).map_err(as_cfg)?;
        Ok(())
    }

    pub fn phys(&self, nu: f64, gamma: f64) -> PhysParams {
        PhysParams { nu, mu0: self.mu0, gamma, eps0: self.eps0, a: self.a, theta0: self.theta0 }
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            picard_tol: self.picard_tol,
            picard_max: self.picard_max,
            s_substeps: self.s_substeps,
            tol_div: self.tol_div,
            snapshot_every: self.snapshot_every,
            noslip_tol: self.noslip_tol,
            enforce_noslip: self.enforce_noslip,
            nonlinear: true,
        }
    }

    /// Smallest viscosity the grid has to resolve.
    pub fn nu_min(&self) -> f64 {
        self.nu_list.iter().cloned().fold(self.nu, f64::min)
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(make_grid(self.k, self.nz, self.z_max, self.nu_min(), self.mu0)?))
    }

    pub fn initial_data(&self, grid: &Arc<Grid>) -> Result<SpectralVectorField> {
        let spec = InitialSpec { preset: Preset::parse(&self.preset, self.seed)?, amplitude: self.amplitude };
        make_initial_data(&spec, grid, &self.phys(self.nu, self.gamma.unwrap_or(1.0)))
    }
}

/// Git blob id of `bytes` in the SHA-256 object format:
/// `sha256("blob <len>\0" + bytes)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Run manifest: parameters, frozen constants and derived quantities.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub constants: BTreeMap<String, f64>,
    pub derived: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub status: String,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, config_text: &str) -> Self {
        let mut constants = BTreeMap::new();
        constants.insert("grade_factor".into(), GRADE_FACTOR);
        constants.insert("tail_mass_bound".into(), TAIL_MASS_BOUND);
        constants.insert("reality_tol".into(), REALITY_TOL);
        constants.insert("mu_endpoint_offset".into(), MU_ENDPOINT_OFFSET);
        constants.insert("weight_decay_c".into(), WEIGHT_DECAY_C);
        constants.insert("weight_decay_c_prime".into(), WEIGHT_DECAY_C_PRIME);
        constants.insert("gamma_factor".into(), GAMMA_FACTOR);
        constants.insert("rate_fit_points".into(), RATE_FIT_POINTS as f64);
        constants.insert("z_norm_order".into(), Z_ORDER as f64);
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: content_hash(config_text.as_bytes()),
            config: cfg.clone(),
            constants,
            derived: BTreeMap::new(),
            outputs: Vec::new(),
            status: "ok".into(),
        }
    }

    pub fn add_grid(&mut self, grid: &Grid) {
        self.derived.insert("grid_beta".into(), grid.beta());
        self.derived.insert("grid_first_cell".into(), grid.z()[1]);
        self.derived.insert("fft_size".into(), ProductPlan::new(grid.k()).fft_size() as f64);
        self.derived.insert("dealias_bound".into(), ProductPlan::new(grid.k()).dealias_bound() as f64);
    }
}

/// Writes a text file atomically and records it in the manifest.
fn emit(out: &Path, name: &str, text: &str, manifest: &mut Manifest) -> Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join(name), text.as_bytes())?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn finish(out: &Path, mut manifest: Manifest, summary: &str) -> Result<()> {
    emit(out, "summary.txt", summary, &mut manifest)?;
    manifest.outputs.push("manifest.json".into());
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(&out.join("manifest.json"), json.as_bytes())
}

fn csv_row(cols: &[String]) -> String {
    let mut s = cols.join(",");
    s.push('\n');
    s
}

/// Outcome of a single viscous run.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub trajectory: Trajectory,
    pub dumps: Vec<PathBuf>,
}

/// `solve`: one NS run, field dumps per snapshot, energy and slip series.
pub fn run_solve(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<SolveOutcome> {
    let grid = cfg.grid()?;
    let omega0 = cfg.initial_data(&grid)?;
    let params = cfg.phys(cfg.nu, cfg.gamma.unwrap_or(1.0));
    let mut manifest = Manifest::new("solve", cfg, config_text);
    manifest.add_grid(&grid);
    let traj = match solve_navier_stokes(&omega0, cfg.t_end, &params, &cfg.step_config()) {
        Ok(t) => t,
        Err(e) => {
            manifest.status = format!("failed: {e}");
            finish(out, manifest, &format!("solve failed: {e}\n"))?;
            return Err(e);
        }
    };
    let mut dumps = Vec::new();
    for (i, s) in traj.snapshots.iter().enumerate() {
        let stem = format!("omega_{i:04}");
        let meta = DumpMeta { t: s.t, grid: grid.spec(), params, label: cfg.preset.clone() };
        dumps.push(write_dump(out, &stem, &s.omega, &meta)?);
        manifest.outputs.push(format!("{stem}.csv"));
        manifest.outputs.push(format!("{stem}.json"));
    }
    let mut series = csv_row(&["t".into(), "energy".into(), "noslip_relative".into()]);
    for ((t, e), (_, s)) in traj.energy.iter().zip(&traj.noslip) {
        series += &csv_row(&[fmt_f64(*t), fmt_f64(*e), fmt_f64(*s)]);
    }
    emit(out, "energy.csv", &series, &mut manifest)?;
    let mut snaps = csv_row(&["index".into(), "t".into(), "energy".into(), "noslip_residual".into(), "max_u".into()]);
    for (i, s) in traj.snapshots.iter().enumerate() {
        snaps += &csv_row(&[i.to_string(), fmt_f64(s.t), fmt_f64(s.energy), fmt_f64(s.noslip_residual), fmt_f64(s.u.max_abs())]);
    }
    emit(out, "snapshots.csv", &snaps, &mut manifest)?;
    let max_slip = traj.max_noslip();
    manifest.derived.insert("max_noslip_relative".into(), max_slip);
    let summary = format!(
        "solve: preset {} nu {} T {} dt {}\nsnapshots {}\nenergy {} -> {}\nmax relative no-slip residual {:e}\n",
        cfg.preset,
        cfg.nu,
        cfg.t_end,
        cfg.dt,
        traj.snapshots.len(),
        traj.energy[0].1,
        traj.energy.last().map(|e| e.1).unwrap_or(0.0),
        max_slip
    );
    finish(out, manifest, &summary)?;
    Ok(SolveOutcome { trajectory: traj, dumps })
}

/// Per-viscosity results of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub nu: f64,
    /// `sup_t ||u^nu - u_Euler||_{L^2}`
    pub error: f64,
    pub kato: f64,
    pub max_noslip: f64,
    /// largest per-step relative energy change
    pub max_energy_increase: f64,
    /// `(t, ||u^nu - u_Euler||_{L^2})`
    pub error_series: Vec<(f64, f64)>,
    /// `(t, |||omega|||_t)` at snapshots inside the admissible time range
    pub norm_series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// `p` in `E ~ C nu^p` over the smallest viscosities
    pub rate: Option<f64>,
    pub gamma: f64,
    /// set when a run failed; entries hold the completed viscosities
    pub failure: Option<String>,
}

impl SweepResult {
    pub fn error_decreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].error < w[0].error)
    }
    pub fn kato_decreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].kato < w[0].kato)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 || pts.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return None;
    }
    let n = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// `max_n (E_{n+1} - E_n) / E_n` over the recorded steps.
pub fn max_energy_increase(traj: &Trajectory) -> f64 {
    traj.energy
        .windows(2)
        .map(|w| if w[0].1 > 0.0 { (w[1].1 - w[0].1) / w[0].1 } else { w[1].1 - w[0].1 })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn l2_distance(a: &SpectralVectorField, b: &SpectralVectorField) -> Result<f64> {
    Ok(a.sub(b)?.l2_norm_sq().sqrt())
}

/// `gamma` from the config or the default rule, with `|||omega_0|||_0`.
pub fn resolve_gamma(cfg: &ExperimentConfig, omega0: &SpectralVectorField) -> Result<(f64, NormReport)> {
    let np = NormParams::new(cfg.phys(cfg.nu, 1.0), cfg.mu_samples)?;
    let r0 = cumulative_norm(omega0, 0.0, &np)?;
    let gamma = cfg.gamma.unwrap_or(GAMMA_FACTOR * (1.0 + r0.triple) / cfg.mu0);
    Ok((gamma, r0))
}

/// Euler once, then NS for each viscosity on the same grid and snapshot times.
pub fn run_inviscid_limit_experiment(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let grid = cfg.grid()?;
    let omega0 = cfg.initial_data(&grid)?;
    let (gamma, _) = resolve_gamma(cfg, &omega0)?;
    let mut result = SweepResult { entries: Vec::new(), rate: None, gamma, failure: None };
    if cfg.nu_list.is_empty() {
        return Ok(result);
    }
    let step = cfg.step_config();
    let euler = match solve_euler(&omega0, cfg.t_end, &step) {
        Ok(t) => t,
        Err(e) => {
            result.failure = Some(format!("Euler: {e}"));
            return Ok(result);
        }
    };
    for &nu in &cfg.nu_list {
        info!("sweep: nu = {nu}");
        let params = cfg.phys(nu, gamma);
        let np = NormParams::new(params, cfg.mu_samples)?;
        let run = solve_navier_stokes(&omega0, cfg.t_end, &params, &step).and_then(|traj| {
            let mut error_series = Vec::new();
            for (a, b) in traj.snapshots.iter().zip(&euler.snapshots) {
                error_series.push((a.t, l2_distance(&a.u, &b.u)?));
            }
            let mut norm_series = Vec::new();
            for s in traj.snapshots.iter().filter(|s| s.t <= np.t_max()) {
                norm_series.push((s.t, cumulative_norm(&s.omega, s.t, &np)?.triple));
            }
            Ok(SweepEntry {
                nu,
                error: error_series.iter().map(|e| e.1).fold(0.0, f64::max),
                kato: kato_dissipation(&traj, cfg.kato_c, nu)?,
                max_noslip: traj.max_noslip(),
                max_energy_increase: max_energy_increase(&traj),
                error_series,
                norm_series,
            })
        });
        match run {
            Ok(entry) => result.entries.push(entry),
            Err(e) => {
                result.failure = Some(format!("nu = {nu}: {e}"));
                break;
            }
        }
    }
    let tail: Vec<(f64, f64)> = result
        .entries
        .iter()
        .rev()
        .take(RATE_FIT_POINTS)
        .map(|e| (e.nu, e.error))
        .collect();
    if result.failure.is_none() {
        result.rate = loglog_slope(&tail);
    }
    Ok(result)
}

/// Writes the sweep tables, manifest and summary.
pub fn emit_sweep_report(cfg: &ExperimentConfig, config_text: &str, result: &SweepResult, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("sweep", cfg, config_text);
    manifest.add_grid(&*cfg.grid()?);
    manifest.derived.insert("gamma".into(), result.gamma);
    if let Some(p) = result.rate {
        manifest.derived.insert("rate".into(), p);
    }
    if let Some(f) = &result.failure {
        manifest.status = format!("partial: {f}");
    }
    if !result.entries.is_empty() {
        let mut e = csv_row(&["nu".into(), "error".into(), "max_noslip_relative".into()]);
        let mut k = csv_row(&["nu".into(), "kato".into()]);
        let mut series = csv_row(&["nu".into(), "t".into(), "error".into()]);
        let mut norms = csv_row(&["nu".into(), "t".into(), "triple".into()]);
        for en in &result.entries {
            e += &csv_row(&[fmt_f64(en.nu), fmt_f64(en.error), fmt_f64(en.max_noslip)]);
            k += &csv_row(&[fmt_f64(en.nu), fmt_f64(en.kato)]);
            for (t, v) in &en.error_series {
                series += &csv_row(&[fmt_f64(en.nu), fmt_f64(*t), fmt_f64(*v)]);
            }
            for (t, v) in &en.norm_series {
                norms += &csv_row(&[fmt_f64(en.nu), fmt_f64(*t), fmt_f64(*v)]);
            }
        }
        emit(out, "error_vs_nu.csv", &e, &mut manifest)?;
        emit(out, "kato_vs_nu.csv", &k, &mut manifest)?;
        emit(out, "error_series.csv", &series, &mut manifest)?;
        emit(out, "norm_series.csv", &norms, &mut manifest)?;
    }
    let mut summary = format!("sweep: preset {} T {} dt {}\n", cfg.preset, cfg.t_end, cfg.dt);
    for en in &result.entries {
        let _ = writeln!(summary, "nu {:e}: E {:e} Kato {:e}", en.nu, en.error, en.kato);
    }
    match result.rate {
        Some(p) => {
            let _ = writeln!(summary, "fitted rate p = {p:.4}");
        }
        None => summary.push_str("fitted rate unavailable\n"),
    }
    let _ = writeln!(summary, "E decreasing: {}; Kato decreasing: {}", result.error_decreasing(), result.kato_decreasing());
    if let Some(f) = &result.failure {
        let _ = writeln!(summary, "FAILED: {f}");
    }
    finish(out, manifest, &summary)
}

/// Norm-tracking run over `[0, mu0 / (2 gamma)]`.
#[derive(Debug, Clone, Serialize)]
pub struct NormTracking {
    pub gamma: f64,
    pub t_end: f64,
    pub dt: f64,
    pub reports: Vec<NormReport>,
    /// `max_t |||omega(t)|||_t / |||omega_0|||_0`
    pub ratio: f64,
    pub flagged: bool,
}

pub fn run_norm_tracking_experiment(cfg: &ExperimentConfig) -> Result<NormTracking> {
    let grid = cfg.grid()?;
    let omega0 = cfg.initial_data(&grid)?;
    let (gamma, r0) = resolve_gamma(cfg, &omega0)?;
    let params = cfg.phys(cfg.nu, gamma);
    let np = NormParams::new(params, cfg.mu_samples)?;
    let t_end = np.t_max().min(1.0);
    let target = cfg.dt.min(0.1 * t_end);
    let steps = (t_end / target).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let step = StepConfig { dt, snapshot_every: (steps / 10).max(1), ..cfg.step_config() };
    let traj = solve_navier_stokes(&omega0, t_end, &params, &step)?;
    let mut reports = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        reports.push(if s.t == 0.0 { r0.clone() } else { cumulative_norm(&s.omega, s.t.min(t_end), &np)? });
    }
    let base = r0.triple;
    let ratio = if base == 0.0 { 0.0 } else { reports.iter().map(|r| r.triple / base).fold(0.0, f64::max) };
    Ok(NormTracking { gamma, t_end, dt, reports, ratio, flagged: ratio > cfg.ratio_bound })
}

fn norm_table_csv(reports: &[NormReport]) -> String {
    let mut s = csv_row(
        &["t", "mu", "x_mu", "x_horizontal", "x_vertical", "x_combined", "y_mu", "y_combined", "s_mu"].map(String::from),
    );
    for r in reports {
        for row in &r.table {
            s += &csv_row(&[
                fmt_f64(r.t),
                fmt_f64(row.mu),
                fmt_f64(row.x_mu),
                fmt_f64(row.x_horizontal),
                fmt_f64(row.x_vertical),
                fmt_f64(row.x_combined),
                fmt_f64(row.y_mu),
                fmt_f64(row.y_combined),
                fmt_f64(row.s_mu),
            ]);
        }
    }
    s
}

fn norm_series_csv(reports: &[NormReport], base: f64) -> String {
    let mut s = csv_row(&["t", "X_t", "Y_t", "Z", "S", "Z_phi", "triple", "ratio", "spectral_decay"].map(String::from));
    for r in reports {
        let ratio = if base == 0.0 { 0.0 } else { r.triple / base };
        let decay = r.spectral_decay.map(fmt_f64).unwrap_or_else(|| "nan".into());
        s += &csv_row(&[
            fmt_f64(r.t),
            fmt_f64(r.x_t),
            fmt_f64(r.y_t),
            fmt_f64(r.z),
            fmt_f64(r.s),
            fmt_f64(r.z_phi),
            fmt_f64(r.triple),
            fmt_f64(ratio),
            decay,
        ]);
    }
    s
}

pub fn emit_norm_tracking_report(cfg: &ExperimentConfig, config_text: &str, nt: &NormTracking, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("norms", cfg, config_text);
    manifest.add_grid(&*cfg.grid()?);
    manifest.derived.insert("gamma".into(), nt.gamma);
    manifest.derived.insert("T_norm".into(), nt.t_end);
    manifest.derived.insert("dt_norm".into(), nt.dt);
    manifest.derived.insert("max_ratio".into(), nt.ratio);
    let base = nt.reports.first().map(|r| r.triple).unwrap_or(0.0);
    emit(out, "norm_series.csv", &norm_series_csv(&nt.reports, base), &mut manifest)?;
    emit(out, "norm_table.csv", &norm_table_csv(&nt.reports), &mut manifest)?;
    let summary = format!(
        "norm tracking: preset {} nu {} gamma {:e} T {:e} dt {:e}\nmax ratio {:.6} (bound {}){}\n",
        cfg.preset,
        cfg.nu,
        nt.gamma,
        nt.t_end,
        nt.dt,
        nt.ratio,
        cfg.ratio_bound,
        if nt.flagged { " EXCEEDED" } else { "" }
    );
    finish(out, manifest, &summary)
}

/// Norms of one dumped field at time `t`; writes JSON and the per-`mu` table.
pub fn run_norms_of_dump(cfg: &ExperimentConfig, config_text: &str, dump: &Path, t: f64, out: &Path) -> Result<NormReport> {
    let (f, _) = crate::dump::read_dump(dump)?;
    let (gamma, _) = match cfg.gamma {
        Some(g) => (g, ()),
        None => (resolve_gamma(cfg, &f)?.0, ()),
    };
    let np = NormParams::new(cfg.phys(cfg.nu, gamma), cfg.mu_samples)?;
    let report = cumulative_norm(&f, t, &np)?;
    let mut manifest = Manifest::new("norms", cfg, config_text);
    manifest.derived.insert("gamma".into(), gamma);
    manifest.derived.insert("t".into(), t);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    emit(out, "norm_report.json", &json, &mut manifest)?;
    emit(out, "norm_table.csv", &norm_table_csv(std::slice::from_ref(&report)), &mut manifest)?;
    let summary = format!("norms of {} at t = {t}: triple {:e}\n", dump.display(), report.triple);
    finish(out, manifest, &summary)?;
    Ok(report)
}

/// `(z, zbar, G1, G2, H, R)` on the grid nodes for `(nu, kernel_t, kernel_xi)`.
pub fn tabulate_kernels(cfg: &ExperimentConfig) -> Result<String> {
    let grid = cfg.grid()?;
    let mut s = csv_row(&["z", "zbar", "G1", "G2", "H", "R"].map(String::from));
    for &z in grid.z() {
        for &zb in grid.z() {
            let q = KernelQuery::new(cfg.kernel_t, cfg.nu, cfg.kernel_xi, z, zb);
            s += &csv_row(&[
                fmt_f64(z),
                fmt_f64(zb),
                fmt_f64(robin_g1(&q)?),
                fmt_f64(heat_dirichlet(&q)?),
                fmt_f64(heat_neumann(&q)?),
                fmt_f64(robin_residual(&q)?),
            ]);
        }
    }
    Ok(s)
}

/// Residual-bound fits for `|xi| in {1, 4, 16}` at each viscosity of the run.
pub fn residual_fits(cfg: &ExperimentConfig) -> Result<Vec<ResidualFit>> {
    let mut nus = vec![cfg.nu];
    nus.extend(cfg.nu_list.iter().filter(|&&n| n != cfg.nu));
    let g = FitGrid::default();
    nus.iter().map(|&nu| fit_residual_bound(nu, &[1.0, 4.0, 16.0], &g)).collect()
}

pub fn run_kernels(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<()> {
    let mut manifest = Manifest::new("kernels", cfg, config_text);
    emit(out, "kernels.csv", &tabulate_kernels(cfg)?, &mut manifest)?;
    let fits = residual_fits(cfg)?;
    let mut s = csv_row(&["nu", "theta", "C", "C_floor"].map(String::from));
    for f in &fits {
        s += &csv_row(&[fmt_f64(f.nu), fmt_f64(f.theta), fmt_f64(f.c), fmt_f64(f.c_floor)]);
    }
    emit(out, "residual_fit.csv", &s, &mut manifest)?;
    let mut summary = format!("kernels: nu {} t {} |xi| {}\n", cfg.nu, cfg.kernel_t, cfg.kernel_xi);
    for f in &fits {
        let _ = writeln!(summary, "residual fit nu {:e}: theta {:.4} C {:.4}", f.nu, f.theta, f.c);
    }
    finish(out, manifest, &summary)
}
