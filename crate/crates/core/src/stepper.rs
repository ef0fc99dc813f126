//! Time integration: the mild (Duhamel) formulation for Navier-Stokes,
//! an RK4 reference integrator for Euler, and the Kato layer dissipation.

use std::sync::Arc;

use log::{debug, info};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biot_savart::{gradient_from_recovery, recover, Recovery};
use crate::error::{Error, Result};
use crate::field::{Grid, PhysParams, SpectralVectorField};
use crate::kernels::{StokesPropagator, TraceKernels};
use crate::nonlinear::{boundary_data_b, nonlinearity_with, Assembly, ProductPlan};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Fraction of `sum_xi int |omega_xi|^2` allowed in the top tenth of the box.
pub const TAIL_MASS_BOUND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub s_substeps: usize,
    pub tol_div: f64,
    pub snapshot_every: usize,
    pub noslip_tol: f64,
    /// Abort when the wall slip exceeds `noslip_tol * max|u|`.
    pub enforce_noslip: bool,
    /// Drop the nonlinearity (linear Stokes evolution).
    pub nonlinear: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            picard_tol: 1e-9,
            picard_max: 20,
            s_substeps: 4,
            tol_div: 1e-6,
            snapshot_every: 10,
            noslip_tol: 5e-3,
            enforce_noslip: true,
            nonlinear: true,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt > 0.0) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.picard_tol > 0.0 && self.picard_tol <= 1e-6) {
            return bad(format!("picard_tol = {} outside (0, 1e-6]", self.picard_tol));
        }
        if self.picard_max == 0 {
            return bad("picard_max must be positive".into());
        }
        if self.s_substeps < 2 {
            return bad(format!("s_substeps = {} < 2", self.s_substeps));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be positive".into());
        }
        if !(self.noslip_tol > 0.0) || !(self.tol_div > 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySnapshot {
    pub t: f64,
    pub omega: SpectralVectorField,
    pub u: SpectralVectorField,
    pub noslip_residual: f64,
    pub energy: f64,
}

/// Snapshots plus per-step diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<TrajectorySnapshot>,
    /// `(t, energy)` after every step, starting at `t = 0`.
    pub energy: Vec<(f64, f64)>,
    /// `(t, max_xi |u_h(0)| / max|u|)` after every step.
    pub noslip: Vec<(f64, f64)>,
    pub picard_iterations: Vec<usize>,
}

impl Trajectory {
    pub fn final_snapshot(&self) -> &TrajectorySnapshot {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    /// Largest relative wall slip over all steps.
    pub fn max_noslip(&self) -> f64 {
        self.noslip.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// `1/2 sum_xi int |u_xi|^2 dz`.
pub fn energy(u: &SpectralVectorField) -> f64 {
    0.5 * u.l2_norm_sq()
}

/// `max_xi |u_{h,xi}(0)|`.
pub fn noslip_residual(u: &SpectralVectorField) -> f64 {
    (0..u.grid().n_modes())
        .map(|m| {
            let a = u.profile(m, 0)[0];
            let b = u.profile(m, 1)[0];
            (a.norm_sqr() + b.norm_sqr()).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Share of `sum_xi int |omega_xi|^2 dz` carried by `z >= 0.9 Z_max`.
pub fn tail_mass_fraction(omega: &SpectralVectorField) -> f64 {
    let grid = omega.grid();
    let cut = 0.9 * grid.z_max();
    let w = grid.quad_weights();
    let (mut tail, mut total) = (0.0, 0.0);
    for m in 0..grid.n_modes() {
        for c in 0..3 {
            for ((v, &z), &wj) in omega.profile(m, c).iter().zip(grid.z()).zip(w) {
                let a = v.norm_sqr() * wj;
                total += a;
                if z >= cut {
                    tail += a;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

fn check_tail(omega: &SpectralVectorField) -> Result<()> {
    let f = tail_mass_fraction(omega);
    if f > TAIL_MASS_BOUND {
        return Err(Error::TailMass { fraction: f, bound: TAIL_MASS_BOUND });
    }
    Ok(())
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end >= 0.0) || t_end > 1.0 {
        return Err(Error::TimeOutOfRange { t: t_end, t_max: 1.0 });
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::InvalidArgument(format!("T = {t_end} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

fn rel_change(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.raw().iter().zip(b.raw()) {
        num += (x - y).norm_sqr();
        den += x.norm_sqr();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Precomputed operators for fixed `(grid, nu, dt)`.
#[derive(Debug, Clone)]
pub struct NavierStokesStepper {
    grid: Arc<Grid>,
    cfg: StepConfig,
    plan: ProductPlan,
    full: StokesPropagator,
    /// `(G(dt - s_m), weight of N_t, weight of N_{t+dt})`.
    substeps: Vec<(StokesPropagator, f64, f64)>,
    traces: TraceKernels,
}

/// Nonlinear state carried between steps.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub n: SpectralVectorField,
    pub b: Vec<[Complex64; 3]>,
    pub rec: Recovery,
}

impl NavierStokesStepper {
    pub fn new(grid: Arc<Grid>, params: PhysParams, cfg: StepConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let dt = cfg.dt;
        let s = cfg.s_substeps;
        let full = StokesPropagator::new(&grid, params.nu, dt)?;
        let substeps = (0..s)
            .map(|m| {
                let sm = (m as f64 + 0.5) * dt / s as f64;
                let w = dt / s as f64;
                Ok((StokesPropagator::new(&grid, params.nu, dt - sm)?, w * (1.0 - sm / dt), w * sm / dt))
            })
            .collect::<Result<Vec<_>>>()?;
        let traces = TraceKernels::new(&grid, params.nu, dt)?;
        Ok(Self { plan: ProductPlan::new(grid.k()), grid, cfg, full, substeps, traces })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn forcing(&self, omega: &SpectralVectorField) -> Result<Forcing> {
        let rec = recover(omega)?;
        let (n, b) = if self.cfg.nonlinear {
            let n = nonlinearity_with(&self.plan, omega, &rec, Assembly::Conormal)?;
            let b = boundary_data_b(omega, &n)?;
            (n, b)
        } else {
            (SpectralVectorField::zeros(self.grid.clone()), vec![[ZERO; 3]; self.grid.n_modes()])
        };
        Ok(Forcing { n, b, rec })
    }

    /// `G(dt) omega + sum_m w_m G(tau_m) N - trace(B)`, where the N and B
    /// weights select the start or end of the step.
    fn duhamel_terms(
        &self,
        omega: Option<&SpectralVectorField>,
        forcing: &Forcing,
        at_start: bool,
    ) -> SpectralVectorField {
        let grid = &self.grid;
        let nz = grid.nz();
        let ops = grid.ops();
        SpectralVectorField::from_modes(grid.clone(), |mi, xi, out| {
            let spline = |w: &[Complex64]| -> Vec<Complex64> {
                let mut m = Vec::with_capacity(3 * nz);
                for c in 0..3 {
                    m.extend(ops.spline_second_derivatives(&w[c * nz..(c + 1) * nz]));
                }
                m
            };
            if let Some(om) = omega {
                let w = om.mode_data(mi);
                self.full.apply_mode_add(mi, xi, w, &spline(w), 1.0, out);
            }
            if self.cfg.nonlinear {
                let nw = forcing.n.mode_data(mi);
                let nm = spline(nw);
                for (g, w_start, w_end) in &self.substeps {
                    let wt = if at_start { *w_start } else { *w_end };
                    g.apply_mode_add(mi, xi, nw, &nm, wt, out);
                }
                let b = forcing.b[mi];
                let (bs, be) = if at_start { (b, [ZERO; 3]) } else { ([ZERO; 3], b) };
                self.traces.apply_mode_sub(mi, xi, bs, be, out);
            }
        })
    }

    /// One step from `omega_t` with its forcing; returns `omega(t + dt)`,
    /// its forcing and the number of Picard iterations.
    pub fn step(&self, omega_t: &SpectralVectorField, forcing_t: &Forcing) -> Result<(SpectralVectorField, Forcing, usize)> {
        let base = self.duhamel_terms(Some(omega_t), forcing_t, true);
        let mut current = self.full.apply(omega_t);
        current.symmetrize();
        if !self.cfg.nonlinear {
            let f = self.forcing(&base)?;
            return Ok((base, f, 0));
        }
        let mut last_update = f64::INFINITY;
        for it in 1..=self.cfg.picard_max {
            let f = self.forcing(&current)?;
            let mut next = self.duhamel_terms(None, &f, false);
            next.axpy(1.0, &base)?;
            next.symmetrize();
            if !next.is_finite() {
                return Err(Error::NonFinite("Picard iterate"));
            }
            last_update = rel_change(&next, &current);
            current = next;
            if last_update < self.cfg.picard_tol {
                // the forcing of the previous iterate is within picard_tol
                let f = Forcing { rec: recover(&current)?, ..f };
                return Ok((current, f, it));
            }
        }
        Err(Error::PicardDiverged { iterations: self.cfg.picard_max, update: last_update })
    }
}

/// Single mild-formulation step from scratch (builds all operators).
pub fn duhamel_step(
    omega_t: &SpectralVectorField,
    params: &PhysParams,
    cfg: &StepConfig,
) -> Result<SpectralVectorField> {
    let stepper = NavierStokesStepper::new(omega_t.grid().clone(), *params, *cfg)?;
    let f = stepper.forcing(omega_t)?;
    Ok(stepper.step(omega_t, &f)?.0)
}

fn snapshot(t: f64, omega: &SpectralVectorField, rec: &Recovery) -> TrajectorySnapshot {
    TrajectorySnapshot {
        t,
        omega: omega.clone(),
        u: rec.u.clone(),
        noslip_residual: noslip_residual(&rec.u),
        energy: energy(&rec.u),
    }
}

fn relative_slip(u: &SpectralVectorField) -> f64 {
    let scale = u.max_abs();
    if scale == 0.0 {
        0.0
    } else {
        noslip_residual(u) / scale
    }
}

pub fn solve_navier_stokes(
    omega0: &SpectralVectorField,
    t_end: f64,
    params: &PhysParams,
    cfg: &StepConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    params.validate()?;
    let steps = step_count(t_end, cfg.dt)?;
    let mut omega = omega0.clone();
    omega.check_reality(1e-9)?;
    omega.symmetrize();
    let mut traj = Trajectory::default();
    let rec0 = recover(&omega)?;
    traj.snapshots.push(snapshot(0.0, &omega, &rec0));
    traj.energy.push((0.0, energy(&rec0.u)));
    traj.noslip.push((0.0, relative_slip(&rec0.u)));
    if steps == 0 {
        return Ok(traj);
    }
    let stepper = NavierStokesStepper::new(omega.grid().clone(), *params, *cfg)?;
    let mut forcing = stepper.forcing(&omega)?;
    for n in 1..=steps {
        let t = n as f64 * cfg.dt;
        let (next, f, its) = stepper.step(&omega, &forcing)?;
        omega = next;
        forcing = f;
        let u = &forcing.rec.u;
        let slip = relative_slip(u);
        traj.energy.push((t, energy(u)));
        traj.noslip.push((t, slip));
        traj.picard_iterations.push(its);
        debug!("NS step {n}/{steps} t={t:.4} picard={its} slip={slip:.3e}");
        if n % cfg.snapshot_every == 0 || n == steps {
            check_tail(&omega)?;
            if cfg.enforce_noslip && slip > cfg.noslip_tol {
                return Err(Error::NoSlipViolation { t, residual: slip, bound: cfg.noslip_tol });
            }
            traj.snapshots.push(snapshot(t, &omega, &forcing.rec));
        }
    }
    info!("NS run finished: {} steps, nu = {}", steps, params.nu);
    Ok(traj)
}

/// CFL number with vertical transport measured cell by cell and horizontal
/// transport against the smallest resolved wavelength.
fn local_cfl(u: &SpectralVectorField, dt: f64) -> f64 {
    let grid = u.grid();
    let nz = grid.nz();
    let h = grid.ops().spacing();
    let k = grid.k() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..nz {
        let (mut uh, mut u3) = (0.0, 0.0);
        for m in 0..grid.n_modes() {
            uh += u.profile(m, 0)[j].norm().max(u.profile(m, 1)[j].norm());
            u3 += u.profile(m, 2)[j].norm();
        }
        let cell = if j + 1 < nz { h[j] } else { h[j - 1] };
        let cell = if j > 0 { cell.min(h[j - 1]) } else { cell };
        worst = worst.max(u3 * dt / cell + uh * k * dt);
    }
    worst
}

fn euler_rhs(plan: &ProductPlan, omega: &SpectralVectorField) -> Result<(SpectralVectorField, Recovery)> {
    let rec = recover(omega)?;
    let n = nonlinearity_with(plan, omega, &rec, Assembly::Conormal)?;
    Ok((n, rec))
}

/// RK4 for `omega_t = N(omega)` with the same spatial operators as the
/// viscous solver; the only wall condition is `u_3 = 0`.
pub fn solve_euler(omega0: &SpectralVectorField, t_end: f64, cfg: &StepConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let steps = step_count(t_end, cfg.dt)?;
    let dt = cfg.dt;
    let plan = ProductPlan::new(omega0.grid().k());
    let mut omega = omega0.clone();
    omega.check_reality(1e-9)?;
    omega.symmetrize();
    let mut traj = Trajectory::default();
    let (mut k1, mut rec) = euler_rhs(&plan, &omega)?;
    traj.snapshots.push(snapshot(0.0, &omega, &rec));
    traj.energy.push((0.0, energy(&rec.u)));
    traj.noslip.push((0.0, relative_slip(&rec.u)));
    for n in 1..=steps {
        let t = n as f64 * dt;
        let cfl = local_cfl(&rec.u, dt);
        if cfl > 1.0 {
            return Err(Error::Cfl { t: t - dt, cfl, suggested_dt: dt / cfl });
        }
        let stage = |base: &SpectralVectorField, k: &SpectralVectorField, a: f64| -> Result<SpectralVectorField> {
            let mut s = base.clone();
            s.axpy(a, k)?;
            Ok(s)
        };
        let (k2, _) = euler_rhs(&plan, &stage(&omega, &k1, 0.5 * dt)?)?;
        let (k3, _) = euler_rhs(&plan, &stage(&omega, &k2, 0.5 * dt)?)?;
        let (k4, _) = euler_rhs(&plan, &stage(&omega, &k3, dt)?)?;
        let mut next = omega.clone();
        next.raw_mut()
            .par_iter_mut()
            .zip(k1.raw().par_iter())
            .zip(k2.raw().par_iter())
            .zip(k3.raw().par_iter())
            .zip(k4.raw().par_iter())
            .for_each(|((((o, a), b), c), d)| *o += (a + b * 2.0 + c * 2.0 + d) * (dt / 6.0));
        next.symmetrize();
        if !next.is_finite() {
            return Err(Error::NonFinite("Euler state"));
        }
        omega = next;
        let (k, r) = euler_rhs(&plan, &omega)?;
        k1 = k;
        rec = r;
        traj.energy.push((t, energy(&rec.u)));
        traj.noslip.push((t, relative_slip(&rec.u)));
        if n % cfg.snapshot_every == 0 || n == steps {
            traj.snapshots.push(snapshot(t, &omega, &rec));
        }
    }
    Ok(traj)
}

/// `sum_xi int_0^{z_top} sum_ij |d_j u_{i,xi}|^2 dz` for one vorticity.
pub fn layer_dissipation(omega: &SpectralVectorField, z_top: f64) -> Result<f64> {
    let grid = omega.grid().clone();
    if z_top < grid.z()[1] {
        return Err(Error::InvalidGrid(format!(
            "layer height {z_top:.3e} is below the first mesh node {:.3e}; refine the grid",
            grid.z()[1]
        )));
    }
    let rec = recover(omega)?;
    let g = gradient_from_recovery(&rec);
    let ops = grid.ops();
    let per_mode: Vec<f64> = (0..grid.n_modes())
        .into_par_iter()
        .map(|m| {
            let mut dens = vec![ZERO; grid.nz()];
            for d in &g.d {
                for i in 0..3 {
                    for (acc, v) in dens.iter_mut().zip(d.profile(m, i)) {
                        acc.re += v.norm_sqr();
                    }
                }
            }
            let mm = ops.spline_second_derivatives(&dens);
            ops.spline_integral_between(0.0, z_top, &dens, &mm).re
        })
        .collect();
    Ok(per_mode.iter().sum())
}

/// `nu int_0^T int_{z <= c nu} |grad u|^2`, trapezoid over the snapshots.
pub fn kato_dissipation(traj: &Trajectory, c: f64, nu: f64) -> Result<f64> {
    if traj.snapshots.len() < 2 {
        return Err(Error::InvalidArgument("Kato integral needs at least two snapshots".into()));
    }
    let z_top = c * nu;
    let vals = traj
        .snapshots
        .iter()
        .map(|s| layer_dissipation(&s.omega, z_top))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (w, s) in vals.windows(2).zip(traj.snapshots.windows(2)) {
        total += 0.5 * (w[0] + w[1]) * (s[1].t - s[0].t);
    }
    Ok(nu * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_grid, make_initial_data, InitialSpec, Preset};

    fn grid(k: usize, nz: usize) -> Arc<Grid> {
        Arc::new(make_grid(k, nz, 4.0, 1e-2, 0.5).unwrap())
    }

    #[test]
    fn config_validation() {
        let mut c = StepConfig::default();
        c.validate().unwrap();
        c.picard_tol = 1e-3;
        assert!(c.validate().is_err());
        let mut c = StepConfig::default();
        c.s_substeps = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid(2, 48);
        let cfg = StepConfig { snapshot_every: 5, ..Default::default() };
        let traj = solve_navier_stokes(&SpectralVectorField::zeros(g), 0.01, &PhysParams::default(), &cfg).unwrap();
        assert!(traj.snapshots.iter().all(|s| s.omega.max_abs() == 0.0));
        assert_eq!(traj.snapshots.len(), 3);
    }

    #[test]
    fn zero_time_gives_initial_state() {
        let g = grid(2, 48);
        let w = make_initial_data(&InitialSpec { preset: Preset::CrossRoll, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let traj = solve_navier_stokes(&w, 0.0, &PhysParams::default(), &StepConfig::default()).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0].omega.raw(), w.raw());
    }

    #[test]
    fn euler_keeps_shear_steady() {
        let g = grid(2, 64);
        let w = make_initial_data(&InitialSpec { preset: Preset::Shear, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let traj = solve_euler(&w, 0.02, &StepConfig { snapshot_every: 20, ..Default::default() }).unwrap();
        let d = traj.final_snapshot().omega.sub(&w).unwrap().max_abs();
        assert!(d <= 1e-10 * w.max_abs());
    }

    #[test]
    fn kato_of_rest_is_zero() {
        let g = grid(2, 64);
        let traj = solve_euler(&SpectralVectorField::zeros(g), 0.002, &StepConfig { snapshot_every: 1, ..Default::default() }).unwrap();
        assert_eq!(kato_dissipation(&traj, 5.0, 1e-2).unwrap(), 0.0);
    }

    #[test]
    fn kato_rejects_unresolved_layer() {
        let g = grid(2, 32);
        let traj = solve_euler(&SpectralVectorField::zeros(g), 0.002, &StepConfig { snapshot_every: 1, ..Default::default() }).unwrap();
        assert!(kato_dissipation(&traj, 1.0, 1e-6).is_err());
    }
}
